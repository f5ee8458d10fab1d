//! Experiment configuration: one TOML file with full-default fallback.
//!
//! Every knob of an experiment lives here; command-line flags only
//! override individual keys. The defaults are the standard entangled
//! benchmark (rho = 0.8, 20 speakers, 5 emotions, 40 clips per speaker)
//! with the desk-scale training settings the report pipeline was
//! calibrated on.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use detangle_core::loss::LossWeights;
use detangle_core::model::ModelConfig;
use detangle_core::nn::OptimConfig;
use detangle_core::probe::ProbeConfig;
use detangle_core::synth::SyntheticSpec;
use detangle_core::train::{Strategy, StrategyConfig};

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub paths: PathsSection,
    pub synthetic: SyntheticSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub probe: ProbeSection,
    pub report: ReportSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            paths: PathsSection::default(),
            synthetic: SyntheticSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            probe: ProbeSection::default(),
            report: ReportSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset.txt"),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub speakers: usize,
    pub emotion_classes: usize,
    pub clips_per_speaker: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub d_audio: usize,
    pub d_video: usize,
    pub rho: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            speakers: 20,
            emotion_classes: 5,
            clips_per_speaker: 40,
            n_min: 2,
            n_max: 6,
            d_audio: 12,
            d_video: 16,
            rho: 0.8,
            noise_sigma: 1.0,
            seed: 1,
        }
    }
}

impl SyntheticSection {
    pub fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            speakers: self.speakers,
            emotion_classes: self.emotion_classes,
            clips_per_speaker: self.clips_per_speaker,
            n_min: self.n_min,
            n_max: self.n_max,
            d_audio: self.d_audio,
            d_video: self.d_video,
            rho: self.rho,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub audio_widths: Vec<usize>,
    pub video_widths: Vec<usize>,
    pub emotion_emb_dim: usize,
    /// Speaker embedding dimensions to sweep over.
    pub speaker_emb_dims: Vec<usize>,
    pub aux_hidden: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            audio_widths: vec![48],
            video_widths: vec![48],
            emotion_emb_dim: 64,
            speaker_emb_dims: vec![64, 16, 8],
            aux_hidden: vec![],
        }
    }
}

impl ModelSection {
    /// Instantiate the model dims for one sweep cell; feature dims and
    /// label spaces come from the dataset header.
    pub fn to_model_config(
        &self,
        speaker_emb_dim: usize,
        d_audio: usize,
        d_video: usize,
        emotion_classes: usize,
        speakers: usize,
    ) -> ModelConfig {
        ModelConfig {
            d_audio,
            d_video,
            audio_widths: self.audio_widths.clone(),
            video_widths: self.video_widths.clone(),
            emotion_emb_dim: self.emotion_emb_dim,
            speaker_emb_dim,
            emotion_classes,
            speakers,
            aux_hidden: self.aux_hidden.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    pub epochs: u32,
    pub batch_size: usize,
    pub pad_value: f64,
    pub lr_primary: f64,
    pub lr_auxiliary: f64,
    pub gamma: f64,
    pub grl_lambda: f64,
    pub conf_weight: f64,
    pub alt_adv_weight: f64,
    pub w_em_prim: f64,
    pub w_spk_prim: f64,
    pub w_em_aux: f64,
    pub w_spk_aux: f64,
    /// Parallel sweep workers; files are identical at any worker count.
    pub workers: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.iter().map(|s| s.name().to_string()).collect(),
            seeds: vec![1, 2, 3],
            epochs: 40,
            batch_size: 32,
            pad_value: 0.0,
            lr_primary: 3e-3,
            lr_auxiliary: 5e-2,
            gamma: 0.95,
            grl_lambda: 1.5,
            conf_weight: 0.1,
            alt_adv_weight: 1.0,
            w_em_prim: 0.5,
            w_spk_prim: 0.5,
            w_em_aux: 0.1,
            w_spk_aux: 0.3,
            workers: 1,
        }
    }
}

impl TrainSection {
    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        self.strategies
            .iter()
            .map(|name| Strategy::from_name(name).map_err(CliError::from))
            .collect()
    }

    pub fn to_strategy_config(&self, strategy: Strategy, seed: u64) -> StrategyConfig {
        StrategyConfig {
            strategy,
            weights: LossWeights {
                w_em_prim: self.w_em_prim,
                w_spk_prim: self.w_spk_prim,
                w_em_aux: self.w_em_aux,
                w_spk_aux: self.w_spk_aux,
            },
            grl_lambda: self.grl_lambda,
            conf_weight: self.conf_weight,
            alt_adv_weight: self.alt_adv_weight,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            optim: OptimConfig {
                lr_primary: self.lr_primary,
                lr_auxiliary: self.lr_auxiliary,
                gamma: self.gamma,
                ..OptimConfig::default()
            },
            pad_value: self.pad_value,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub hidden_dim: usize,
    pub epochs: u32,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            hidden_dim: p.hidden_dim,
            epochs: p.epochs,
            lr: p.lr,
            seed: p.seed,
        }
    }
}

impl ProbeSection {
    pub fn to_probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Significance level for the marginal homogeneity tests.
    pub alpha: f64,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { alpha: 0.01 }
    }
}

impl ExperimentConfig {
    /// Load a config file; a missing `--config` means full defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.to_spec().validate().map_err(CliError::from)?;
        let strategies = self.train.strategies()?;
        if strategies.is_empty() || self.train.seeds.is_empty() {
            return Err(CliError::config("sweep needs at least one strategy and one seed"));
        }
        if self.model.speaker_emb_dims.is_empty() {
            return Err(CliError::config("sweep needs at least one speaker_emb_dim"));
        }
        for &seed in &self.train.seeds {
            for &s in &strategies {
                self.train
                    .to_strategy_config(s, seed)
                    .validate()
                    .map_err(CliError::from)?;
            }
        }
        self.probe.to_probe_config().validate().map_err(CliError::from)?;
        if !(self.report.alpha > 0.0 && self.report.alpha < 1.0) {
            return Err(CliError::config("report.alpha must be in (0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_partial_override() {
        let text = "version = 1\n[synthetic]\nrho = 0.5\n[train]\nepochs = 7\n";
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.synthetic.rho, 0.5);
        assert_eq!(cfg.train.epochs, 7);
        // Unspecified keys keep their defaults.
        assert_eq!(cfg.synthetic.speakers, 20);
        assert_eq!(cfg.train.batch_size, 32);

        let dumped = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&dumped).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[synthetic]\nnot_a_knob = 3\n";
        assert!(toml::from_str::<ExperimentConfig>(text).is_err());
    }

    #[test]
    fn bad_strategy_name_is_config_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.strategies = vec!["WAT".into()];
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}
