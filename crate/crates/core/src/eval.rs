//! Checkpoint evaluation: primary metrics from the primary heads,
//! leakage via probes on the extracted embeddings, and the cheap
//! probe-free leakage proxy (the auxiliary heads themselves) used for
//! per-epoch validation during training.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::{
    accuracy, argmax_rows, disentanglement_score, ConfusionMatrix, MetricsReport,
};
use crate::model::Model;
use crate::probe::{train_probe, ProbeConfig};
use crate::synth::{batch_clips, Clip};
use crate::tape::Tape;
use crate::tensor::DenseArray;

/// Everything a forward sweep over a split produces.
pub struct SplitOutputs {
    pub e_true: Vec<usize>,
    pub s_true: Vec<usize>,
    pub e_pred: Vec<usize>,
    pub s_pred: Vec<usize>,
    /// Predictions of the auxiliary heads (leakage proxy).
    pub e_aux_pred: Vec<usize>,
    pub s_aux_pred: Vec<usize>,
    /// `[M, emotion_emb_dim]`.
    pub emotion_embs: DenseArray,
    /// `[M, speaker_emb_dim]`.
    pub speaker_embs: DenseArray,
}

/// Run the model over a split in deterministic fixed-size batches.
pub fn forward_split(
    model: &Model,
    clips: &[&Clip],
    pad_value: f64,
    batch_size: usize,
) -> Result<SplitOutputs> {
    if clips.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let batch_size = batch_size.max(1);
    let mut e_true = Vec::new();
    let mut s_true = Vec::new();
    let mut e_pred = Vec::new();
    let mut s_pred = Vec::new();
    let mut e_aux_pred = Vec::new();
    let mut s_aux_pred = Vec::new();
    let mut emotion_rows = Vec::new();
    let mut speaker_rows = Vec::new();

    for chunk in clips.chunks(batch_size) {
        let batch = batch_clips(chunk, pad_value, model.cfg.d_audio, model.cfg.d_video)?;
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch, None)?;
        e_pred.extend(argmax_rows(tape.value(fwd.nodes.e_prim)));
        s_pred.extend(argmax_rows(tape.value(fwd.nodes.s_prim)));
        e_aux_pred.extend(argmax_rows(tape.value(fwd.nodes.e_aux)));
        s_aux_pred.extend(argmax_rows(tape.value(fwd.nodes.s_aux)));
        emotion_rows.extend_from_slice(tape.value(fwd.nodes.emotion_emb).data());
        speaker_rows.extend_from_slice(tape.value(fwd.nodes.speaker_emb).data());
        e_true.extend_from_slice(&batch.e_target);
        s_true.extend_from_slice(&batch.s_target);
    }

    let m = clips.len();
    Ok(SplitOutputs {
        e_true,
        s_true,
        e_pred,
        s_pred,
        e_aux_pred,
        s_aux_pred,
        emotion_embs: DenseArray::from_vec(&[m, model.cfg.emotion_emb_dim], emotion_rows)?,
        speaker_embs: DenseArray::from_vec(&[m, model.cfg.speaker_emb_dim], speaker_rows)?,
    })
}

/// Per-epoch validation summary: primary metrics plus the probe-free
/// leakage proxy read straight off the auxiliary heads.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochEval {
    pub emotion: MetricsReport,
    pub speaker: MetricsReport,
    /// Macro-F of the aux head predicting emotion from the speaker embedding.
    pub aux_emotion_from_speaker_f: f64,
    /// Accuracy of the aux head predicting speaker from the emotion embedding.
    pub aux_speaker_from_emotion_acc: f64,
    /// Mean of the two proxy leakage numbers; lower is better.
    pub aux_leakage: f64,
}

pub fn validation_scores(
    model: &Model,
    clips: &[&Clip],
    pad_value: f64,
    batch_size: usize,
) -> Result<EpochEval> {
    let out = forward_split(model, clips, pad_value, batch_size)?;
    let e = model.cfg.emotion_classes;
    let s = model.cfg.speakers;
    let emotion =
        MetricsReport::from_confusion(&ConfusionMatrix::from_pairs(&out.e_true, &out.e_pred, e)?);
    let speaker =
        MetricsReport::from_confusion(&ConfusionMatrix::from_pairs(&out.s_true, &out.s_pred, s)?);
    let aux_f =
        crate::metrics::macro_f1(&ConfusionMatrix::from_pairs(&out.e_true, &out.e_aux_pred, e)?);
    let aux_acc = accuracy(&ConfusionMatrix::from_pairs(&out.s_true, &out.s_aux_pred, s)?);
    Ok(EpochEval {
        emotion,
        speaker,
        aux_emotion_from_speaker_f: aux_f,
        aux_speaker_from_emotion_acc: aux_acc,
        aux_leakage: 0.5 * (aux_f + aux_acc),
    })
}

/// Full evaluation report for one checkpoint on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub emotion: MetricsReport,
    pub speaker: MetricsReport,
    /// Probe trained to predict emotion from the speaker embedding.
    pub leak_emotion_from_speaker: MetricsReport,
    /// Probe trained to predict speaker from the emotion embedding.
    pub leak_speaker_from_emotion: MetricsReport,
    /// Mean of leakage macro-F and leakage accuracy; lower is better.
    pub disentanglement: f64,
    /// Primary emotion predictions (for paired significance tests).
    pub emotion_predictions: Vec<usize>,
    pub emotion_truth: Vec<usize>,
}

/// Forward the split, compute primary metrics, train both probes on the
/// extracted embeddings and combine their leakage into the
/// disentanglement score. Never mutates the model.
pub fn evaluate_model(
    model: &Model,
    clips: &[&Clip],
    pad_value: f64,
    batch_size: usize,
    probe_cfg: &ProbeConfig,
) -> Result<EvalReport> {
    let out = forward_split(model, clips, pad_value, batch_size)?;
    let e = model.cfg.emotion_classes;
    let s = model.cfg.speakers;
    let emotion =
        MetricsReport::from_confusion(&ConfusionMatrix::from_pairs(&out.e_true, &out.e_pred, e)?);
    let speaker =
        MetricsReport::from_confusion(&ConfusionMatrix::from_pairs(&out.s_true, &out.s_pred, s)?);

    let leak_emotion_from_speaker = train_probe(&out.speaker_embs, &out.e_true, e, probe_cfg)?;
    let leak_speaker_from_emotion = train_probe(&out.emotion_embs, &out.s_true, s, probe_cfg)?;
    let mut leak_e = leak_emotion_from_speaker;
    let mut leak_s = leak_speaker_from_emotion;
    let score = disentanglement_score(&leak_e, &leak_s);
    leak_e.disentanglement_score = Some(score);
    leak_s.disentanglement_score = Some(score);

    Ok(EvalReport {
        emotion,
        speaker,
        leak_emotion_from_speaker: leak_e,
        leak_speaker_from_emotion: leak_s,
        disentanglement: score,
        emotion_predictions: out.e_pred,
        emotion_truth: out.e_true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use crate::synth::{generate, Split, SyntheticSpec};

    fn small_setup() -> (Model, crate::synth::Dataset) {
        let spec = SyntheticSpec {
            speakers: 4,
            clips_per_speaker: 15,
            d_audio: 4,
            d_video: 3,
            n_min: 1,
            n_max: 3,
            noise_sigma: 0.3,
            ..SyntheticSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let cfg = ModelConfig {
            d_audio: 4,
            d_video: 3,
            audio_widths: alloc::vec![6],
            video_widths: alloc::vec![6],
            emotion_emb_dim: 8,
            speaker_emb_dim: 8,
            emotion_classes: 5,
            speakers: 4,
            aux_hidden: alloc::vec![],
        };
        (build_model(&cfg, 42).unwrap(), ds)
    }

    #[test]
    fn report_fields_populated_and_bounded() {
        let (model, ds) = small_setup();
        let clips = ds.split(Split::Validation);
        let probe_cfg = ProbeConfig {
            epochs: 10,
            ..ProbeConfig::default()
        };
        let report = evaluate_model(&model, &clips, 0.0, 16, &probe_cfg).unwrap();
        for v in [
            report.emotion.macro_f,
            report.emotion.accuracy,
            report.speaker.accuracy,
            report.leak_emotion_from_speaker.macro_f,
            report.leak_speaker_from_emotion.accuracy,
            report.disentanglement,
        ] {
            assert!((0.0..=1.0).contains(&v), "value {v} out of range");
        }
        assert_eq!(report.emotion_predictions.len(), clips.len());
        assert!(report.leak_emotion_from_speaker.disentanglement_score.is_some());
    }

    #[test]
    fn evaluation_never_mutates_the_model() {
        let (model, ds) = small_setup();
        let clips = ds.split(Split::Test);
        let before = model.store.snapshot();
        let probe_cfg = ProbeConfig {
            epochs: 5,
            ..ProbeConfig::default()
        };
        let _ = evaluate_model(&model, &clips, 0.0, 8, &probe_cfg).unwrap();
        assert_eq!(model.store.snapshot(), before);
    }

    #[test]
    fn repeated_evaluation_is_identical() {
        let (model, ds) = small_setup();
        let clips = ds.split(Split::Test);
        let probe_cfg = ProbeConfig {
            epochs: 5,
            seed: 3,
            ..ProbeConfig::default()
        };
        let a = evaluate_model(&model, &clips, 0.0, 8, &probe_cfg).unwrap();
        let b = evaluate_model(&model, &clips, 0.0, 8, &probe_cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_model_scores_near_chance() {
        // Balanced speakers; an untrained head should sit around 1/S.
        let spec = SyntheticSpec {
            speakers: 4,
            clips_per_speaker: 50,
            rho: 0.0,
            d_audio: 4,
            d_video: 3,
            n_min: 2,
            n_max: 2,
            noise_sigma: 0.1,
            ..SyntheticSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let cfg = ModelConfig {
            d_audio: 4,
            d_video: 3,
            audio_widths: alloc::vec![6],
            video_widths: alloc::vec![6],
            emotion_emb_dim: 8,
            speaker_emb_dim: 8,
            emotion_classes: 5,
            speakers: 4,
            aux_hidden: alloc::vec![],
        };
        let mut accs = Vec::new();
        for seed in 0..3 {
            let model = build_model(&cfg, seed).unwrap();
            let clips = ds.split(Split::Train);
            let out = validation_scores(&model, &clips, 0.0, 32).unwrap();
            accs.push(out.speaker.accuracy);
        }
        accs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            (accs[1] - 0.25).abs() < 0.2,
            "untrained speaker accuracy median {}",
            accs[1]
        );
    }

    #[test]
    fn batch_size_does_not_change_results() {
        let (model, ds) = small_setup();
        let clips = ds.split(Split::Validation);
        let a = forward_split(&model, &clips, 0.0, 4).unwrap();
        let b = forward_split(&model, &clips, 0.0, 64).unwrap();
        assert_eq!(a.e_pred, b.e_pred);
        assert_eq!(a.s_pred, b.s_pred);
    }
}
