//! The five training regimes and the epoch driver.
//!
//! * `STL`  - emotion only; the speaker head is frozen and its loss weight
//!   zeroed.
//! * `MTL`  - both primary tasks, no disentanglement.
//! * `GR`   - one combined backward pass of primary + auxiliary loss with
//!   gradient reversal between each embedding and its auxiliary head.
//! * `ALT`  - minimax alternation: the auxiliary heads descend their loss
//!   (everything else frozen), then the primary side descends
//!   `L_primary - beta * L_auxiliary` (auxiliary heads frozen). Adversary
//!   first, both phases on every minibatch.
//! * `CONF` - like the ALT adversary phase, then the primary side descends
//!   `L_primary + w * (confusion(e_aux) + confusion(s_aux))` with the
//!   auxiliary heads frozen, pushing their predictions toward uniform.
//!
//! Auxiliary-head parameters always update at the auxiliary learning
//! rate, everything else at the primary rate, both decayed per epoch.
//! Model selection: lowest validation leakage proxy for the
//! disentangling strategies, highest validation emotion macro-F for
//! STL/MTL (which have no disentanglement objective).

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::{forward_split, validation_scores, EpochEval};
use crate::loss::{self, LossWeights};
use crate::metrics::disentanglement_score;
use crate::model::{ClipBatch, Model};
use crate::nn::{AdamState, Checkpoint, LrKind, OptimConfig, ParamGroup};
use crate::probe::{train_probe, ProbeConfig};
use crate::rng;
use crate::synth::{batch_clips, Clip};
use crate::tape::Tape;

const PRIMARY_GROUPS: [ParamGroup; 3] = [
    ParamGroup::Trunk,
    ParamGroup::EmotionHead,
    ParamGroup::SpeakerHead,
];
const AUX_GROUPS: [ParamGroup; 2] = [ParamGroup::EmotionAux, ParamGroup::SpeakerAux];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Stl,
    Mtl,
    Gr,
    Alt,
    Conf,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Stl,
        Strategy::Mtl,
        Strategy::Gr,
        Strategy::Alt,
        Strategy::Conf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Stl => "STL",
            Strategy::Mtl => "MTL",
            Strategy::Gr => "GR",
            Strategy::Alt => "ALT",
            Strategy::Conf => "CONF",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(alloc::format!("unknown strategy `{name}`")))
    }

    /// Whether training optimizes a disentanglement objective (and model
    /// selection therefore minimizes the leakage proxy).
    pub fn disentangles(self) -> bool {
        matches!(self, Strategy::Gr | Strategy::Alt | Strategy::Conf)
    }
}

/// Which training strategy runs and all its knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub weights: LossWeights,
    /// Gradient-reversal scale (GR only).
    pub grl_lambda: f64,
    /// Confusion-term weight (CONF only).
    pub conf_weight: f64,
    /// Adversarial weight beta in `L_primary - beta * L_auxiliary` (ALT only).
    pub alt_adv_weight: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: OptimConfig,
    /// Constant used to pad short clips.
    pub pad_value: f64,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            weights: LossWeights::default(),
            grl_lambda: 1.0,
            conf_weight: 0.3,
            alt_adv_weight: 0.3,
            epochs: 30,
            batch_size: 32,
            seed: 1,
            optim: OptimConfig::default(),
            pad_value: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optim.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        match self.strategy {
            Strategy::Gr if !(self.grl_lambda > 0.0) => Err(Error::Config(
                alloc::format!("GR needs grl_lambda > 0, got {}", self.grl_lambda),
            )),
            Strategy::Conf if !(self.conf_weight >= 0.0) => {
                Err(Error::Config("CONF needs conf_weight >= 0".into()))
            }
            Strategy::Alt if !(self.alt_adv_weight >= 0.0) => {
                Err(Error::Config("ALT needs alt_adv_weight >= 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// The minimax phases of ALT (and the CONF sub-steps).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AltPhase {
    Auxiliary,
    Primary,
}

/// One weighted composite: the total plus its weighted components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentPair {
    pub total: f64,
    pub weighted_emotion: f64,
    pub weighted_speaker: f64,
}

impl From<loss::CompositeLoss> for ComponentPair {
    fn from(c: loss::CompositeLoss) -> Self {
        Self {
            total: c.value,
            weighted_emotion: c.weighted_emotion,
            weighted_speaker: c.weighted_speaker,
        }
    }
}

/// What one optimizer step saw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub primary: ComponentPair,
    pub auxiliary: Option<ComponentPair>,
    /// CONF only: the weighted confusion term.
    pub confusion: Option<f64>,
}

/// A model being trained under one strategy; owns the optimizer state.
pub struct Trainer {
    pub model: Model,
    adam: AdamState,
    cfg: StrategyConfig,
    epoch: u32,
}

impl Trainer {
    pub fn new(model: Model, cfg: StrategyConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(&model.store);
        let mut trainer = Self {
            model,
            adam,
            cfg,
            epoch: 0,
        };
        if trainer.cfg.strategy == Strategy::Stl {
            // Single-task mode: the speaker task neither weighs on the
            // loss nor updates its head.
            trainer.cfg.weights.w_spk_prim = 0.0;
            trainer.model.store.freeze(&[ParamGroup::SpeakerHead]);
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.cfg
    }

    pub fn set_epoch(&mut self, epoch: u32) {
        self.epoch = epoch;
    }

    /// Dispatch one minibatch under the configured strategy.
    pub fn step(&mut self, batch: &ClipBatch) -> Result<LossReport> {
        match self.cfg.strategy {
            Strategy::Stl | Strategy::Mtl => self.step_mtl(batch),
            Strategy::Gr => self.step_gr(batch),
            Strategy::Alt => {
                // Adversary first, then the primary side, every minibatch.
                self.step_alt(batch, AltPhase::Auxiliary)?;
                self.step_alt(batch, AltPhase::Primary)
            }
            Strategy::Conf => self.step_conf(batch),
        }
    }

    /// Baseline step: descend the primary composite, auxiliary heads
    /// untouched.
    pub fn step_mtl(&mut self, batch: &ClipBatch) -> Result<LossReport> {
        let mut tape = Tape::new();
        let fwd = self.model.forward(&mut tape, batch, None)?;
        let primary = loss::primary_loss(&mut tape, &fwd.nodes, batch, &self.cfg.weights)?;
        tape.backward(primary.node)?;
        let grads = fwd.collect_grads(&tape);
        self.adam.step(
            &mut self.model.store,
            &PRIMARY_GROUPS,
            &grads,
            &self.cfg.optim,
            self.epoch,
            LrKind::Primary,
        )?;
        Ok(LossReport {
            primary: primary.into(),
            auxiliary: None,
            confusion: None,
        })
    }

    /// Gradient reversal: one combined backward pass. The auxiliary heads
    /// descend their own cross-entropy (the reversal sits upstream of
    /// them) while the trunk receives the sign-flipped, lambda-scaled
    /// auxiliary gradient.
    pub fn step_gr(&mut self, batch: &ClipBatch) -> Result<LossReport> {
        let mut tape = Tape::new();
        let fwd = self
            .model
            .forward(&mut tape, batch, Some(self.cfg.grl_lambda))?;
        let primary = loss::primary_loss(&mut tape, &fwd.nodes, batch, &self.cfg.weights)?;
        let auxiliary = loss::auxiliary_loss(&mut tape, &fwd.nodes, batch, &self.cfg.weights)?;
        let total = tape.add(primary.node, auxiliary.node)?;
        tape.backward(total)?;
        let grads = fwd.collect_grads(&tape);
        self.adam.step(
            &mut self.model.store,
            &PRIMARY_GROUPS,
            &grads,
            &self.cfg.optim,
            self.epoch,
            LrKind::Primary,
        )?;
        self.adam.step(
            &mut self.model.store,
            &AUX_GROUPS,
            &grads,
            &self.cfg.optim,
            self.epoch,
            LrKind::Auxiliary,
        )?;
        Ok(LossReport {
            primary: primary.into(),
            auxiliary: Some(auxiliary.into()),
            confusion: None,
        })
    }

    /// One minimax phase.
    pub fn step_alt(&mut self, batch: &ClipBatch, phase: AltPhase) -> Result<LossReport> {
        match phase {
            AltPhase::Auxiliary => self.adversary_step(batch),
            AltPhase::Primary => {
                let frozen_before: Vec<ParamGroup> = AUX_GROUPS
                    .iter()
                    .copied()
                    .filter(|&g| self.model.store.is_frozen(g))
                    .collect();
                self.model.store.freeze(&AUX_GROUPS);
                let result = (|| {
                    let mut tape = Tape::new();
                    let fwd = self.model.forward(&mut tape, batch, None)?;
                    let primary =
                        loss::primary_loss(&mut tape, &fwd.nodes, batch, &self.cfg.weights)?;
                    let auxiliary =
                        loss::auxiliary_loss(&mut tape, &fwd.nodes, batch, &self.cfg.weights)?;
                    let reversed = tape.scale(auxiliary.node, -self.cfg.alt_adv_weight);
                    let total = tape.add(primary.node, reversed)?;
                    tape.backward(total)?;
                    let grads = fwd.collect_grads(&tape);
                    self.adam.step(
                        &mut self.model.store,
                        &PRIMARY_GROUPS,
                        &grads,
                        &self.cfg.optim,
                        self.epoch,
                        LrKind::Primary,
                    )?;
                    Ok(LossReport {
                        primary: primary.into(),
                        auxiliary: Some(auxiliary.into()),
                        confusion: None,
                    })
                })();
                let to_unfreeze: Vec<ParamGroup> = AUX_GROUPS
                    .iter()
                    .copied()
                    .filter(|g| !frozen_before.contains(g))
                    .collect();
                self.model.store.unfreeze(&to_unfreeze);
                result
            }
        }
    }

    /// Adversary update shared by ALT and CONF: auxiliary heads descend
    /// `L_auxiliary`, everything else frozen.
    fn adversary_step(&mut self, batch: &ClipBatch) -> Result<LossReport> {
        let frozen_before: Vec<ParamGroup> = PRIMARY_GROUPS
            .iter()
            .copied()
            .filter(|&g| self.model.store.is_frozen(g))
            .collect();
        self.model.store.freeze(&PRIMARY_GROUPS);
        let result = (|| {
            let mut tape = Tape::new();
            let fwd = self.model.forward(&mut tape, batch, None)?;
            let primary = loss::primary_loss(&mut tape, &fwd.nodes, batch, &self.cfg.weights)?;
            let auxiliary = loss::auxiliary_loss(&mut tape, &fwd.nodes, batch, &self.cfg.weights)?;
            tape.backward(auxiliary.node)?;
            let grads = fwd.collect_grads(&tape);
            self.adam.step(
                &mut self.model.store,
                &AUX_GROUPS,
                &grads,
                &self.cfg.optim,
                self.epoch,
                LrKind::Auxiliary,
            )?;
            Ok(LossReport {
                primary: primary.into(),
                auxiliary: Some(auxiliary.into()),
                confusion: None,
            })
        })();
        let to_unfreeze: Vec<ParamGroup> = PRIMARY_GROUPS
            .iter()
            .copied()
            .filter(|g| !frozen_before.contains(g))
            .collect();
        self.model.store.unfreeze(&to_unfreeze);
        result
    }

    /// Confusion training: adversary sub-step, then the primary side
    /// descends `L_primary + w * (confusion(e_aux) + confusion(s_aux))`
    /// with the auxiliary heads frozen.
    pub fn step_conf(&mut self, batch: &ClipBatch) -> Result<LossReport> {
        self.adversary_step(batch)?;

        let frozen_before: Vec<ParamGroup> = AUX_GROUPS
            .iter()
            .copied()
            .filter(|&g| self.model.store.is_frozen(g))
            .collect();
        self.model.store.freeze(&AUX_GROUPS);
        let result = (|| {
            let mut tape = Tape::new();
            let fwd = self.model.forward(&mut tape, batch, None)?;
            let primary = loss::primary_loss(&mut tape, &fwd.nodes, batch, &self.cfg.weights)?;
            let auxiliary = loss::auxiliary_loss(&mut tape, &fwd.nodes, batch, &self.cfg.weights)?;
            let conf_e = loss::confusion_loss(&mut tape, fwd.nodes.e_aux)?;
            let conf_s = loss::confusion_loss(&mut tape, fwd.nodes.s_aux)?;
            let conf_sum = tape.add(conf_e.node, conf_s.node)?;
            let conf_term = tape.scale(conf_sum, self.cfg.conf_weight);
            let total = tape.add(primary.node, conf_term)?;
            tape.backward(total)?;
            let grads = fwd.collect_grads(&tape);
            self.adam.step(
                &mut self.model.store,
                &PRIMARY_GROUPS,
                &grads,
                &self.cfg.optim,
                self.epoch,
                LrKind::Primary,
            )?;
            Ok(LossReport {
                primary: primary.into(),
                auxiliary: Some(auxiliary.into()),
                confusion: Some(tape.value(conf_term).scalar_value()?),
            })
        })();
        let to_unfreeze: Vec<ParamGroup> = AUX_GROUPS
            .iter()
            .copied()
            .filter(|g| !frozen_before.contains(g))
            .collect();
        self.model.store.unfreeze(&to_unfreeze);
        result
    }
}

/// One completed epoch in the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    /// Mean primary loss over the epoch's minibatches.
    pub train_primary: f64,
    /// Mean auxiliary loss, when the strategy computes one.
    pub train_auxiliary: Option<f64>,
    pub val: EpochEval,
    /// Probe-measured disentanglement score on the validation split.
    /// The auxiliary heads in `val` are suppressed by the very training
    /// that fights them, so model selection uses this instead.
    pub val_disentanglement: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

/// A finished run: the model restored to its selected checkpoint, the
/// checkpoint itself, and the per-epoch trace.
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub trace: TrainTrace,
    /// Epoch of the selected checkpoint; `None` when epochs = 0.
    pub best_epoch: Option<u32>,
}

/// Probe-measured disentanglement of the current embeddings on a split.
fn probe_disentanglement(
    model: &Model,
    clips: &[&Clip],
    pad_value: f64,
    batch_size: usize,
    probe: &ProbeConfig,
) -> Result<f64> {
    let out = forward_split(model, clips, pad_value, batch_size)?;
    let leak_e = train_probe(
        &out.speaker_embs,
        &out.e_true,
        model.cfg.emotion_classes,
        probe,
    )?;
    let leak_s = train_probe(&out.emotion_embs, &out.s_true, model.cfg.speakers, probe)?;
    Ok(disentanglement_score(&leak_e, &leak_s))
}

/// Run the configured strategy for `cfg.epochs` epochs, evaluating on the
/// validation set after each and returning the best checkpoint (lowest
/// probe-measured validation disentanglement for GR/ALT/CONF, highest
/// emotion macro-F for STL/MTL, which have no disentanglement objective).
pub fn train(
    model: Model,
    train_set: &[&Clip],
    val_set: &[&Clip],
    cfg: &StrategyConfig,
    probe: &ProbeConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("train and validation sets must be nonempty".into()));
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, u32, Checkpoint)> = None;

    for epoch in 0..cfg.epochs {
        trainer.set_epoch(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::derive(cfg.seed, 10_000 + epoch as u64));

        let mut primary_sum = 0.0;
        let mut aux_sum = 0.0;
        let mut aux_batches = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let clips: Vec<&Clip> = chunk.iter().map(|&i| train_set[i]).collect();
            let batch = batch_clips(
                &clips,
                cfg.pad_value,
                trainer.model.cfg.d_audio,
                trainer.model.cfg.d_video,
            )?;
            let report = trainer.step(&batch)?;
            primary_sum += report.primary.total;
            if let Some(aux) = report.auxiliary {
                aux_sum += aux.total;
                aux_batches += 1;
            }
            batches += 1;
        }

        let val = validation_scores(&trainer.model, val_set, cfg.pad_value, cfg.batch_size)?;
        let val_disentanglement =
            probe_disentanglement(&trainer.model, val_set, cfg.pad_value, cfg.batch_size, probe)?;
        // Lower probe leakage is better for the disentangling strategies,
        // higher emotion macro-F for the baselines.
        let score = if cfg.strategy.disentangles() {
            val_disentanglement
        } else {
            -val.emotion.macro_f
        };
        if best.as_ref().map_or(true, |(s, _, _)| score < *s) {
            best = Some((score, epoch, trainer.model.store.snapshot()));
        }
        trace.records.push(EpochRecord {
            epoch,
            train_primary: primary_sum / batches as f64,
            train_auxiliary: (aux_batches > 0).then(|| aux_sum / aux_batches as f64),
            val,
            val_disentanglement,
        });
    }

    let mut model = trainer.model;
    let (checkpoint, best_epoch) = match best {
        Some((_, epoch, ckpt)) => {
            model.store.restore(&ckpt)?;
            (ckpt, Some(epoch))
        }
        None => (model.store.snapshot(), None),
    };
    Ok(TrainOutcome {
        model,
        checkpoint,
        trace,
        best_epoch,
    })
}
