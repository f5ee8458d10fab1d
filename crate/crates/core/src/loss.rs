//! Loss functions: cross-entropy, the primary and auxiliary composites,
//! and the confusion loss.
//!
//! All losses take logits and apply log-softmax internally; probabilities
//! are never materialized, so nothing here can round-trip through an
//! unstable exp/log pair.

use alloc::vec;

use crate::error::{Error, Result};
use crate::model::{ClipBatch, ForwardNodes};
use crate::tape::{NodeId, Tape};
use crate::tensor::DenseArray;

/// Weights of the four cross-entropy terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_em_prim: f64,
    pub w_spk_prim: f64,
    pub w_em_aux: f64,
    pub w_spk_aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_em_prim: 0.5,
            w_spk_prim: 0.5,
            w_em_aux: 0.3,
            w_spk_aux: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_em_prim, self.w_spk_prim, self.w_em_aux, self.w_spk_aux];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// A scalar loss node plus its forward value.
#[derive(Debug, Clone, Copy)]
pub struct ScalarLoss {
    pub node: NodeId,
    pub value: f64,
}

/// A weighted two-term composite with its components broken out.
#[derive(Debug, Clone, Copy)]
pub struct CompositeLoss {
    pub node: NodeId,
    pub value: f64,
    /// Weighted emotion-target term.
    pub weighted_emotion: f64,
    /// Weighted speaker-target term.
    pub weighted_speaker: f64,
}

/// Mean over the batch of `-log_softmax(logits)[target]`.
pub fn cross_entropy(tape: &mut Tape, logits: NodeId, targets: &[usize]) -> Result<ScalarLoss> {
    let shape = tape.value(logits).shape().to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::Dimension {
            op: "cross_entropy",
            lhs: shape,
            rhs: vec![targets.len()],
        });
    }
    let (b, k) = (shape[0], shape[1]);
    let mut onehot = vec![0.0; b * k];
    for (row, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(Error::Label { label: t, classes: k });
        }
        onehot[row * k + t] = 1.0;
    }
    let logp = tape.log_softmax(logits)?;
    let mask = tape.leaf(DenseArray::from_vec(&[b, k], onehot)?);
    let picked = tape.mul(logp, mask)?;
    let total = tape.sum_all(picked);
    let node = tape.scale(total, -1.0 / b as f64);
    Ok(ScalarLoss {
        node,
        value: tape.value(node).scalar_value()?,
    })
}

/// Weighted sum of the two primary cross-entropies.
pub fn primary_loss(
    tape: &mut Tape,
    nodes: &ForwardNodes,
    batch: &ClipBatch,
    w: &LossWeights,
) -> Result<CompositeLoss> {
    w.validate()?;
    let ce_e = cross_entropy(tape, nodes.e_prim, &batch.e_target)?;
    let ce_s = cross_entropy(tape, nodes.s_prim, &batch.s_target)?;
    weighted_pair(tape, ce_e, w.w_em_prim, ce_s, w.w_spk_prim)
}

/// Weighted sum of the two auxiliary cross-entropies. `e_aux` is the
/// emotion prediction read from the speaker embedding (its weight is
/// `w_spk_aux`), `s_aux` the speaker prediction read from the emotion
/// embedding (weight `w_em_aux`).
pub fn auxiliary_loss(
    tape: &mut Tape,
    nodes: &ForwardNodes,
    batch: &ClipBatch,
    w: &LossWeights,
) -> Result<CompositeLoss> {
    w.validate()?;
    let ce_e = cross_entropy(tape, nodes.e_aux, &batch.e_target)?;
    let ce_s = cross_entropy(tape, nodes.s_aux, &batch.s_target)?;
    weighted_pair(tape, ce_e, w.w_spk_aux, ce_s, w.w_em_aux)
}

fn weighted_pair(
    tape: &mut Tape,
    emotion_term: ScalarLoss,
    emotion_weight: f64,
    speaker_term: ScalarLoss,
    speaker_weight: f64,
) -> Result<CompositeLoss> {
    let we = tape.scale(emotion_term.node, emotion_weight);
    let ws = tape.scale(speaker_term.node, speaker_weight);
    let node = tape.add(we, ws)?;
    Ok(CompositeLoss {
        node,
        value: tape.value(node).scalar_value()?,
        weighted_emotion: tape.value(we).scalar_value()?,
        weighted_speaker: tape.value(ws).scalar_value()?,
    })
}

/// Cross-entropy between the predictions and the uniform distribution:
/// mean over the batch of `-(1/K) * sum_k log_softmax(logits)[k]`.
/// Minimized (value `ln K`) exactly when every class is predicted with
/// the same probability.
pub fn confusion_loss(tape: &mut Tape, logits: NodeId) -> Result<ScalarLoss> {
    let shape = tape.value(logits).shape().to_vec();
    if shape.len() != 2 || shape[1] < 2 {
        return Err(Error::Dimension {
            op: "confusion_loss",
            lhs: shape,
            rhs: vec![],
        });
    }
    let (b, k) = (shape[0], shape[1]);
    let logp = tape.log_softmax(logits)?;
    let total = tape.sum_all(logp);
    let node = tape.scale(total, -1.0 / (b as f64 * k as f64));
    Ok(ScalarLoss {
        node,
        value: tape.value(node).scalar_value()?,
    })
}
