//! Layers, initialization, parameter grouping and the Adam optimizer.
//!
//! Parameters live in a [`ParameterStore`], partitioned into named groups
//! so the training strategies can freeze one side of the minimax game
//! while stepping the other. Optimizer moments persist across steps and
//! follow the same partition.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::tensor::DenseArray;

/// The fixed parameter partition. Every trainable array belongs to
/// exactly one group for the lifetime of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Encoders plus both embedding projections.
    Trunk,
    /// Primary emotion classifier (reads the emotion embedding).
    EmotionHead,
    /// Primary speaker classifier (reads the speaker embedding).
    SpeakerHead,
    /// Auxiliary head on the emotion embedding (predicts speaker).
    EmotionAux,
    /// Auxiliary head on the speaker embedding (predicts emotion).
    SpeakerAux,
    /// Post-hoc probe classifiers; never part of the main model.
    Probe,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Trunk,
        ParamGroup::EmotionHead,
        ParamGroup::SpeakerHead,
        ParamGroup::EmotionAux,
        ParamGroup::SpeakerAux,
        ParamGroup::Probe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Trunk => "trunk",
            ParamGroup::EmotionHead => "emotion_head",
            ParamGroup::SpeakerHead => "speaker_head",
            ParamGroup::EmotionAux => "emotion_aux",
            ParamGroup::SpeakerAux => "speaker_aux",
            ParamGroup::Probe => "probe",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == name)
            .ok_or_else(|| Error::Config(alloc::format!("unknown parameter group `{name}`")))
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|g| *g == self).unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: DenseArray,
}

/// Named parameter arrays partitioned into groups, with per-group freeze
/// flags honored by the optimizer.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
    frozen: [bool; 6],
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: DenseArray) -> usize {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut DenseArray {
        &mut self.params[idx].value
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn freeze(&mut self, groups: &[ParamGroup]) {
        for g in groups {
            self.frozen[g.index()] = true;
        }
    }

    pub fn unfreeze(&mut self, groups: &[ParamGroup]) {
        for g in groups {
            self.frozen[g.index()] = false;
        }
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen[group.index()]
    }

    /// Copy of every parameter, for model selection and persistence.
    pub fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            entries: self
                .params
                .iter()
                .map(|p| CheckpointEntry {
                    name: p.name.clone(),
                    value: p.value.clone(),
                })
                .collect(),
        }
    }

    /// Restore parameter values from a snapshot taken on an identically
    /// built store (same names, same order, same shapes).
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.entries.len() != self.params.len() {
            return Err(Error::Config(alloc::format!(
                "checkpoint has {} entries, store has {}",
                ckpt.entries.len(),
                self.params.len()
            )));
        }
        for (param, entry) in self.params.iter_mut().zip(&ckpt.entries) {
            if param.name != entry.name || param.value.shape() != entry.value.shape() {
                return Err(Error::Config(alloc::format!(
                    "checkpoint entry `{}` does not match parameter `{}`",
                    entry.name,
                    param.name
                )));
            }
            param.value = entry.value.clone();
        }
        Ok(())
    }
}

/// Flat list of named parameter arrays; what gets persisted to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub value: DenseArray,
}

/// One fully-connected layer.
#[derive(Debug, Clone)]
pub struct AffineLayer {
    /// `[d_in, d_out]`.
    pub weight: DenseArray,
    /// `[d_out]`, initialized to zero.
    pub bias: DenseArray,
}

/// A stack of affine layers with relu between them (none after the last).
#[derive(Debug, Clone)]
pub struct MlpEncoder {
    pub layers: Vec<AffineLayer>,
}

impl MlpEncoder {
    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.shape()[1]).unwrap_or(0)
    }
}

/// Glorot-uniform init: weights ~ U(-s, s) with s = sqrt(6 / (d_in + d_out)).
pub fn init_affine(d_in: usize, d_out: usize, rng: &mut rng::DetRng) -> AffineLayer {
    let s = math::sqrt(6.0 / (d_in + d_out) as f64);
    let data: Vec<f64> = (0..d_in * d_out).map(|_| rng.gen_range(-s..s)).collect();
    AffineLayer {
        weight: DenseArray::from_vec(&[d_in, d_out], data).expect("init_affine shape"),
        bias: DenseArray::zeros(&[d_out]),
    }
}

/// Build an MLP from consecutive layer sizes, deterministically from the seed.
pub fn init_params(dims: &[usize], seed: u64) -> Result<MlpEncoder> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(Error::Config(alloc::format!(
            "encoder dims must be >= 2 positive sizes, got {dims:?}"
        )));
    }
    let mut rng = rng::rng_from_seed(seed);
    let layers = dims
        .windows(2)
        .map(|w| init_affine(w[0], w[1], &mut rng))
        .collect();
    Ok(MlpEncoder { layers })
}

/// Which of the two configured learning rates a step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrKind {
    Primary,
    Auxiliary,
}

/// Optimizer settings shared by all strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr_primary: f64,
    pub lr_auxiliary: f64,
    /// Per-epoch exponential decay factor for both rates.
    pub gamma: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_primary: 1e-4,
            lr_auxiliary: 1e-3,
            gamma: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_primary > 0.0) || !(self.lr_auxiliary > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(alloc::format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// lr * gamma^epoch — the exact schedule, no other shaping.
    pub fn effective_lr(&self, which: LrKind, epoch: u32) -> f64 {
        let base = match which {
            LrKind::Primary => self.lr_primary,
            LrKind::Auxiliary => self.lr_auxiliary,
        };
        base * math::powi(self.gamma, epoch)
    }
}

/// Adam first/second moments, one pair per store parameter, persisting
/// across steps. The step counter is per-parameter so that a group that
/// sits out some phases keeps unbiased moment corrections.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<DenseArray>,
    v: Vec<DenseArray>,
    t: Vec<u64>,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros: Vec<DenseArray> = store
            .iter()
            .map(|p| DenseArray::zeros(p.value.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: vec![0; store.len()],
        }
    }

    /// One Adam update over every parameter whose group is in `groups`,
    /// is not frozen, and has a gradient. `grads` is aligned with the
    /// store's parameter indices; `None` means no gradient flowed.
    pub fn step(
        &mut self,
        store: &mut ParameterStore,
        groups: &[ParamGroup],
        grads: &[Option<DenseArray>],
        cfg: &OptimConfig,
        epoch: u32,
        which: LrKind,
    ) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Config(alloc::format!(
                "gradient list has {} entries, store has {}",
                grads.len(),
                store.len()
            )));
        }
        let lr = cfg.effective_lr(which, epoch);
        for idx in 0..store.len() {
            let group = store.param(idx).group;
            if !groups.contains(&group) || store.is_frozen(group) {
                continue;
            }
            let Some(grad) = &grads[idx] else { continue };
            if grad.shape() != store.param(idx).value.shape() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: store.param(idx).value.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            self.t[idx] += 1;
            let t = self.t[idx] as u32;
            let bc1 = 1.0 - math::powi(cfg.adam_beta1, t);
            let bc2 = 1.0 - math::powi(cfg.adam_beta2, t);
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let p = store.value_mut(idx).data_mut();
            for i in 0..p.len() {
                let g = grad.data()[i];
                m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
                v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (math::sqrt(v_hat) + cfg.adam_eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&[4, 3, 2], 7).unwrap();
        let b = init_params(&[4, 3, 2], 7).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.weight.data(), lb.weight.data());
            assert_eq!(la.bias.data(), lb.bias.data());
        }
        let c = init_params(&[4, 3, 2], 8).unwrap();
        assert_ne!(a.layers[0].weight.data(), c.layers[0].weight.data());
    }

    #[test]
    fn init_shapes_and_bounds() {
        let enc = init_params(&[4, 1], 0).unwrap();
        assert_eq!(enc.layers[0].weight.shape(), &[4, 1]);
        assert_eq!(enc.layers[0].bias.shape(), &[1]);
        assert!(enc.layers[0].bias.iter().all(|&b| b == 0.0));

        // s for d_in = d_out = 3 is exactly 1.
        let mut r = rng::rng_from_seed(3);
        let layer = init_affine(3, 3, &mut r);
        assert!(layer.weight.iter().all(|&w| w.abs() < 1.0));
    }

    #[test]
    fn effective_lr_schedule() {
        let cfg = OptimConfig {
            lr_auxiliary: 1e-3,
            ..OptimConfig::default()
        };
        assert_eq!(cfg.effective_lr(LrKind::Auxiliary, 0), 1e-3);
        let lr2 = cfg.effective_lr(LrKind::Auxiliary, 2);
        assert!((lr2 - 8.1e-4).abs() < 1e-18, "lr at epoch 2 = {lr2}");
    }

    fn scalar_store() -> (ParameterStore, AdamState) {
        let mut store = ParameterStore::new();
        store.add("w", ParamGroup::Trunk, DenseArray::scalar(1.0));
        let adam = AdamState::new(&store);
        (store, adam)
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let (mut store, mut adam) = scalar_store();
        let cfg = OptimConfig {
            lr_primary: 1e-3,
            gamma: 1.0,
            ..OptimConfig::default()
        };
        let grads = vec![Some(DenseArray::scalar(1.0))];
        adam.step(
            &mut store,
            &[ParamGroup::Trunk],
            &grads,
            &cfg,
            0,
            LrKind::Primary,
        )
        .unwrap();
        let delta = 1.0 - store.param(0).value.data()[0];
        assert!((delta - 1e-3).abs() < 1e-10, "delta {delta}");
    }

    #[test]
    fn adam_descends_quadratic() {
        // f(w) = w^2, grad = 2w; one step from w=1 at lr=1e-3 must decrease f.
        let (mut store, mut adam) = scalar_store();
        let cfg = OptimConfig {
            lr_primary: 1e-3,
            gamma: 1.0,
            ..OptimConfig::default()
        };
        let w0 = store.param(0).value.data()[0];
        let grads = vec![Some(DenseArray::scalar(2.0 * w0))];
        adam.step(
            &mut store,
            &[ParamGroup::Trunk],
            &grads,
            &cfg,
            0,
            LrKind::Primary,
        )
        .unwrap();
        let w1 = store.param(0).value.data()[0];
        assert!(w1 * w1 < w0 * w0);
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let mut store = ParameterStore::new();
        store.add("t", ParamGroup::Trunk, DenseArray::scalar(1.0));
        store.add("a", ParamGroup::EmotionAux, DenseArray::scalar(1.0));
        let mut adam = AdamState::new(&store);
        let cfg = OptimConfig::default();
        let grads = vec![Some(DenseArray::scalar(1.0)), Some(DenseArray::scalar(1.0))];

        store.freeze(&[ParamGroup::EmotionAux]);
        let before = store.param(1).value.clone();
        adam.step(&mut store, &ParamGroup::ALL, &grads, &cfg, 0, LrKind::Primary)
            .unwrap();
        assert_eq!(store.param(1).value, before, "frozen aux moved");
        assert_ne!(store.param(0).value.data()[0], 1.0, "trunk should move");

        store.unfreeze(&[ParamGroup::EmotionAux]);
        adam.step(&mut store, &ParamGroup::ALL, &grads, &cfg, 0, LrKind::Primary)
            .unwrap();
        assert_ne!(store.param(1).value, before, "updates should resume");
    }

    #[test]
    fn freezing_trunk_leaves_heads_working() {
        let mut store = ParameterStore::new();
        store.add("t", ParamGroup::Trunk, DenseArray::scalar(1.0));
        store.add("h", ParamGroup::EmotionHead, DenseArray::scalar(1.0));
        let mut adam = AdamState::new(&store);
        store.freeze(&[ParamGroup::Trunk]);
        let grads = vec![Some(DenseArray::scalar(1.0)), Some(DenseArray::scalar(1.0))];
        adam.step(
            &mut store,
            &ParamGroup::ALL,
            &grads,
            &OptimConfig::default(),
            0,
            LrKind::Primary,
        )
        .unwrap();
        assert_eq!(store.param(0).value.data()[0], 1.0);
        assert_ne!(store.param(1).value.data()[0], 1.0);
    }

    #[test]
    fn group_names_roundtrip() {
        for g in ParamGroup::ALL {
            assert_eq!(ParamGroup::from_name(g.name()).unwrap(), g);
        }
        assert!(matches!(
            ParamGroup::from_name("no_such_group"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn snapshot_restore_roundtrip() {
        let mut store = ParameterStore::new();
        store.add("w", ParamGroup::Trunk, DenseArray::scalar(2.5));
        let saved = store.snapshot();
        store.value_mut(0).data_mut()[0] = -1.0;
        store.restore(&saved).unwrap();
        assert_eq!(store.param(0).value.data()[0], 2.5);
    }

    #[test]
    fn adam_shape_mismatch_is_error() {
        let (mut store, mut adam) = scalar_store();
        let grads = vec![Some(DenseArray::zeros(&[2]))];
        assert!(matches!(
            adam.step(
                &mut store,
                &ParamGroup::ALL,
                &grads,
                &OptimConfig::default(),
                0,
                LrKind::Primary
            ),
            Err(Error::Dimension { .. })
        ));
    }
}
