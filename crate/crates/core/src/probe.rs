//! Post-hoc probe classifiers: a single-hidden-layer MLP trained on
//! frozen embeddings to measure how much label information they carry.
//!
//! A probe owns its own parameter store (group `probe`) and never sees,
//! let alone mutates, the main model.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss;
use crate::metrics::{argmax_rows, ConfusionMatrix, MetricsReport};
use crate::nn::{init_affine, AdamState, LrKind, OptimConfig, ParamGroup, ParameterStore};
use crate::rng;
use crate::tape::Tape;
use crate::tensor::DenseArray;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub hidden_dim: usize,
    pub epochs: u32,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            epochs: 100,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("probe hidden_dim must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("probe lr must be positive".into()));
        }
        Ok(())
    }
}

/// Stratified 80/20 split of `0..len` by label, shuffled per class from
/// the seed. A class with a single example goes entirely to train.
fn split_indices(labels: &[usize], classes: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for class in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        let mut rng = rng::derive(seed, 1_000 + class as u64);
        idx.shuffle(&mut rng);
        let n_train = if idx.len() == 1 {
            1
        } else {
            core::cmp::max(1, (idx.len() * 4).div_ceil(5))
        };
        let n_train = core::cmp::min(n_train, idx.len().saturating_sub(1).max(1));
        train.extend_from_slice(&idx[..n_train]);
        eval.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

fn gather_rows(x: &DenseArray, rows: &[usize]) -> DenseArray {
    let d = x.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(&x.data()[r * d..(r + 1) * d]);
    }
    DenseArray::from_vec(&[rows.len(), d], data).expect("gather_rows shape")
}

/// Train an embedding probe and evaluate it on the held-out part of the
/// stratified split.
pub fn train_probe(
    embeddings: &DenseArray,
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<MetricsReport> {
    cfg.validate()?;
    if embeddings.rank() != 2 || embeddings.shape()[0] != labels.len() {
        return Err(Error::Dimension {
            op: "train_probe",
            lhs: embeddings.shape().to_vec(),
            rhs: alloc::vec![labels.len()],
        });
    }
    if classes < 2 {
        return Err(Error::Config("probe needs at least 2 classes".into()));
    }
    for &l in labels {
        if l >= classes {
            return Err(Error::Label {
                label: l,
                classes,
            });
        }
    }

    let (train_idx, eval_idx) = split_indices(labels, classes, cfg.seed);
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let eval_labels: Vec<usize> = eval_idx.iter().map(|&i| labels[i]).collect();
    {
        let mut seen = alloc::collections::BTreeSet::new();
        seen.extend(train_labels.iter().copied());
        if seen.len() < 2 {
            return Err(Error::DegenerateProbe);
        }
    }
    if eval_idx.is_empty() {
        return Err(Error::Data("probe eval split is empty".into()));
    }

    let d = embeddings.shape()[1];
    let train_x = gather_rows(embeddings, &train_idx);
    let eval_x = gather_rows(embeddings, &eval_idx);

    let mut store = ParameterStore::new();
    let mut init_rng = rng::derive(cfg.seed, 0);
    let l1 = init_affine(d, cfg.hidden_dim, &mut init_rng);
    let l2 = init_affine(cfg.hidden_dim, classes, &mut init_rng);
    let w1 = store.add("probe.0.w", ParamGroup::Probe, l1.weight);
    let b1 = store.add("probe.0.b", ParamGroup::Probe, l1.bias);
    let w2 = store.add("probe.1.w", ParamGroup::Probe, l2.weight);
    let b2 = store.add("probe.1.b", ParamGroup::Probe, l2.bias);

    let forward = |tape: &mut Tape, store: &ParameterStore, x: &DenseArray| {
        let leaves: Vec<_> = store.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let xn = tape.leaf(x.clone());
        let h = tape.matmul(xn, leaves[w1])?;
        let h = tape.add_bias(h, leaves[b1])?;
        let h = tape.relu(h);
        let logits = tape.matmul(h, leaves[w2])?;
        let logits = tape.add_bias(logits, leaves[b2])?;
        Ok::<_, Error>((leaves, logits))
    };

    let optim = OptimConfig {
        lr_primary: cfg.lr,
        lr_auxiliary: cfg.lr,
        gamma: 1.0,
        ..OptimConfig::default()
    };
    let mut adam = AdamState::new(&store);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let (leaves, logits) = forward(&mut tape, &store, &train_x)?;
        let ce = loss::cross_entropy(&mut tape, logits, &train_labels)?;
        tape.backward(ce.node)?;
        let grads: Vec<_> = leaves.iter().map(|&id| tape.grad(id).cloned()).collect();
        adam.step(
            &mut store,
            &[ParamGroup::Probe],
            &grads,
            &optim,
            0,
            LrKind::Primary,
        )?;
    }

    let mut tape = Tape::new();
    let (_, logits) = forward(&mut tape, &store, &eval_x)?;
    let preds = argmax_rows(tape.value(logits));
    let cm = ConfusionMatrix::from_pairs(&eval_labels, &preds, classes)?;
    Ok(MetricsReport::from_confusion(&cm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn one_hot_embeddings(m: usize, k: usize) -> (DenseArray, Vec<usize>) {
        let labels: Vec<usize> = (0..m).map(|i| i % k).collect();
        let mut data = alloc::vec![0.0; m * k];
        for (i, &l) in labels.iter().enumerate() {
            data[i * k + l] = 1.0;
        }
        (DenseArray::from_vec(&[m, k], data).unwrap(), labels)
    }

    #[test]
    fn separable_embeddings_saturate() {
        let (emb, labels) = one_hot_embeddings(150, 3);
        let report = train_probe(&emb, &labels, 3, &ProbeConfig::default()).unwrap();
        assert!(report.accuracy >= 0.99, "accuracy {}", report.accuracy);
    }

    #[test]
    fn noise_embeddings_score_chance() {
        let k = 4;
        let m = 400;
        let labels: Vec<usize> = (0..m).map(|i| i % k).collect();
        let mut accs = Vec::new();
        for seed in 0..3 {
            let mut rng = rng::rng_from_seed(900 + seed);
            let data: Vec<f64> = (0..m * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let emb = DenseArray::from_vec(&[m, 8], data).unwrap();
            let cfg = ProbeConfig {
                seed,
                ..ProbeConfig::default()
            };
            accs.push(train_probe(&emb, &labels, k, &cfg).unwrap().accuracy);
        }
        accs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = accs[1];
        assert!(
            (median - 0.25).abs() <= 0.1,
            "chance-level probe scored {median}"
        );
    }

    #[test]
    fn zero_embeddings_predict_majority() {
        // 30 of class 0, 10 of class 1: majority fraction 0.75.
        let mut labels = alloc::vec![0usize; 30];
        labels.extend(alloc::vec![1usize; 10]);
        let emb = DenseArray::zeros(&[40, 6]);
        let report = train_probe(&emb, &labels, 2, &ProbeConfig::default()).unwrap();
        // Same constant prediction everywhere, so accuracy equals the
        // eval split's majority fraction (stratified: 6 of 8).
        assert!((report.accuracy - 0.75).abs() < 1e-12, "{}", report.accuracy);
    }

    #[test]
    fn single_class_training_is_degenerate() {
        let emb = DenseArray::zeros(&[10, 4]);
        let labels = alloc::vec![2usize; 10];
        assert!(matches!(
            train_probe(&emb, &labels, 3, &ProbeConfig::default()),
            Err(Error::DegenerateProbe)
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let (emb, labels) = one_hot_embeddings(60, 3);
        let cfg = ProbeConfig {
            epochs: 20,
            ..ProbeConfig::default()
        };
        let a = train_probe(&emb, &labels, 3, &cfg).unwrap();
        let b = train_probe(&emb, &labels, 3, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let (train, eval) = split_indices(&labels, 5, 7);
        assert_eq!(train.len() + eval.len(), 50);
        for class in 0..5 {
            let tr = train.iter().filter(|&&i| labels[i] == class).count();
            let ev = eval.iter().filter(|&&i| labels[i] == class).count();
            assert_eq!(tr, 8, "class {class}");
            assert_eq!(ev, 2, "class {class}");
        }
    }
}
