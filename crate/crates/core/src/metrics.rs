//! Confusion matrices, unweighted macro F-score, identification accuracy
//! and the combined disentanglement score.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// K x K counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("confusion matrix needs at least 1 class".into()));
        }
        Ok(Self {
            k,
            counts: vec![0; k * k],
        })
    }

    pub fn from_pairs(truth: &[usize], preds: &[usize], k: usize) -> Result<Self> {
        if truth.len() != preds.len() {
            return Err(Error::Data(alloc::format!(
                "{} labels vs {} predictions",
                truth.len(),
                preds.len()
            )));
        }
        let mut cm = Self::new(k)?;
        for (&t, &p) in truth.iter().zip(preds) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k {
            return Err(Error::Label {
                label: truth,
                classes: self.k,
            });
        }
        if pred >= self.k {
            return Err(Error::Label {
                label: pred,
                classes: self.k,
            });
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn true_positives(&self, class: usize) -> u64 {
        self.counts[class * self.k + class]
    }

    fn predicted(&self, class: usize) -> u64 {
        (0..self.k).map(|t| self.counts[t * self.k + class]).sum()
    }

    fn actual(&self, class: usize) -> u64 {
        self.counts[class * self.k..(class + 1) * self.k].iter().sum()
    }
}

/// Per-class precision/recall/F plus the averaged scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f: f64,
    pub accuracy: f64,
    /// Present only on combined leakage reports.
    pub disentanglement_score: Option<f64>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Self {
        let k = cm.classes();
        let mut precision = Vec::with_capacity(k);
        let mut recall = Vec::with_capacity(k);
        let mut f1 = Vec::with_capacity(k);
        for class in 0..k {
            let tp = cm.true_positives(class) as f64;
            let pred = cm.predicted(class) as f64;
            let act = cm.actual(class) as f64;
            let p = if pred > 0.0 { tp / pred } else { 0.0 };
            let r = if act > 0.0 { tp / act } else { 0.0 };
            // Absent classes (no true, no predicted items) score 0, which
            // keeps macro-F comparable across collapsed models.
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            precision.push(p);
            recall.push(r);
            f1.push(f);
        }
        Self {
            macro_f: macro_f1(cm),
            accuracy: accuracy(cm),
            precision,
            recall,
            f1,
            disentanglement_score: None,
        }
    }
}

/// Unweighted mean over classes of 2PR/(P+R), with F = 0 whenever
/// P + R = 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let k = cm.classes();
    let mut sum = 0.0;
    for class in 0..k {
        let tp = cm.true_positives(class) as f64;
        let pred = cm.predicted(class) as f64;
        let act = cm.actual(class) as f64;
        let p = if pred > 0.0 { tp / pred } else { 0.0 };
        let r = if act > 0.0 { tp / act } else { 0.0 };
        if p + r > 0.0 {
            sum += 2.0 * p * r / (p + r);
        }
    }
    sum / k as f64
}

/// trace / total.
pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    let trace: u64 = (0..cm.classes()).map(|c| cm.true_positives(c)).sum();
    trace as f64 / total as f64
}

/// Row-wise argmax of a `[B, K]` logit block; ties go to the lowest index.
pub fn argmax_rows(logits: &crate::tensor::DenseArray) -> Vec<usize> {
    let (rows, cols) = (logits.shape()[0], logits.shape()[1]);
    (0..rows)
        .map(|r| {
            let row = &logits.data()[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Combined leakage: the mean of emotion-from-speaker macro-F and
/// speaker-from-emotion accuracy. Lower is better.
pub fn disentanglement_score(
    emotion_from_speaker: &MetricsReport,
    speaker_from_emotion: &MetricsReport,
) -> f64 {
    0.5 * (emotion_from_speaker.macro_f + speaker_from_emotion.accuracy)
}
