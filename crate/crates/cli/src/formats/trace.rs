//! Per-epoch trace log (one JSON record per line) and the evaluation
//! record each completed sweep cell writes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use detangle_core::eval::EvalReport;
use detangle_core::train::{EpochRecord, TrainTrace};

use crate::error::{io_data, CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceLine {
    pub epoch: u32,
    pub train_primary: f64,
    pub train_auxiliary: Option<f64>,
    pub val_emotion_macro_f: f64,
    pub val_emotion_accuracy: f64,
    pub val_speaker_accuracy: f64,
    pub val_speaker_macro_f: f64,
    /// Leakage proxy read off the auxiliary heads.
    pub aux_emotion_from_speaker_f: f64,
    pub aux_speaker_from_emotion_acc: f64,
    pub aux_leakage: f64,
    /// Probe-measured validation disentanglement (the selection score
    /// for the disentangling strategies).
    pub val_disentanglement: f64,
}

impl From<&EpochRecord> for TraceLine {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            train_primary: r.train_primary,
            train_auxiliary: r.train_auxiliary,
            val_emotion_macro_f: r.val.emotion.macro_f,
            val_emotion_accuracy: r.val.emotion.accuracy,
            val_speaker_accuracy: r.val.speaker.accuracy,
            val_speaker_macro_f: r.val.speaker.macro_f,
            aux_emotion_from_speaker_f: r.val.aux_emotion_from_speaker_f,
            aux_speaker_from_emotion_acc: r.val.aux_speaker_from_emotion_acc,
            aux_leakage: r.val.aux_leakage,
            val_disentanglement: r.val_disentanglement,
        }
    }
}

pub fn trace_to_jsonl(trace: &TrainTrace) -> Result<String> {
    let mut out = String::new();
    for record in &trace.records {
        let line = serde_json::to_string(&TraceLine::from(record))
            .map_err(|e| CliError::data(format!("trace encode: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_trace(trace: &TrainTrace, path: &Path) -> Result<()> {
    std::fs::write(path, trace_to_jsonl(trace)?).map_err(|e| io_data(e, path))
}

pub fn load_trace_lines(path: &Path) -> Result<Vec<TraceLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_data(e, path))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Everything the report needs from one finished sweep cell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CellEval {
    pub strategy: String,
    pub speaker_emb_dim: usize,
    pub seed: u64,
    pub best_epoch: Option<u32>,
    pub emotion_macro_f: f64,
    pub emotion_accuracy: f64,
    pub emotion_per_class_f1: Vec<f64>,
    pub speaker_accuracy: f64,
    pub speaker_macro_f: f64,
    pub leak_emotion_from_speaker_macro_f: f64,
    pub leak_speaker_from_emotion_accuracy: f64,
    pub disentanglement: f64,
    /// Test-split primary emotion predictions, for the pairwise
    /// marginal homogeneity tests against the baseline.
    pub emotion_predictions: Vec<usize>,
    pub emotion_truth: Vec<usize>,
}

impl CellEval {
    pub fn from_report(
        strategy: &str,
        speaker_emb_dim: usize,
        seed: u64,
        best_epoch: Option<u32>,
        report: &EvalReport,
    ) -> Self {
        Self {
            strategy: strategy.to_string(),
            speaker_emb_dim,
            seed,
            best_epoch,
            emotion_macro_f: report.emotion.macro_f,
            emotion_accuracy: report.emotion.accuracy,
            emotion_per_class_f1: report.emotion.f1.clone(),
            speaker_accuracy: report.speaker.accuracy,
            speaker_macro_f: report.speaker.macro_f,
            leak_emotion_from_speaker_macro_f: report.leak_emotion_from_speaker.macro_f,
            leak_speaker_from_emotion_accuracy: report.leak_speaker_from_emotion.accuracy,
            disentanglement: report.disentanglement,
            emotion_predictions: report.emotion_predictions.clone(),
            emotion_truth: report.emotion_truth.clone(),
        }
    }
}

pub fn save_cell_eval(eval: &CellEval, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(eval)
        .map_err(|e| CliError::data(format!("eval encode: {e}")))?;
    std::fs::write(path, json + "\n").map_err(|e| io_data(e, path))
}

pub fn load_cell_eval(path: &Path) -> Result<CellEval> {
    let text = std::fs::read_to_string(path).map_err(|e| io_data(e, path))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
