//! Report generation: median tables over seeds (primary emotion macro-F,
//! leakage macro-F, speaker identification accuracy), the full per-cell
//! table, and pairwise Stuart-Maxwell marginal homogeneity tests of each
//! disentangled model against the baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use detangle_core::stats::stuart_maxwell;
use detangle_core::train::Strategy;

use crate::config::ExperimentConfig;
use crate::error::{io_data, CliError, Result};
use crate::formats::trace::{load_cell_eval, CellEval};
use crate::runner::{cell_dir, sweep_cells};

const BASELINE: Strategy = Strategy::Mtl;

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// All completed cells, in deterministic sweep order.
pub fn load_cells(cfg: &ExperimentConfig) -> Result<Vec<CellEval>> {
    let mut evals = Vec::new();
    for cell in sweep_cells(cfg)? {
        let path = cell_dir(&cfg.paths.out, &cell).join("eval.json");
        if path.exists() {
            evals.push(load_cell_eval(&path)?);
        }
    }
    if evals.is_empty() {
        return Err(CliError::data(format!(
            "no completed cells under {} - run `train` first",
            cfg.paths.out.display()
        )));
    }
    Ok(evals)
}

/// One metric as a dims x strategies table of medians over seeds.
fn median_table(
    cells: &[CellEval],
    metric: impl Fn(&CellEval) -> f64,
) -> (Vec<usize>, Vec<String>, Vec<Vec<Option<f64>>>) {
    let mut dims: Vec<usize> = cells.iter().map(|c| c.speaker_emb_dim).collect();
    dims.sort_unstable();
    dims.dedup();
    dims.reverse();
    let mut strategies: Vec<String> = Vec::new();
    for s in Strategy::ALL {
        if cells.iter().any(|c| c.strategy == s.name()) {
            strategies.push(s.name().to_string());
        }
    }
    let mut rows = Vec::new();
    for &dim in &dims {
        let mut row = Vec::new();
        for strategy in &strategies {
            let mut values: Vec<f64> = cells
                .iter()
                .filter(|c| c.speaker_emb_dim == dim && &c.strategy == strategy)
                .map(&metric)
                .collect();
            row.push((!values.is_empty()).then(|| median(&mut values)));
        }
        rows.push(row);
    }
    (dims, strategies, rows)
}

fn table_csv(
    dims: &[usize],
    strategies: &[String],
    rows: &[Vec<Option<f64>>],
) -> String {
    let mut out = String::from("speaker_emb_dim");
    for s in strategies {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    for (dim, row) in dims.iter().zip(rows) {
        let _ = write!(out, "{dim}");
        for value in row {
            match value {
                Some(v) => {
                    let _ = write!(out, ",{v:.4}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

fn cells_csv(cells: &[CellEval]) -> String {
    let mut out = String::from(
        "strategy,speaker_emb_dim,seed,best_epoch,emotion_macro_f,emotion_accuracy,speaker_accuracy,speaker_macro_f,leak_emotion_from_speaker_macro_f,leak_speaker_from_emotion_accuracy,disentanglement\n",
    );
    for c in cells {
        let best = c
            .best_epoch
            .map(|e| e.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            c.strategy,
            c.speaker_emb_dim,
            c.seed,
            best,
            c.emotion_macro_f,
            c.emotion_accuracy,
            c.speaker_accuracy,
            c.speaker_macro_f,
            c.leak_emotion_from_speaker_macro_f,
            c.leak_speaker_from_emotion_accuracy,
            c.disentanglement
        );
    }
    out
}

/// Pairwise Stuart-Maxwell tests: every disentangled cell against the
/// baseline cell with the same dim and seed, on test-set emotion
/// predictions.
fn stuart_maxwell_csv(cells: &[CellEval], classes: usize, alpha: f64) -> Result<String> {
    let mut baselines: BTreeMap<(usize, u64), &CellEval> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.strategy == BASELINE.name()) {
        baselines.insert((c.speaker_emb_dim, c.seed), c);
    }
    let mut out = String::from(
        "strategy,speaker_emb_dim,seed,statistic,dof,p_value,different\n",
    );
    for c in cells {
        if c.strategy == BASELINE.name() || c.strategy == Strategy::Stl.name() {
            continue;
        }
        let Some(base) = baselines.get(&(c.speaker_emb_dim, c.seed)) else {
            continue;
        };
        if base.emotion_truth != c.emotion_truth {
            return Err(CliError::data(format!(
                "cells {}_dim{}_seed{} and baseline disagree on test items",
                c.strategy, c.speaker_emb_dim, c.seed
            )));
        }
        let test = stuart_maxwell(&c.emotion_predictions, &base.emotion_predictions, classes)?;
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{},{:.6},{}",
            c.strategy,
            c.speaker_emb_dim,
            c.seed,
            test.statistic,
            test.dof,
            test.p_value,
            test.rejects_at(alpha)
        );
    }
    Ok(out)
}

fn summary_text(cfg: &ExperimentConfig, cells: &[CellEval]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "completed cells: {}", cells.len());
    let (dims, strategies, emotion) = median_table(cells, |c| c.emotion_macro_f);
    let (_, _, leakage) = median_table(cells, |c| c.leak_emotion_from_speaker_macro_f);
    let (_, _, speaker) = median_table(cells, |c| c.speaker_accuracy);
    let (_, _, dis) = median_table(cells, |c| c.disentanglement);
    for (title, rows) in [
        ("primary emotion macro-F (median over seeds)", &emotion),
        ("emotion-from-speaker-embedding probe macro-F", &leakage),
        ("speaker identification accuracy", &speaker),
        ("disentanglement score (lower is better)", &dis),
    ] {
        let _ = writeln!(out, "\n{title}:");
        let _ = write!(out, "{:>6}", "dim");
        for s in &strategies {
            let _ = write!(out, " {s:>7}");
        }
        out.push('\n');
        for (dim, row) in dims.iter().zip(rows) {
            let _ = write!(out, "{dim:>6}");
            for v in row {
                match v {
                    Some(v) => {
                        let _ = write!(out, " {v:>7.4}");
                    }
                    None => {
                        let _ = write!(out, " {:>7}", "-");
                    }
                }
            }
            out.push('\n');
        }
    }
    let _ = writeln!(
        out,
        "\nmarginal homogeneity tests vs {} at alpha = {}: see stuart_maxwell.csv",
        BASELINE.name(),
        cfg.report.alpha
    );
    out
}

/// Write all report artifacts into the output directory.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let cells = load_cells(cfg)?;
    let classes = cells
        .first()
        .map(|c| c.emotion_per_class_f1.len())
        .unwrap_or(0);
    let out = &cfg.paths.out;

    let (dims, strategies, emotion) = median_table(&cells, |c| c.emotion_macro_f);
    let (_, _, leakage) = median_table(&cells, |c| c.leak_emotion_from_speaker_macro_f);
    let (_, _, speaker) = median_table(&cells, |c| c.speaker_accuracy);

    let writes = [
        ("emotion_f1.csv", table_csv(&dims, &strategies, &emotion)),
        ("leakage_f1.csv", table_csv(&dims, &strategies, &leakage)),
        ("speaker_accuracy.csv", table_csv(&dims, &strategies, &speaker)),
        ("cells.csv", cells_csv(&cells)),
        (
            "stuart_maxwell.csv",
            stuart_maxwell_csv(&cells, classes, cfg.report.alpha)?,
        ),
        ("summary.txt", summary_text(cfg, &cells)),
    ];
    for (name, content) in writes {
        let path = out.join(name);
        std::fs::write(&path, content).map_err(|e| io_data(e, &path))?;
    }
    print!("{}", summary_text(cfg, &cells));
    println!("report written to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(strategy: &str, dim: usize, seed: u64, emo: f64, preds: Vec<usize>) -> CellEval {
        CellEval {
            strategy: strategy.into(),
            speaker_emb_dim: dim,
            seed,
            best_epoch: Some(0),
            emotion_macro_f: emo,
            emotion_accuracy: emo,
            emotion_per_class_f1: vec![emo; 5],
            speaker_accuracy: 0.5,
            speaker_macro_f: 0.5,
            leak_emotion_from_speaker_macro_f: 0.4,
            leak_speaker_from_emotion_accuracy: 0.2,
            disentanglement: 0.3,
            emotion_truth: vec![0, 1, 2, 3, 4],
            emotion_predictions: preds,
        }
    }

    #[test]
    fn median_tables_take_the_middle_seed() {
        let cells = vec![
            cell("MTL", 64, 1, 0.5, vec![0; 5]),
            cell("MTL", 64, 2, 0.9, vec![0; 5]),
            cell("MTL", 64, 3, 0.7, vec![0; 5]),
        ];
        let (dims, strategies, rows) = median_table(&cells, |c| c.emotion_macro_f);
        assert_eq!(dims, vec![64]);
        assert_eq!(strategies, vec!["MTL".to_string()]);
        assert_eq!(rows[0][0], Some(0.7));
    }

    #[test]
    fn identical_predictions_are_not_different() {
        let preds = vec![0, 1, 2, 3, 4];
        let cells = vec![
            cell("MTL", 64, 1, 0.8, preds.clone()),
            cell("GR", 64, 1, 0.8, preds),
        ];
        let csv = stuart_maxwell_csv(&cells, 5, 0.01).unwrap();
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("GR,64,1,0.000000"), "{line}");
        assert!(line.ends_with(",false"), "{line}");
    }

    #[test]
    fn csv_layout_is_stable() {
        let cells = vec![
            cell("MTL", 64, 1, 0.8, vec![0; 5]),
            cell("MTL", 8, 1, 0.7, vec![0; 5]),
            cell("GR", 64, 1, 0.75, vec![0; 5]),
        ];
        let (dims, strategies, rows) = median_table(&cells, |c| c.emotion_macro_f);
        let csv = table_csv(&dims, &strategies, &rows);
        let expect = "speaker_emb_dim,MTL,GR\n64,0.8000,0.7500\n8,0.7000,\n";
        assert_eq!(csv, expect);
    }
}
