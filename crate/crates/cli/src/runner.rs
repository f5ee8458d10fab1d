//! Sweep execution: one job per (strategy, speaker dim, seed) cell,
//! resumable, parallel up to a worker count. Every cell leaves a
//! checkpoint, a per-epoch trace and an evaluation record in its own
//! directory, so the report stage can run read-only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use detangle_core::eval::evaluate_model;
use detangle_core::synth::{generate, Dataset, Split};
use detangle_core::train::{train, Strategy};

use crate::config::ExperimentConfig;
use crate::error::{io_data, CliError, Result};
use crate::formats::{checkpoint, dataset, trace};

/// One sweep job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub strategy: Strategy,
    pub speaker_emb_dim: usize,
    pub seed: u64,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!(
            "{}_dim{}_seed{}",
            self.strategy.name(),
            self.speaker_emb_dim,
            self.seed
        )
    }

    pub fn from_dir_name(name: &str) -> Option<Cell> {
        let mut parts = name.split('_');
        let strategy = Strategy::from_name(parts.next()?).ok()?;
        let speaker_emb_dim = parts.next()?.strip_prefix("dim")?.parse().ok()?;
        let seed = parts.next()?.strip_prefix("seed")?.parse().ok()?;
        if parts.next().is_some() {
            return None;
        }
        Some(Cell {
            strategy,
            speaker_emb_dim,
            seed,
        })
    }
}

pub fn sweep_cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    let strategies = cfg.train.strategies()?;
    let mut cells = Vec::new();
    for &strategy in &strategies {
        for &speaker_emb_dim in &cfg.model.speaker_emb_dims {
            for &seed in &cfg.train.seeds {
                cells.push(Cell {
                    strategy,
                    speaker_emb_dim,
                    seed,
                });
            }
        }
    }
    Ok(cells)
}

/// Generate the synthetic dataset file and print a label summary.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let ds = generate(&cfg.synthetic.to_spec())?;
    if let Some(parent) = cfg.paths.dataset.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_data(e, parent))?;
        }
    }
    dataset::save(&ds, &cfg.paths.dataset)?;
    println!("wrote {} clips to {}", ds.clips.len(), cfg.paths.dataset.display());
    print_label_summary(&ds);
    Ok(())
}

fn print_label_summary(ds: &Dataset) {
    let mut marginal = vec![0usize; ds.emotion_classes];
    let mut per_speaker: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for clip in &ds.clips {
        marginal[clip.emotion] += 1;
        per_speaker
            .entry(clip.speaker)
            .or_insert_with(|| vec![0; ds.emotion_classes])[clip.emotion] += 1;
    }
    println!("emotion marginal: {marginal:?}");
    let mut dominant_share = 0.0;
    for counts in per_speaker.values() {
        let total: usize = counts.iter().sum();
        let max = counts.iter().max().copied().unwrap_or(0);
        dominant_share += max as f64 / total as f64;
    }
    dominant_share /= per_speaker.len() as f64;
    println!(
        "mean dominant-emotion share per speaker: {dominant_share:.3} (1.0 means one emotion per speaker)"
    );
    for split in [Split::Train, Split::Validation, Split::Test] {
        println!("{}: {} clips", split.name(), ds.split(split).len());
    }
}

pub fn cell_dir(out: &Path, cell: &Cell) -> PathBuf {
    out.join(cell.dir_name())
}

pub fn is_complete(out: &Path, cell: &Cell) -> bool {
    cell_dir(out, cell).join("eval.json").exists()
}

/// Train one cell and leave checkpoint + trace + eval in its directory.
/// `eval.json` is written last and marks the cell complete.
pub fn run_cell(cfg: &ExperimentConfig, ds: &Dataset, cell: &Cell) -> Result<()> {
    let dir = cell_dir(&cfg.paths.out, cell);
    std::fs::create_dir_all(&dir).map_err(|e| io_data(e, &dir))?;

    let model_cfg = cfg.model.to_model_config(
        cell.speaker_emb_dim,
        ds.d_audio,
        ds.d_video,
        ds.emotion_classes,
        ds.speakers,
    );
    let model = detangle_core::model::build_model(&model_cfg, cell.seed)?;
    let strategy_cfg = cfg.train.to_strategy_config(cell.strategy, cell.seed);
    let probe_cfg = cfg.probe.to_probe_config();

    let outcome = train(
        model,
        &ds.split(Split::Train),
        &ds.split(Split::Validation),
        &strategy_cfg,
        &probe_cfg,
    )?;

    checkpoint::save(&outcome.checkpoint, &dir.join("checkpoint.bin"))?;
    trace::save_trace(&outcome.trace, &dir.join("trace.jsonl"))?;

    let report = evaluate_model(
        &outcome.model,
        &ds.split(Split::Test),
        strategy_cfg.pad_value,
        strategy_cfg.batch_size,
        &probe_cfg,
    )?;
    let eval = trace::CellEval::from_report(
        cell.strategy.name(),
        cell.speaker_emb_dim,
        cell.seed,
        outcome.best_epoch,
        &report,
    );
    trace::save_cell_eval(&eval, &dir.join("eval.json"))?;
    Ok(())
}

/// Run every incomplete cell, `workers` at a time. Returns the number of
/// cells that ran (completed cells are skipped).
pub fn cmd_train(cfg: &ExperimentConfig, workers: usize) -> Result<usize> {
    let ds = dataset::load(&cfg.paths.dataset)?;
    if ds.is_empty() {
        return Err(CliError::data("dataset has no clips"));
    }
    std::fs::create_dir_all(&cfg.paths.out).map_err(|e| io_data(e, &cfg.paths.out))?;

    let pending: Vec<Cell> = sweep_cells(cfg)?
        .into_iter()
        .filter(|cell| {
            if is_complete(&cfg.paths.out, cell) {
                println!("skip {} (complete)", cell.dir_name());
                false
            } else {
                true
            }
        })
        .collect();

    let workers = workers.max(1).min(pending.len().max(1));
    let queue = Mutex::new(pending.clone().into_iter());
    let failures: Mutex<Vec<(Cell, CliError)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap().next();
                let Some(cell) = next else { break };
                match run_cell(cfg, &ds, &cell) {
                    Ok(()) => println!("done {}", cell.dir_name()),
                    Err(err) => {
                        println!("FAIL {}: {err}", cell.dir_name());
                        failures.lock().unwrap().push((cell, err));
                    }
                }
            });
        }
    });

    let failures = failures.into_inner().unwrap();
    if let Some((cell, err)) = failures.into_iter().next() {
        return Err(CliError::Data(format!(
            "cell {} failed: {err}",
            cell.dir_name()
        )));
    }
    Ok(pending.len())
}

/// (Re-)evaluate existing checkpoints: useful when training was
/// interrupted between the checkpoint and its evaluation, or when probe
/// settings changed. With `force`, completed cells are re-probed too.
pub fn cmd_probe(cfg: &ExperimentConfig, force: bool) -> Result<usize> {
    let ds = dataset::load(&cfg.paths.dataset)?;
    let probe_cfg = cfg.probe.to_probe_config();
    let mut evaluated = 0;
    for cell in sweep_cells(cfg)? {
        let dir = cell_dir(&cfg.paths.out, &cell);
        let ckpt_path = dir.join("checkpoint.bin");
        if !ckpt_path.exists() {
            continue;
        }
        let eval_path = dir.join("eval.json");
        if eval_path.exists() && !force {
            continue;
        }
        let ckpt = checkpoint::load(&ckpt_path)?;
        let model_cfg = cfg.model.to_model_config(
            cell.speaker_emb_dim,
            ds.d_audio,
            ds.d_video,
            ds.emotion_classes,
            ds.speakers,
        );
        let mut model = detangle_core::model::build_model(&model_cfg, cell.seed)?;
        model.store.restore(&ckpt)?;

        // The trained best epoch is recorded in the trace if present.
        let best_epoch = trace::load_trace_lines(&dir.join("trace.jsonl"))
            .ok()
            .and_then(|lines| {
                if cell.strategy.disentangles() {
                    lines
                        .iter()
                        .min_by(|a, b| {
                            a.val_disentanglement
                                .partial_cmp(&b.val_disentanglement)
                                .unwrap()
                        })
                        .map(|l| l.epoch)
                } else {
                    lines
                        .iter()
                        .max_by(|a, b| {
                            a.val_emotion_macro_f
                                .partial_cmp(&b.val_emotion_macro_f)
                                .unwrap()
                        })
                        .map(|l| l.epoch)
                }
            });

        let report = evaluate_model(
            &model,
            &ds.split(Split::Test),
            cfg.train.pad_value,
            cfg.train.batch_size,
            &probe_cfg,
        )?;
        let eval = trace::CellEval::from_report(
            cell.strategy.name(),
            cell.speaker_emb_dim,
            cell.seed,
            best_epoch,
            &report,
        );
        trace::save_cell_eval(&eval, &eval_path)?;
        println!("probed {}", cell.dir_name());
        evaluated += 1;
    }
    Ok(evaluated)
}
