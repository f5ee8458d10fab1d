//! Scratch benchmark tuning harness (deleted before finishing).

use std::time::Instant;

use detangle_core::eval::evaluate_model;
use detangle_core::model::{build_model, ModelConfig};
use detangle_core::nn::OptimConfig;
use detangle_core::probe::{train_probe, ProbeConfig};
use detangle_core::synth::{generate, Split, SyntheticSpec};
use detangle_core::tensor::DenseArray;
use detangle_core::train::{train, Strategy, StrategyConfig};

fn bench_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        speakers: 20,
        emotion_classes: 5,
        clips_per_speaker: 40,
        n_min: 2,
        n_max: 6,
        d_audio: 12,
        d_video: 16,
        rho: 0.8,
        noise_sigma: std::env::var("SIGMA").map(|v| v.parse().unwrap()).unwrap_or(1.0),
        seed,
    }
}

fn model_cfg(speaker_dim: usize) -> ModelConfig {
    let width: usize = std::env::var("WIDTH").map(|v| v.parse().unwrap()).unwrap_or(32);
    ModelConfig {
        speaker_emb_dim: speaker_dim,
        audio_widths: vec![width],
        video_widths: vec![width],
        ..ModelConfig::desk_default(20)
    }
}

fn train_cfg(strategy: Strategy, seed: u64) -> StrategyConfig {
    let mut cfg = StrategyConfig::new(strategy);
    cfg.epochs = std::env::var("EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(30);
    cfg.batch_size = 32;
    cfg.seed = seed;
    cfg.optim = OptimConfig {
        lr_primary: std::env::var("LRP").map(|v| v.parse().unwrap()).unwrap_or(1e-3),
        lr_auxiliary: std::env::var("LRA").map(|v| v.parse().unwrap()).unwrap_or(1e-2),
        gamma: std::env::var("GAMMA").map(|v| v.parse().unwrap()).unwrap_or(0.9),
        ..OptimConfig::default()
    };
    cfg.conf_weight = std::env::var("CONFW").map(|v| v.parse().unwrap()).unwrap_or(0.3);
    cfg.alt_adv_weight = std::env::var("BETA").map(|v| v.parse().unwrap()).unwrap_or(0.3);
    cfg.grl_lambda = std::env::var("LAMBDA").map(|v| v.parse().unwrap()).unwrap_or(1.0);
    cfg.weights.w_em_aux = std::env::var("WEMAUX").map(|v| v.parse().unwrap()).unwrap_or(0.3);
    cfg.weights.w_spk_aux = std::env::var("WSPKAUX").map(|v| v.parse().unwrap()).unwrap_or(0.3);
    cfg
}

#[test]
#[ignore]
fn benchmark_scan() {
    let t0 = Instant::now();
    for seed in [1u64, 2, 3] {
        let ds = generate(&bench_spec(seed)).unwrap();
        let train_clips = ds.split(Split::Train);
        let val_clips = ds.split(Split::Validation);
        let test_clips = ds.split(Split::Test);
        let probe_cfg = ProbeConfig {
            seed,
            ..ProbeConfig::default()
        };

        // Chance probe: noise embeddings with the test labels.
        let labels: Vec<usize> = test_clips.iter().map(|c| c.emotion).collect();
        let mut rng = detangle_core::rng::rng_from_seed(seed + 500);
        use rand::Rng;
        let noise: Vec<f64> = (0..labels.len() * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise_emb = DenseArray::from_vec(&[labels.len(), 64], noise).unwrap();
        let chance = train_probe(&noise_emb, &labels, 5, &probe_cfg).unwrap();

        for strategy in [Strategy::Stl, Strategy::Mtl, Strategy::Gr, Strategy::Alt, Strategy::Conf] {
            let model = build_model(&model_cfg(64), seed).unwrap();
            let out = train(model, &train_clips, &val_clips, &train_cfg(strategy, seed), &probe_cfg).unwrap();
            let report = evaluate_model(&out.model, &test_clips, 0.0, 64, &probe_cfg).unwrap();
            let val_best = out
                .trace
                .records
                .iter()
                .map(|r| r.val.emotion.macro_f)
                .fold(f64::NEG_INFINITY, f64::max);
            println!(
                "seed={seed} {:>4}: emoF={:.3} valF*={:.3} spkAcc={:.3} leakF={:.3} leakAcc={:.3} dis={:.3} chanceF={:.3} best_ep={:?} [{:.1}s]",
                strategy.name(),
                report.emotion.macro_f,
                val_best,
                report.speaker.accuracy,
                report.leak_emotion_from_speaker.macro_f,
                report.leak_speaker_from_emotion.accuracy,
                report.disentanglement,
                chance.macro_f,
                out.best_epoch,
                t0.elapsed().as_secs_f64(),
            );
        }
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}

#[test]
#[ignore]
fn benchmark_dim_sweep() {
    let t0 = Instant::now();
    for seed in [1u64, 2, 3] {
        let ds = generate(&bench_spec(seed)).unwrap();
        let train_clips = ds.split(Split::Train);
        let val_clips = ds.split(Split::Validation);
        let test_clips = ds.split(Split::Test);
        let probe_cfg = ProbeConfig {
            seed,
            ..ProbeConfig::default()
        };
        for dim in [64usize, 16, 8] {
            let model = build_model(&model_cfg(dim), seed).unwrap();
            let out = train(model, &train_clips, &val_clips, &train_cfg(Strategy::Conf, seed), &probe_cfg).unwrap();
            let report = evaluate_model(&out.model, &test_clips, 0.0, 64, &probe_cfg).unwrap();
            println!(
                "seed={seed} CONF dim={dim:>3}: emoF={:.3} spkAcc={:.3} leakF={:.3} dis={:.3} [{:.1}s]",
                report.emotion.macro_f,
                report.speaker.accuracy,
                report.leak_emotion_from_speaker.macro_f,
                report.disentanglement,
                t0.elapsed().as_secs_f64(),
            );
        }
    }
}
