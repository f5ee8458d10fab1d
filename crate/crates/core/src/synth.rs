//! Synthetic entangled audio-visual datasets with known ground truth,
//! plus the dataset-shaping operations (dominant label, class collapse,
//! percentile filtering, padding) applied to externally supplied
//! feature clips.
//!
//! Generation model: every emotion class and every speaker gets a fixed
//! seeded unit-norm direction per modality; a segment's features are
//! `mu_emotion[e] + mu_speaker[s] + noise`. Each speaker draws its clip
//! emotions from the prior `(1-rho) * uniform + rho * onehot(s mod E)`,
//! so `rho` dials the statistical dependence between the two label sets
//! from independent (0) to deterministic (1) while both tasks stay
//! linearly solvable by construction.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::DenseArray;

/// Which partition a clip belongs to. Every speaker appears in all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(alloc::format!("unknown split `{other}`"))),
        }
    }
}

/// Recipe for one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub speakers: usize,
    pub emotion_classes: usize,
    pub clips_per_speaker: usize,
    /// True segment counts are uniform on `n_min..=n_max`.
    pub n_min: usize,
    pub n_max: usize,
    pub d_audio: usize,
    pub d_video: usize,
    /// Label entanglement in [0,1]: 0 = independent, 1 = one emotion per speaker.
    pub rho: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            speakers: 20,
            emotion_classes: 5,
            clips_per_speaker: 40,
            n_min: 2,
            n_max: 6,
            d_audio: 12,
            d_video: 16,
            rho: 0.8,
            noise_sigma: 1.0,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.speakers < 2 || self.emotion_classes < 2 {
            return Err(Error::Config("need at least 2 speakers and 2 emotions".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(alloc::format!(
                "rho must be in [0,1], got {}",
                self.rho
            )));
        }
        if self.d_audio == 0 || self.d_video == 0 {
            return Err(Error::Config("feature dims must be positive".into()));
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(Error::Config(alloc::format!(
                "segment count range {}..={} invalid",
                self.n_min,
                self.n_max
            )));
        }
        // The split rule (clip % 5: 1 -> validation, 2 -> test) needs at
        // least three clips so every speaker reaches every split.
        if self.clips_per_speaker < 3 {
            return Err(Error::Config("need at least 3 clips per speaker".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// One clip: per-segment features and both labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub speaker: usize,
    pub emotion: usize,
    pub split: Split,
    /// True segment count before padding.
    pub n: usize,
    /// `n x d_audio` row-major.
    pub audio: Vec<f64>,
    /// `n x d_video` row-major.
    pub video: Vec<f64>,
}

/// A labelled clip collection with its feature geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub emotion_classes: usize,
    pub speakers: usize,
    pub d_audio: usize,
    pub d_video: usize,
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Clip> {
        self.clips.iter().filter(|c| c.split == split).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

fn unit_direction(dim: usize, rng: &mut rng::DetRng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng::standard_normal(rng)).collect();
    let norm = crate::math::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Generate a dataset from the recipe. Deterministic in the seed.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let e_classes = spec.emotion_classes;

    let mut mean_rng = rng::derive(spec.seed, 0);
    let mu_audio_emotion: Vec<Vec<f64>> = (0..e_classes)
        .map(|_| unit_direction(spec.d_audio, &mut mean_rng))
        .collect();
    let mu_audio_speaker: Vec<Vec<f64>> = (0..spec.speakers)
        .map(|_| unit_direction(spec.d_audio, &mut mean_rng))
        .collect();
    let mu_video_emotion: Vec<Vec<f64>> = (0..e_classes)
        .map(|_| unit_direction(spec.d_video, &mut mean_rng))
        .collect();
    let mu_video_speaker: Vec<Vec<f64>> = (0..spec.speakers)
        .map(|_| unit_direction(spec.d_video, &mut mean_rng))
        .collect();

    let mut clip_rng = rng::derive(spec.seed, 1);
    let mut clips = Vec::with_capacity(spec.speakers * spec.clips_per_speaker);
    for speaker in 0..spec.speakers {
        for c in 0..spec.clips_per_speaker {
            // (1-rho) * uniform + rho * onehot(speaker mod E).
            let emotion = if clip_rng.gen_range(0.0..1.0) < spec.rho {
                speaker % e_classes
            } else {
                clip_rng.gen_range(0..e_classes)
            };
            let n = clip_rng.gen_range(spec.n_min..=spec.n_max);
            let mut audio = Vec::with_capacity(n * spec.d_audio);
            let mut video = Vec::with_capacity(n * spec.d_video);
            for _ in 0..n {
                for d in 0..spec.d_audio {
                    audio.push(
                        mu_audio_emotion[emotion][d]
                            + mu_audio_speaker[speaker][d]
                            + spec.noise_sigma * rng::standard_normal(&mut clip_rng),
                    );
                }
                for d in 0..spec.d_video {
                    video.push(
                        mu_video_emotion[emotion][d]
                            + mu_video_speaker[speaker][d]
                            + spec.noise_sigma * rng::standard_normal(&mut clip_rng),
                    );
                }
            }
            let split = match c % 5 {
                1 => Split::Validation,
                2 => Split::Test,
                _ => Split::Train,
            };
            clips.push(Clip {
                speaker,
                emotion,
                split,
                n,
                audio,
                video,
            });
        }
    }
    Ok(Dataset {
        emotion_classes: e_classes,
        speakers: spec.speakers,
        d_audio: spec.d_audio,
        d_video: spec.d_video,
        clips,
    })
}

/// A clip padded to a fixed segment count, with its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedClip {
    /// `[n_max, d_audio]`.
    pub audio: DenseArray,
    /// `[n_max, d_video]`.
    pub video: DenseArray,
    /// `[n_max]`, `n` ones then zeros.
    pub mask: Vec<f64>,
}

/// Extend a clip to `n_max` segments with `pad_value`; refuses to truncate.
pub fn pad_clip(clip: &Clip, n_max: usize, pad_value: f64) -> Result<PaddedClip> {
    if clip.n > n_max {
        return Err(Error::Truncation {
            len: clip.n,
            max: n_max,
        });
    }
    let d_a = clip.audio.len() / clip.n;
    let d_v = clip.video.len() / clip.n;
    let mut audio = clip.audio.clone();
    audio.resize(n_max * d_a, pad_value);
    let mut video = clip.video.clone();
    video.resize(n_max * d_v, pad_value);
    let mut mask = vec![1.0; clip.n];
    mask.resize(n_max, 0.0);
    Ok(PaddedClip {
        audio: DenseArray::from_vec(&[n_max, d_a], audio)?,
        video: DenseArray::from_vec(&[n_max, d_v], video)?,
        mask,
    })
}

/// Assemble clips into one padded batch. Every clip is padded to the
/// longest clip in the batch; the mask records true segments.
pub fn batch_clips(
    clips: &[&Clip],
    pad_value: f64,
    d_audio: usize,
    d_video: usize,
) -> Result<crate::model::ClipBatch> {
    if clips.is_empty() {
        return Err(Error::Data("cannot batch zero clips".into()));
    }
    let n_max = clips.iter().map(|c| c.n).max().unwrap();
    let b = clips.len();
    let mut audio = Vec::with_capacity(b * n_max * d_audio);
    let mut video = Vec::with_capacity(b * n_max * d_video);
    let mut mask = Vec::with_capacity(b * n_max);
    let mut e_target = Vec::with_capacity(b);
    let mut s_target = Vec::with_capacity(b);
    for clip in clips {
        let padded = pad_clip(clip, n_max, pad_value)?;
        audio.extend_from_slice(padded.audio.data());
        video.extend_from_slice(padded.video.data());
        mask.extend_from_slice(&padded.mask);
        e_target.push(clip.emotion);
        s_target.push(clip.speaker);
    }
    Ok(crate::model::ClipBatch {
        audio: DenseArray::from_vec(&[b, n_max, d_audio], audio)?,
        video: DenseArray::from_vec(&[b, n_max, d_video], video)?,
        mask: DenseArray::from_vec(&[b, n_max], mask)?,
        e_target,
        s_target,
    })
}

/// Number of raw emotion classes a teacher distribution covers:
/// neutral, happiness, surprise, sadness, anger, disgust, fear, contempt.
pub const RAW_EMOTION_CLASSES: usize = 8;

/// A per-clip probability vector over the eight raw emotion classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: [f64; RAW_EMOTION_CLASSES],
}

impl LabelDistribution {
    pub fn new(probs: [f64; RAW_EMOTION_CLASSES]) -> Result<Self> {
        if probs.iter().any(|p| *p < 0.0) {
            return Err(Error::Data("label distribution has negative mass".into()));
        }
        let total: f64 = probs.iter().sum();
        if crate::math::abs(total - 1.0) > 1e-9 {
            return Err(Error::Data(alloc::format!(
                "label distribution sums to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64; RAW_EMOTION_CLASSES] {
        &self.probs
    }
}

/// Index of the most probable raw class; ties break to the lowest index.
pub fn dominant_label(dist: &LabelDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = i;
        }
    }
    best
}

/// Collapse the eight raw classes to five: the rare classes (surprise,
/// disgust, fear, contempt) merge into a single `other` class.
///
/// Raw order: 0 neutral, 1 happiness, 2 surprise, 3 sadness, 4 anger,
/// 5 disgust, 6 fear, 7 contempt. Collapsed: 0 neutral, 1 happiness,
/// 2 sadness, 3 anger, 4 other.
pub fn collapse_labels(raw: usize) -> Result<usize> {
    match raw {
        0 => Ok(0),
        1 => Ok(1),
        3 => Ok(2),
        4 => Ok(3),
        2 | 5 | 6 | 7 => Ok(4),
        other => Err(Error::Label {
            label: other,
            classes: RAW_EMOTION_CLASSES,
        }),
    }
}

/// Drop all clips of speakers in the bottom `p` percentile of total
/// segment count.
///
/// The cutoff is the count at 0-based sorted index `ceil(p*n/100)`
/// (capped at the top), and a speaker is removed only when its count is
/// strictly below the cutoff. With p = 0 nothing is removed, and when
/// every speaker has the same count nothing is removed at any p.
pub fn filter_bottom_percentile(dataset: &Dataset, p: f64) -> Result<Dataset> {
    if !(0.0..100.0).contains(&p) {
        return Err(Error::Config(alloc::format!(
            "percentile must be in [0, 100), got {p}"
        )));
    }
    let mut counts = alloc::collections::BTreeMap::new();
    for clip in &dataset.clips {
        *counts.entry(clip.speaker).or_insert(0usize) += clip.n;
    }
    if counts.is_empty() {
        return Ok(dataset.clone());
    }
    let mut sorted: Vec<usize> = counts.values().copied().collect();
    sorted.sort_unstable();
    let idx = libm::ceil(p * sorted.len() as f64 / 100.0) as usize;
    let cutoff = sorted[core::cmp::min(idx, sorted.len() - 1)];

    let clips = dataset
        .clips
        .iter()
        .filter(|c| counts[&c.speaker] >= cutoff)
        .cloned()
        .collect();
    Ok(Dataset {
        clips,
        ..dataset.clone()
    })
}
