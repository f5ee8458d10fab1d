//! The two-branch multitask network with auxiliary disentanglement heads.
//!
//! One encoder per modality feeds both branches: per-segment features are
//! encoded, mean-pooled over unmasked segments, concatenated, and
//! projected into an emotion embedding and a speaker embedding. Each
//! embedding has a primary classifier for its own task and an auxiliary
//! classifier for the *other* task (emotion-from-speaker-embedding,
//! speaker-from-emotion-embedding). The auxiliary heads measure leakage
//! and, under the adversarial strategies, remove it; a gradient-reversal
//! node can be inserted where each auxiliary branch splits off.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{init_affine, ParamGroup, ParameterStore};
use crate::rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::DenseArray;

/// Dimensions of the network. The desk-scale defaults keep CPU runs in
/// seconds; paper-scale values (40/224 inputs, 2048 embeddings) are valid
/// configurations too.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_audio: usize,
    pub d_video: usize,
    /// Hidden sizes of the per-modality encoders (relu between layers).
    pub audio_widths: Vec<usize>,
    pub video_widths: Vec<usize>,
    pub emotion_emb_dim: usize,
    pub speaker_emb_dim: usize,
    /// Number of emotion classes E.
    pub emotion_classes: usize,
    /// Number of speakers S.
    pub speakers: usize,
    /// Hidden sizes of the auxiliary heads; empty = single affine layer.
    pub aux_hidden: Vec<usize>,
}

impl ModelConfig {
    pub fn desk_default(speakers: usize) -> Self {
        Self {
            d_audio: 12,
            d_video: 16,
            audio_widths: vec![32],
            video_widths: vec![32],
            emotion_emb_dim: 64,
            speaker_emb_dim: 64,
            emotion_classes: 5,
            speakers,
            aux_hidden: vec![],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_audio,
            self.d_video,
            self.emotion_emb_dim,
            self.speaker_emb_dim,
        ];
        if dims.iter().any(|&d| d == 0)
            || self.audio_widths.iter().any(|&d| d == 0)
            || self.video_widths.iter().any(|&d| d == 0)
            || self.aux_hidden.iter().any(|&d| d == 0)
            || self.audio_widths.is_empty()
            || self.video_widths.is_empty()
        {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        if self.emotion_classes < 2 {
            return Err(Error::Config("need at least 2 emotion classes".into()));
        }
        if self.speakers < 2 {
            return Err(Error::Config("need at least 2 speakers".into()));
        }
        Ok(())
    }
}

/// One padded minibatch: segment features, the padding mask, and both
/// task labels.
#[derive(Debug, Clone)]
pub struct ClipBatch {
    /// `[B, N, D_a]`.
    pub audio: DenseArray,
    /// `[B, N, D_v]`.
    pub video: DenseArray,
    /// `[B, N]` with entries in {0,1}; at least one 1 per row.
    pub mask: DenseArray,
    pub e_target: Vec<usize>,
    pub s_target: Vec<usize>,
}

impl ClipBatch {
    pub fn batch_size(&self) -> usize {
        self.audio.shape()[0]
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let (sa, sv, sm) = (self.audio.shape(), self.video.shape(), self.mask.shape());
        if sa.len() != 3 || sv.len() != 3 || sm.len() != 2 {
            return Err(Error::Dimension {
                op: "clip_batch",
                lhs: sa.to_vec(),
                rhs: sv.to_vec(),
            });
        }
        if sa[0] != sv[0] || sa[1] != sv[1] || sm[0] != sa[0] || sm[1] != sa[1] {
            return Err(Error::Dimension {
                op: "clip_batch",
                lhs: sa.to_vec(),
                rhs: sm.to_vec(),
            });
        }
        if sa[2] != cfg.d_audio || sv[2] != cfg.d_video {
            return Err(Error::Dimension {
                op: "clip_batch_features",
                lhs: vec![sa[2], sv[2]],
                rhs: vec![cfg.d_audio, cfg.d_video],
            });
        }
        if self.e_target.len() != sa[0] || self.s_target.len() != sa[0] {
            return Err(Error::Data(format!(
                "batch has {} clips but {} emotion / {} speaker labels",
                sa[0],
                self.e_target.len(),
                self.s_target.len()
            )));
        }
        for &e in &self.e_target {
            if e >= cfg.emotion_classes {
                return Err(Error::Label {
                    label: e,
                    classes: cfg.emotion_classes,
                });
            }
        }
        for &s in &self.s_target {
            if s >= cfg.speakers {
                return Err(Error::Label {
                    label: s,
                    classes: cfg.speakers,
                });
            }
        }
        Ok(())
    }
}

/// Tape nodes of the four heads and the two embeddings after a forward
/// pass; values can be pulled out of the tape while it is alive.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// Emotion logits from the emotion embedding, `[B, E]`.
    pub e_prim: NodeId,
    /// Speaker logits from the speaker embedding, `[B, S]`.
    pub s_prim: NodeId,
    /// Emotion logits read from the *speaker* embedding, `[B, E]`.
    pub e_aux: NodeId,
    /// Speaker logits read from the *emotion* embedding, `[B, S]`.
    pub s_aux: NodeId,
    pub emotion_emb: NodeId,
    pub speaker_emb: NodeId,
}

/// Detached copies of the forward values.
#[derive(Debug, Clone)]
pub struct ModelOutputs {
    pub e_prim: DenseArray,
    pub s_prim: DenseArray,
    pub e_aux: DenseArray,
    pub s_aux: DenseArray,
    pub emotion_emb: DenseArray,
    pub speaker_emb: DenseArray,
}

impl ForwardNodes {
    pub fn outputs(&self, tape: &Tape) -> ModelOutputs {
        ModelOutputs {
            e_prim: tape.value(self.e_prim).clone(),
            s_prim: tape.value(self.s_prim).clone(),
            e_aux: tape.value(self.e_aux).clone(),
            s_aux: tape.value(self.s_aux).clone(),
            emotion_emb: tape.value(self.emotion_emb).clone(),
            speaker_emb: tape.value(self.speaker_emb).clone(),
        }
    }
}

/// A forward pass: the output nodes plus the tape leaf of every store
/// parameter, aligned with the store's indices.
pub struct Forward {
    pub nodes: ForwardNodes,
    pub param_leaves: Vec<NodeId>,
}

impl Forward {
    /// Gradients per store parameter after `tape.backward`; `None` for
    /// parameters the loss does not reach.
    pub fn collect_grads(&self, tape: &Tape) -> Vec<Option<DenseArray>> {
        self.param_leaves
            .iter()
            .map(|&id| tape.grad(id).cloned())
            .collect()
    }
}

/// Indices into the parameter store for one affine layer.
#[derive(Debug, Clone, Copy)]
struct AffineIdx {
    w: usize,
    b: usize,
}

/// The built network: a parameter store plus the wiring indices.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParameterStore,
    audio_encoder: Vec<AffineIdx>,
    video_encoder: Vec<AffineIdx>,
    emotion_proj: AffineIdx,
    speaker_proj: AffineIdx,
    emotion_head: AffineIdx,
    speaker_head: AffineIdx,
    /// Chain on the emotion embedding predicting the speaker.
    emotion_aux: Vec<AffineIdx>,
    /// Chain on the speaker embedding predicting the emotion.
    speaker_aux: Vec<AffineIdx>,
}

/// Register an affine chain's parameters in the store.
///
/// Each component draws from its own derived RNG stream, so resizing one
/// component (e.g. the speaker embedding sweep) leaves every other
/// component's initial parameters untouched.
fn build_chain(
    store: &mut ParameterStore,
    prefix: &str,
    group: ParamGroup,
    dims: &[usize],
    seed: u64,
    stream: u64,
) -> Vec<AffineIdx> {
    let mut rng = rng::derive(seed, stream);
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let layer = init_affine(w[0], w[1], &mut rng);
            let wi = store.add(format!("{prefix}.{i}.w"), group, layer.weight);
            let bi = store.add(format!("{prefix}.{i}.b"), group, layer.bias);
            AffineIdx { w: wi, b: bi }
        })
        .collect()
}

pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut store = ParameterStore::new();

    let audio_dims: Vec<usize> = core::iter::once(cfg.d_audio)
        .chain(cfg.audio_widths.iter().copied())
        .collect();
    let video_dims: Vec<usize> = core::iter::once(cfg.d_video)
        .chain(cfg.video_widths.iter().copied())
        .collect();
    let concat_dim = *audio_dims.last().unwrap() + *video_dims.last().unwrap();

    let audio_encoder = build_chain(&mut store, "audio_enc", ParamGroup::Trunk, &audio_dims, seed, 0);
    let video_encoder = build_chain(&mut store, "video_enc", ParamGroup::Trunk, &video_dims, seed, 1);
    let emotion_proj = build_chain(
        &mut store,
        "emotion_proj",
        ParamGroup::Trunk,
        &[concat_dim, cfg.emotion_emb_dim],
        seed,
        2,
    )[0];
    let speaker_proj = build_chain(
        &mut store,
        "speaker_proj",
        ParamGroup::Trunk,
        &[concat_dim, cfg.speaker_emb_dim],
        seed,
        3,
    )[0];
    let emotion_head = build_chain(
        &mut store,
        "emotion_head",
        ParamGroup::EmotionHead,
        &[cfg.emotion_emb_dim, cfg.emotion_classes],
        seed,
        4,
    )[0];
    let speaker_head = build_chain(
        &mut store,
        "speaker_head",
        ParamGroup::SpeakerHead,
        &[cfg.speaker_emb_dim, cfg.speakers],
        seed,
        5,
    )[0];

    let mut emotion_aux_dims = vec![cfg.emotion_emb_dim];
    emotion_aux_dims.extend_from_slice(&cfg.aux_hidden);
    emotion_aux_dims.push(cfg.speakers);
    let emotion_aux = build_chain(
        &mut store,
        "emotion_aux",
        ParamGroup::EmotionAux,
        &emotion_aux_dims,
        seed,
        6,
    );

    let mut speaker_aux_dims = vec![cfg.speaker_emb_dim];
    speaker_aux_dims.extend_from_slice(&cfg.aux_hidden);
    speaker_aux_dims.push(cfg.emotion_classes);
    let speaker_aux = build_chain(
        &mut store,
        "speaker_aux",
        ParamGroup::SpeakerAux,
        &speaker_aux_dims,
        seed,
        7,
    );

    Ok(Model {
        cfg: cfg.clone(),
        store,
        audio_encoder,
        video_encoder,
        emotion_proj,
        speaker_proj,
        emotion_head,
        speaker_head,
        emotion_aux,
        speaker_aux,
    })
}

impl Model {
    /// Run the network on a batch. When `grl_lambda` is set, a
    /// gradient-reversal node is inserted between each embedding and its
    /// auxiliary head; forward values are identical either way.
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &ClipBatch,
        grl_lambda: Option<f64>,
    ) -> Result<Forward> {
        self.forward_overriding(tape, batch, grl_lambda, None)
    }

    /// Like [`Model::forward`], but one store parameter reads its value
    /// from an existing tape node instead of a fresh leaf, so gradients
    /// w.r.t. that node can be checked against finite differences of the
    /// whole graph.
    pub fn forward_overriding(
        &self,
        tape: &mut Tape,
        batch: &ClipBatch,
        grl_lambda: Option<f64>,
        override_param: Option<(usize, NodeId)>,
    ) -> Result<Forward> {
        batch.validate(&self.cfg)?;
        if let Some((idx, node)) = override_param {
            if idx >= self.store.len()
                || tape.value(node).shape() != self.store.param(idx).value.shape()
            {
                return Err(Error::Config(format!(
                    "override for parameter {idx} does not match the store"
                )));
            }
        }

        // Leaves for every parameter, in store order.
        let param_leaves: Vec<NodeId> = self
            .store
            .iter()
            .enumerate()
            .map(|(idx, p)| match override_param {
                Some((o, node)) if o == idx => node,
                _ => tape.leaf(p.value.clone()),
            })
            .collect();
        let affine = |tape: &mut Tape, x: NodeId, idx: AffineIdx| -> Result<NodeId> {
            let h = tape.matmul(x, param_leaves[idx.w])?;
            tape.add_bias(h, param_leaves[idx.b])
        };
        let chain = |tape: &mut Tape, mut x: NodeId, layers: &[AffineIdx]| -> Result<NodeId> {
            for (i, idx) in layers.iter().enumerate() {
                x = affine(tape, x, *idx)?;
                if i + 1 < layers.len() {
                    x = tape.relu(x);
                }
            }
            Ok(x)
        };

        let b = batch.batch_size();
        let n = batch.audio.shape()[1];

        // Encode per segment, pool over unmasked segments.
        let encode = |tape: &mut Tape, x: &DenseArray, layers: &[AffineIdx]| -> Result<NodeId> {
            let d_in = x.shape()[2];
            let leaf = tape.leaf(x.clone());
            let flat = tape.reshape(leaf, &[b * n, d_in])?;
            let enc = chain(tape, flat, layers)?;
            let d_out = tape.value(enc).shape()[1];
            let seg = tape.reshape(enc, &[b, n, d_out])?;
            tape.masked_mean_pool(seg, &batch.mask)
        };

        let audio_pooled = encode(tape, &batch.audio, &self.audio_encoder)?;
        let video_pooled = encode(tape, &batch.video, &self.video_encoder)?;
        let joint = tape.concat(audio_pooled, video_pooled)?;

        let emotion_emb = affine(tape, joint, self.emotion_proj)?;
        let speaker_emb = affine(tape, joint, self.speaker_proj)?;

        let e_prim = affine(tape, emotion_emb, self.emotion_head)?;
        let s_prim = affine(tape, speaker_emb, self.speaker_head)?;

        // Auxiliary branches split off the embeddings; GRL sits at the split.
        let mut aux_in_emotion = emotion_emb;
        let mut aux_in_speaker = speaker_emb;
        if let Some(lambda) = grl_lambda {
            aux_in_emotion = tape.grad_reverse(emotion_emb, lambda)?;
            aux_in_speaker = tape.grad_reverse(speaker_emb, lambda)?;
        }
        let s_aux = chain(tape, aux_in_emotion, &self.emotion_aux)?;
        let e_aux = chain(tape, aux_in_speaker, &self.speaker_aux)?;

        Ok(Forward {
            nodes: ForwardNodes {
                e_prim,
                s_prim,
                e_aux,
                s_aux,
                emotion_emb,
                speaker_emb,
            },
            param_leaves,
        })
    }
}
