//! Frame and text token encoders, the temporal aggregator, and momentum twins.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{check_width, LayerNorm, Linear, SelfAttentionBlock};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Token width of both frame patches and words.
    pub token_width: usize,
    pub frame_tokens: usize,
    pub text_tokens: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Width of the shared frame/text/video embedding space.
    pub joint_dim: usize,
    /// Number of learned temporal positions (frames per video).
    pub max_frames: usize,
    pub temporal_heads: usize,
    pub temporal_ffn_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            token_width: 32,
            frame_tokens: 4,
            text_tokens: 4,
            layers: 2,
            heads: 2,
            ffn_hidden: 64,
            joint_dim: 16,
            max_frames: 16,
            temporal_heads: 2,
            temporal_ffn_hidden: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.token_width == 0 || self.joint_dim == 0 || self.frame_tokens == 0 || self.text_tokens == 0 {
            return bad("encoder widths and token counts must be positive");
        }
        if self.heads == 0 || !self.token_width.is_multiple_of(self.heads) {
            return bad("token_width must be divisible by heads");
        }
        if self.temporal_heads == 0 || !self.joint_dim.is_multiple_of(self.temporal_heads) {
            return bad("joint_dim must be divisible by temporal_heads");
        }
        if self.max_frames == 0 {
            return bad("max_frames must be positive");
        }
        Ok(())
    }
}

/// `k` tokens of width `D`; position 0 is the [CLS] slot and is always valid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TokenSequence<T> {
    pub tokens: Tensor<T>,
    pub pad_mask: Vec<bool>,
}

impl<T: Scalar> TokenSequence<T> {
    pub fn new(tokens: Tensor<T>, pad_mask: Vec<bool>) -> Result<Self> {
        if tokens.shape().len() != 2 {
            return Err(shape_err("token_sequence", format!("expected [k, D], got {:?}", tokens.shape())));
        }
        if pad_mask.len() != tokens.rows() {
            return Err(shape_err("token_sequence", format!("{} mask entries for {} tokens", pad_mask.len(), tokens.rows())));
        }
        if !pad_mask[0] {
            return Err(shape_err("token_sequence", "position 0 must be valid"));
        }
        Ok(Self { tokens, pad_mask })
    }

    /// Every position valid.
    pub fn dense(tokens: Tensor<T>) -> Result<Self> {
        let k = tokens.rows();
        Self::new(tokens, vec![true; k])
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }

    fn mask(&self) -> Option<&[bool]> {
        if self.pad_mask.iter().all(|&b| b) { None } else { Some(&self.pad_mask) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Frame,
    Text,
    Video,
}

/// Unit-norm vector in the joint space.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    pub vector: Vec<T>,
    pub kind: EmbeddingKind,
}

impl<T: Scalar> Embedding<T> {
    pub fn new(vector: Vec<T>, kind: EmbeddingKind) -> Result<Self> {
        let n = crate::scalar::norm(&vector).to_f64_lossy();
        if (n - 1.0).abs() > crate::scalar::unit_tolerance::<T>() {
            return Err(Error::NotUnitNorm { norm: n });
        }
        Ok(Self { vector, kind })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Outputs of one token encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct EncodedTokens {
    /// `[k, D]` final-normalized token states (consumed by the fusion model).
    pub hidden: Var,
    /// `[1, d_joint]` unit-norm projection of the [CLS] state.
    pub embedding: Var,
}

/// Self-attention stack over a token sequence plus a [CLS] projection head.
#[derive(Clone, Debug)]
pub struct TokenEncoder {
    pub positions: ParamId,
    pub blocks: Vec<SelfAttentionBlock>,
    pub norm_final: LayerNorm,
    pub project: Linear,
    pub tokens: usize,
    pub width: usize,
}

impl TokenEncoder {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, tokens: usize, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let positions = store.add_normal(format!("{name}.positions"), &[tokens, cfg.token_width], 0.1, rng);
        let blocks = (0..cfg.layers)
            .map(|l| SelfAttentionBlock::new(store, &format!("{name}.layer{l}"), cfg.token_width, cfg.heads, cfg.ffn_hidden, rng))
            .collect();
        let norm_final = LayerNorm::new(store, &format!("{name}.norm_final"), cfg.token_width);
        let project = Linear::new(store, &format!("{name}.project"), cfg.token_width, cfg.joint_dim, true, rng);
        Self { positions, blocks, norm_final, project, tokens, width: cfg.token_width }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, seq: &TokenSequence<T>) -> Result<EncodedTokens> {
        check_width("token_encoder", seq.width(), self.width)?;
        if seq.len() != self.tokens {
            return Err(shape_err("token_encoder", format!("{} tokens, expected {}", seq.len(), self.tokens)));
        }
        let x = g.leaf(&seq.tokens, false);
        let mut x = g.add(x, p.get(self.positions))?;
        for block in &self.blocks {
            x = block.forward(g, p, x, seq.mask())?;
        }
        let hidden = self.norm_final.forward(g, p, x)?;
        let cls = g.slice_rows(hidden, 0, 1)?;
        let z = self.project.forward(g, p, cls)?;
        let embedding = g.l2_normalize_rows(z)?;
        Ok(EncodedTokens { hidden, embedding })
    }
}

/// One transformer layer over frame embeddings with learned temporal
/// positions, mean-pooled over frames and re-normalized.
#[derive(Clone, Debug)]
pub struct TemporalModule {
    pub positions: ParamId,
    pub block: SelfAttentionBlock,
    pub max_frames: usize,
    pub dim: usize,
}

impl TemporalModule {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let positions = store.add_normal(format!("{name}.positions"), &[cfg.max_frames, cfg.joint_dim], 0.1, rng);
        let block = SelfAttentionBlock::new(store, &format!("{name}.layer"), cfg.joint_dim, cfg.temporal_heads, cfg.temporal_ffn_hidden, rng);
        Self { positions, block, max_frames: cfg.max_frames, dim: cfg.joint_dim }
    }

    /// `frames: [n, d_joint]` with `1 <= n <= max_frames` -> `[1, d_joint]` unit norm.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, frames: Var) -> Result<Var> {
        let (n, d) = g.shape(frames);
        check_width("temporal", d, self.dim)?;
        if n > self.max_frames {
            return Err(shape_err("temporal", format!("{n} frames exceed {} positions", self.max_frames)));
        }
        let pos = g.slice_rows(p.get(self.positions), 0, n)?;
        let x = g.add(frames, pos)?;
        let x = self.block.forward(g, p, x, None)?;
        let pooled = g.mean_rows(x)?;
        g.l2_normalize_rows(pooled)
    }
}

/// Frame encoder plus temporal aggregator; parameters live in one store (θ^v).
#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub frame: TokenEncoder,
    pub temporal: TemporalModule,
}

impl VisionEncoder {
    pub fn build<T: Scalar, R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> (Self, ParamStore<T>) {
        let mut store = ParamStore::new();
        let frame = TokenEncoder::new(&mut store, "frame", cfg.frame_tokens, cfg, rng);
        let temporal = TemporalModule::new(&mut store, "temporal", cfg, rng);
        (Self { frame, temporal }, store)
    }

    /// Encode every frame of a video, then aggregate. Returns per-frame outputs and `f^v`.
    pub fn forward_video<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        frames: &[&TokenSequence<T>],
    ) -> Result<(Vec<EncodedTokens>, Var)> {
        if frames.is_empty() {
            return Err(Error::EmptyFrameList);
        }
        let encoded = frames.iter().map(|f| self.frame.forward(g, p, f)).collect::<Result<Vec<_>>>()?;
        let embs: Vec<Var> = encoded.iter().map(|e| e.embedding).collect();
        let stacked = g.concat_rows(&embs)?;
        let video = self.temporal.forward(g, p, stacked)?;
        Ok((encoded, video))
    }
}

/// Text token encoder (θ^l).
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub text: TokenEncoder,
}

impl TextEncoder {
    pub fn build<T: Scalar, R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> (Self, ParamStore<T>) {
        let mut store = ParamStore::new();
        let text = TokenEncoder::new(&mut store, "text", cfg.text_tokens, cfg, rng);
        (Self { text }, store)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, seq: &TokenSequence<T>) -> Result<EncodedTokens> {
        self.text.forward(g, p, seq)
    }
}

fn embedding_of<T: Scalar>(g: &Graph<T>, v: Var, kind: EmbeddingKind) -> Embedding<T> {
    Embedding { vector: g.value(v).to_vec(), kind }
}

/// Frame embedding `f^e` under the given parameters.
pub fn encode_frame<T: Scalar>(frame: &TokenSequence<T>, enc: &VisionEncoder, params: &ParamStore<T>) -> Result<Embedding<T>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let out = enc.frame.forward(&mut g, &p, frame)?;
    Ok(embedding_of(&g, out.embedding, EmbeddingKind::Frame))
}

/// Text embedding `f^l` under the given parameters.
pub fn encode_text<T: Scalar>(text: &TokenSequence<T>, enc: &TextEncoder, params: &ParamStore<T>) -> Result<Embedding<T>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let out = enc.forward(&mut g, &p, text)?;
    Ok(embedding_of(&g, out.embedding, EmbeddingKind::Text))
}

/// Video embedding `f^v = T([f^e_1 .. f^e_n])`.
pub fn aggregate_temporal<T: Scalar>(frames: &[Embedding<T>], enc: &VisionEncoder, params: &ParamStore<T>) -> Result<Embedding<T>> {
    if frames.is_empty() {
        return Err(Error::EmptyFrameList);
    }
    let d = frames[0].dim();
    let rows: Vec<Vec<T>> = frames.iter().map(|f| f.vector.clone()).collect();
    if rows.iter().any(|r| r.len() != d) {
        return Err(shape_err("aggregate_temporal", "frame embeddings differ in width"));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(rows.len(), d, rows.concat())?;
    let v = enc.temporal.forward(&mut g, &p, x)?;
    Ok(embedding_of(&g, v, EmbeddingKind::Video))
}

/// Online parameters θ and their exponential-moving-average twin θ̂.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MomentumPair<T> {
    pub online: ParamStore<T>,
    pub momentum: ParamStore<T>,
    pub m: f64,
}

impl<T: Scalar> MomentumPair<T> {
    /// Twin starts as an exact copy of `online`.
    pub fn new(online: ParamStore<T>, m: f64) -> Result<Self> {
        check_coefficient(m)?;
        let momentum = online.clone();
        Ok(Self { online, momentum, m })
    }

    pub fn from_parts(online: ParamStore<T>, momentum: ParamStore<T>, m: f64) -> Result<Self> {
        check_coefficient(m)?;
        online.check_layout(&momentum, "momentum_pair")?;
        Ok(Self { online, momentum, m })
    }

    /// θ̂ <- m·θ̂ + (1 - m)·θ, elementwise. Online parameters are untouched.
    pub fn update(&mut self) {
        let m = T::lit(self.m);
        let one_minus = T::lit(1.0 - self.m);
        for (hat, theta) in self.momentum.tensors_mut().zip(self.online.tensors()) {
            for (h, &t) in hat.values_mut().iter_mut().zip(theta.values()) {
                *h = m * *h + one_minus * t;
            }
            hat.clear_grad();
        }
    }
}

fn check_coefficient(m: f64) -> Result<()> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("momentum coefficient {m} outside [0, 1]")))
    }
}

/// Functional form of the momentum update.
pub fn momentum_update<T: Scalar>(mut pair: MomentumPair<T>) -> MomentumPair<T> {
    pair.update();
    pair
}
