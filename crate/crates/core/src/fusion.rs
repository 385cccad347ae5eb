//! Token-level cross-attention fusion of one frame with one text, and the
//! binary matching head on top of it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::TokenSequence;
use crate::error::{Error, Result};
use crate::nn::{check_width, Attention, FeedForward, LayerNorm, Linear};
use crate::params::{BoundParams, ParamStore};
use crate::scalar::Scalar;
use crate::sfp::SalientSet;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub layers: usize,
    /// Fused token width `d_fuse`.
    pub width: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { layers: 2, width: 32, heads: 2, ffn_hidden: 64 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig("fusion needs >= 1 layer and width divisible by heads".into()));
        }
        Ok(())
    }
}

/// Self-attention over text, cross-attention from text to frame patches, feed-forward.
#[derive(Clone, Debug)]
pub struct FusionLayer {
    pub norm_self: LayerNorm,
    pub self_attn: Attention,
    pub norm_query: LayerNorm,
    pub norm_context: LayerNorm,
    pub cross_attn: Attention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl FusionLayer {
    fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, cfg: &FusionConfig, rng: &mut R) -> Self {
        let d = cfg.width;
        Self {
            norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), d),
            self_attn: Attention::new(store, &format!("{name}.self_attn"), d, d, cfg.heads, rng),
            norm_query: LayerNorm::new(store, &format!("{name}.norm_query"), d),
            norm_context: LayerNorm::new(store, &format!("{name}.norm_context"), d),
            cross_attn: Attention::new(store, &format!("{name}.cross_attn"), d, d, cfg.heads, rng),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), d),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, cfg.ffn_hidden, rng),
        }
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        text: Var,
        text_mask: Option<&[bool]>,
        frame: Var,
        frame_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let h = self.norm_self.forward(g, p, text)?;
        let a = self.self_attn.forward(g, p, h, h, text_mask)?;
        let x = g.add(text, a)?;
        let q = self.norm_query.forward(g, p, x)?;
        let c = self.norm_context.forward(g, p, frame)?;
        let a = self.cross_attn.forward(g, p, q, c, frame_mask)?;
        let x = g.add(x, a)?;
        let h = self.norm_ffn.forward(g, p, x)?;
        let f = self.ffn.forward(g, p, h)?;
        g.add(x, f)
    }
}

/// Fusion transformer plus the two-logit matching head. Logit order is (match, non-match).
#[derive(Clone, Debug)]
pub struct FusionModel {
    pub frame_in: Linear,
    pub text_in: Linear,
    pub layers: Vec<FusionLayer>,
    pub norm_final: LayerNorm,
    pub head: Linear,
    pub frame_width: usize,
    pub text_width: usize,
    pub width: usize,
}

/// Graph outputs of one fusion pass.
#[derive(Clone, Copy, Debug)]
pub struct FusionOutput {
    /// `[1, d_fuse]` joint representation read at the text [CLS] position.
    pub joint: Var,
    /// `[1, 2]` logits, (match, non-match).
    pub logits: Var,
}

impl FusionModel {
    pub fn build<T: Scalar, R: Rng>(cfg: &FusionConfig, frame_width: usize, text_width: usize, rng: &mut R) -> (Self, ParamStore<T>) {
        let mut store = ParamStore::new();
        let frame_in = Linear::new(&mut store, "fusion.frame_in", frame_width, cfg.width, true, rng);
        let text_in = Linear::new(&mut store, "fusion.text_in", text_width, cfg.width, true, rng);
        let layers = (0..cfg.layers).map(|l| FusionLayer::new(&mut store, &format!("fusion.layer{l}"), cfg, rng)).collect();
        let norm_final = LayerNorm::new(&mut store, "fusion.norm_final", cfg.width);
        let head = Linear::new(&mut store, "fusion.head", cfg.width, 2, true, rng);
        let model = Self { frame_in, text_in, layers, norm_final, head, frame_width, text_width, width: cfg.width };
        (model, store)
    }

    /// Fuse `frame: [k_v, D_v]` with `text: [k_l, D_l]`; text tokens are the queries.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        frame: Var,
        frame_mask: &[bool],
        text: Var,
        text_mask: &[bool],
    ) -> Result<FusionOutput> {
        check_width("cross_fuse.frame", g.shape(frame).1, self.frame_width)?;
        check_width("cross_fuse.text", g.shape(text).1, self.text_width)?;
        let fm = dense_or(frame_mask);
        let tm = dense_or(text_mask);
        let f = self.frame_in.forward(g, p, frame)?;
        let mut x = self.text_in.forward(g, p, text)?;
        for layer in &self.layers {
            x = layer.forward(g, p, x, tm, f, fm)?;
        }
        let x = self.norm_final.forward(g, p, x)?;
        let joint = g.slice_rows(x, 0, 1)?;
        let logits = self.head.forward(g, p, joint)?;
        Ok(FusionOutput { joint, logits })
    }
}

fn dense_or(mask: &[bool]) -> Option<&[bool]> {
    if mask.iter().all(|&b| b) { None } else { Some(mask) }
}

/// Joint [CLS] representation of a (frame, text) token pair.
pub fn cross_fuse<T: Scalar>(
    frame: &TokenSequence<T>,
    text: &TokenSequence<T>,
    model: &FusionModel,
    params: &ParamStore<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let f = g.leaf(&frame.tokens, false);
    let t = g.leaf(&text.tokens, false);
    let out = model.forward(&mut g, &p, f, &frame.pad_mask, t, &text.pad_mask)?;
    Ok(g.to_tensor(out.joint))
}

/// Matching head applied to a joint representation.
pub fn head_logits<T: Scalar>(joint: &Tensor<T>, model: &FusionModel, params: &ParamStore<T>) -> Result<[T; 2]> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let j = g.leaf(joint, false);
    let l = model.head.forward(&mut g, &p, j)?;
    let v = g.value(l);
    Ok([v[0], v[1]])
}

/// Softmax mass on the match class.
pub fn match_prob<T: Scalar>(logits: [T; 2]) -> T {
    // 1 / (1 + exp(non - match)), written to stay finite for large gaps.
    let d = logits[1] - logits[0];
    if d > T::zero() {
        let e = (-d).exp();
        e / (T::one() + e)
    } else {
        T::one() / (T::one() + d.exp())
    }
}

/// Mean of per-frame match probabilities.
pub fn mean_match_prob<T: Scalar>(probs: &[T]) -> Result<T> {
    if probs.is_empty() {
        return Err(Error::EmptySalientSet);
    }
    Ok(probs.iter().fold(T::zero(), |s, &p| s + p) / T::from_usize_lossy(probs.len()))
}

/// Reusable forward-only scorer: parameters are bound once and the graph is
/// rewound after every pass.
pub struct FusionScorer<'a, T: Scalar> {
    model: &'a FusionModel,
    graph: Graph<T>,
    bound: BoundParams,
    mark: usize,
}

impl<'a, T: Scalar> FusionScorer<'a, T> {
    pub fn new(model: &'a FusionModel, params: &ParamStore<T>) -> Self {
        let mut graph = Graph::new();
        let bound = params.bind(&mut graph, false);
        let mark = graph.len();
        Self { model, graph, bound, mark }
    }

    pub fn logits(&mut self, frame: &TokenSequence<T>, text: &TokenSequence<T>) -> Result<[T; 2]> {
        self.graph.truncate(self.mark);
        let g = &mut self.graph;
        let f = g.leaf(&frame.tokens, false);
        let t = g.leaf(&text.tokens, false);
        let out = self.model.forward(g, &self.bound, f, &frame.pad_mask, t, &text.pad_mask)?;
        let v = g.value(out.logits);
        Ok([v[0], v[1]])
    }

    pub fn prob(&mut self, frame: &TokenSequence<T>, text: &TokenSequence<T>) -> Result<T> {
        self.logits(frame, text).map(match_prob)
    }
}

/// Video-level score: mean match probability over the salient frames.
pub fn video_match_score<T: Scalar>(
    frames: &[TokenSequence<T>],
    text: &TokenSequence<T>,
    salient: &SalientSet<T>,
    scorer: &mut FusionScorer<'_, T>,
) -> Result<T> {
    if salient.indices.is_empty() {
        return Err(Error::EmptySalientSet);
    }
    let probs = salient.indices.iter().map(|&j| scorer.prob(&frames[j], text)).collect::<Result<Vec<_>>>()?;
    mean_match_prob(&probs)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::grad_check;

    fn seq(seed: u64, k: usize, d: usize, mask: Vec<bool>) -> TokenSequence<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        TokenSequence::new(Tensor::new(vec![k, d], v).unwrap(), mask).unwrap()
    }

    fn small() -> (FusionModel, ParamStore<f64>) {
        let cfg = FusionConfig { layers: 2, width: 16, heads: 2, ffn_hidden: 24 };
        FusionModel::build(&cfg, 8, 6, &mut ChaCha8Rng::seed_from_u64(17))
    }

    #[test]
    fn cross_fuse_contract() {
        let (model, store) = small();
        let f = seq(1, 3, 8, vec![true; 3]);
        let t = seq(2, 4, 6, vec![true; 4]);
        let a = cross_fuse(&f, &t, &model, &store).unwrap();
        let b = cross_fuse(&f, &t, &model, &store).unwrap();
        assert_eq!(a.shape(), &[1, 16]);
        assert_eq!(a, b);
        assert!(cross_fuse(&t, &f, &model, &store).is_err());
    }

    #[test]
    fn masked_frame_tokens_are_inert() {
        let (model, store) = small();
        let f = seq(3, 3, 8, vec![true, true, false]);
        let mut f2 = f.clone();
        f2.tokens.values_mut()[16..].iter_mut().for_each(|v| *v = -4.0);
        let t = seq(4, 4, 6, vec![true, true, true, false]);
        let mut t2 = t.clone();
        t2.tokens.values_mut()[18..].iter_mut().for_each(|v| *v = 9.0);
        let a = cross_fuse(&f, &t, &model, &store).unwrap();
        assert_eq!(a, cross_fuse(&f2, &t, &model, &store).unwrap());
        assert_eq!(a, cross_fuse(&f2, &t2, &model, &store).unwrap());
    }

    #[test]
    fn match_prob_examples() {
        assert_eq!(match_prob([0.3f64, 0.3]), 0.5);
        let p = match_prob([2.0f64, 0.0]);
        assert!((p - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.880797).abs() < 1e-6);
        assert!((match_prob([1.2f64, -0.4]) - match_prob([1.2 + 37.0, -0.4 + 37.0])).abs() < 1e-15);
        assert!((match_prob([1.0f64, 2.0]) + match_prob([2.0f64, 1.0]) - 1.0).abs() < 1e-15);
        assert!(match_prob([800.0f64, 0.0]) <= 1.0 && match_prob([0.0f64, 800.0]) >= 0.0);
    }

    #[test]
    fn match_prob_is_increasing_in_gap() {
        let mut last = 0.0f64;
        for i in -50..50 {
            let p = match_prob([i as f64 * 0.3, 0.0]);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn video_score_is_mean_of_salient_probs() {
        let (model, store) = small();
        let frames: Vec<_> = (0..4).map(|s| seq(10 + s, 3, 8, vec![true; 3])).collect();
        let t = seq(5, 4, 6, vec![true; 4]);
        let mut scorer = FusionScorer::new(&model, &store);
        let p: Vec<f64> = frames.iter().map(|f| scorer.prob(f, &t).unwrap()).collect();
        let one = SalientSet { indices: vec![2], source_scores: vec![] };
        assert_eq!(video_match_score(&frames, &t, &one, &mut scorer).unwrap(), p[2]);
        let two = SalientSet { indices: vec![1, 3], source_scores: vec![] };
        let s = video_match_score(&frames, &t, &two, &mut scorer).unwrap();
        assert!((s - (p[1] + p[3]) / 2.0).abs() < 1e-15);
        let none = SalientSet { indices: vec![], source_scores: vec![] };
        assert!(matches!(video_match_score(&frames, &t, &none, &mut scorer), Err(Error::EmptySalientSet)));
        assert_eq!(mean_match_prob(&[0.2, 0.8]).unwrap(), 0.5);
        assert!((mean_match_prob(&[0.7f64, 0.7, 0.7]).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn scorer_matches_one_shot_forward() {
        let (model, store) = small();
        let f = seq(21, 3, 8, vec![true; 3]);
        let t = seq(22, 4, 6, vec![true; 4]);
        let joint = cross_fuse(&f, &t, &model, &store).unwrap();
        let direct = head_logits(&joint, &model, &store).unwrap();
        let mut scorer = FusionScorer::new(&model, &store);
        scorer.logits(&t.clone(), &t).ok();
        assert_eq!(scorer.logits(&f, &t).unwrap(), direct);
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let cfg = FusionConfig { layers: 2, width: 16, heads: 2, ffn_hidden: 16 };
        let (model, store) = FusionModel::build::<f64, _>(&cfg, 4, 4, &mut ChaCha8Rng::seed_from_u64(2));
        let f = seq(31, 3, 4, vec![true; 3]);
        let t = seq(32, 3, 4, vec![true, true, false]);
        let params: Vec<Tensor<f64>> = store.tensors().cloned().collect();
        let r = grad_check(
            |g, vars| {
                let p = BoundParams::from_vars(vars.to_vec());
                let fv = g.leaf(&f.tokens, false);
                let tv = g.leaf(&t.tokens, false);
                let out = model.forward(g, &p, fv, &f.pad_mask, tv, &t.pad_mask)?;
                let lse = g.log_sum_exp_rows(out.logits)?;
                let pick = g.slice_cols(out.logits, 0, 1)?;
                g.sub(lse, pick)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
