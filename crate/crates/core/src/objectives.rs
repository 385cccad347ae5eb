//! Video-level and frame-level momentum contrastive losses, the salient frame
//! matching loss, and their unweighted sum.
//!
//! Every InfoNCE term is written as `lse(positives ∪ negatives) − lse(positives)`
//! over similarities divided by the temperature. Momentum features and bank
//! entries enter the graph as constants, so no gradient can reach them.

use crate::banks::MemoryBank;
use crate::error::{shape_err, Error, Result};
use crate::fusion::FusionModel;
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

/// Online graph features and momentum values for one video-text pair.
#[derive(Clone, Debug)]
pub struct PairFeatures<T> {
    /// `f^v_i`, `[1, d]`.
    pub video: Var,
    /// `f^l_i`, `[1, d]`.
    pub text: Var,
    /// `f^e_{i,j}` for every sampled frame, each `[1, d]`.
    pub frames: Vec<Var>,
    pub video_hat: Vec<T>,
    pub text_hat: Vec<T>,
    pub frames_hat: Vec<Vec<T>>,
    /// Indices into `frames` forming the positive set `S_i`.
    pub positives: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ContrastiveBatch<T> {
    pub pairs: Vec<PairFeatures<T>>,
    pub tau: T,
}

impl<T: Scalar> ContrastiveBatch<T> {
    fn check(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if self.tau <= T::zero() || !self.tau.is_finite() {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        for p in &self.pairs {
            if p.frames.len() != p.frames_hat.len() {
                return Err(shape_err("contrastive_batch", "online and momentum frames are not aligned"));
            }
        }
        Ok(())
    }
}

/// Multiple-positive InfoNCE for one query block.
///
/// `queries: [r, d]` are online features. `keys` holds `n_pos` positive rows
/// followed by negatives. Returns `lse(all r·K logits) − lse(r·n_pos positive logits)`.
pub fn nce_term<T: Scalar>(g: &mut Graph<T>, queries: Var, keys: &[&[T]], n_pos: usize, tau: T) -> Result<Var> {
    let (r, d) = g.shape(queries);
    if n_pos == 0 || n_pos > keys.len() {
        return Err(shape_err("nce_term", format!("{n_pos} positives among {} keys", keys.len())));
    }
    if keys.iter().any(|k| k.len() != d) {
        return Err(shape_err("nce_term", "key width differs from query width"));
    }
    let k = keys.len();
    let mut kt = vec![T::zero(); d * k];
    for (c, key) in keys.iter().enumerate() {
        for (row, &v) in key.iter().enumerate() {
            kt[row * k + c] = v;
        }
    }
    let kt = g.constant(d, k, kt)?;
    let sims = g.matmul(queries, kt)?;
    let logits = g.scale(sims, T::one() / tau)?;
    let pos = g.slice_cols(logits, 0, n_pos)?;
    let pos = g.reshape(pos, 1, r * n_pos)?;
    let all = g.reshape(logits, 1, r * k)?;
    let lse_all = g.log_sum_exp_rows(all)?;
    let lse_pos = g.log_sum_exp_rows(pos)?;
    g.sub(lse_all, lse_pos)
}

fn batch_mean<T: Scalar>(g: &mut Graph<T>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, T::one() / T::from_usize_lossy(terms.len()))
}

fn keys_with<'a, T>(positives: impl IntoIterator<Item = &'a [T]>, bank: &'a MemoryBank<T>) -> Vec<&'a [T]>
where
    T: Scalar,
{
    positives.into_iter().chain(bank.iter()).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct MvclLoss {
    pub v2t: Var,
    pub t2v: Var,
    pub total: Var,
}

/// Video-to-text against the text bank plus text-to-video against the video bank.
pub fn loss_mvcl<T: Scalar>(
    g: &mut Graph<T>,
    batch: &ContrastiveBatch<T>,
    video_bank: &MemoryBank<T>,
    text_bank: &MemoryBank<T>,
) -> Result<MvclLoss> {
    batch.check()?;
    let mut v2t = Vec::with_capacity(batch.pairs.len());
    let mut t2v = Vec::with_capacity(batch.pairs.len());
    for p in &batch.pairs {
        let keys = keys_with([p.text_hat.as_slice()], text_bank);
        v2t.push(nce_term(g, p.video, &keys, 1, batch.tau)?);
        let keys = keys_with([p.video_hat.as_slice()], video_bank);
        t2v.push(nce_term(g, p.text, &keys, 1, batch.tau)?);
    }
    let v2t = batch_mean(g, &v2t)?;
    let t2v = batch_mean(g, &t2v)?;
    let total = g.add(v2t, t2v)?;
    Ok(MvclLoss { v2t, t2v, total })
}

#[derive(Clone, Copy, Debug)]
pub struct MfclLoss {
    pub t2e: Var,
    pub e2t: Var,
    pub total: Var,
}

/// Frame-level losses with the positive set `S_i` treated jointly.
///
/// Text-to-frame: numerator sums over momentum frames in `S_i`, negatives from
/// the frame bank. Frame-to-text: numerator sums online frames in `S_i` against
/// the momentum text; the denominator adds every (frame in `S_i`, text-bank entry) pair.
pub fn loss_mfcl<T: Scalar>(
    g: &mut Graph<T>,
    batch: &ContrastiveBatch<T>,
    frame_bank: &MemoryBank<T>,
    text_bank: &MemoryBank<T>,
) -> Result<MfclLoss> {
    batch.check()?;
    let mut t2e = Vec::with_capacity(batch.pairs.len());
    let mut e2t = Vec::with_capacity(batch.pairs.len());
    for (i, p) in batch.pairs.iter().enumerate() {
        if p.positives.is_empty() {
            return Err(Error::EmptyPositiveSet { pair: i });
        }
        if p.positives.iter().any(|&j| j >= p.frames.len()) {
            return Err(shape_err("loss_mfcl", format!("positive index out of range for pair {i}")));
        }
        let pos_hat = p.positives.iter().map(|&j| p.frames_hat[j].as_slice());
        let keys = keys_with(pos_hat, frame_bank);
        t2e.push(nce_term(g, p.text, &keys, p.positives.len(), batch.tau)?);

        let rows: Vec<Var> = p.positives.iter().map(|&j| p.frames[j]).collect();
        let queries = g.concat_rows(&rows)?;
        let keys = keys_with([p.text_hat.as_slice()], text_bank);
        e2t.push(nce_term(g, queries, &keys, 1, batch.tau)?);
    }
    let t2e = batch_mean(g, &t2e)?;
    let e2t = batch_mean(g, &e2t)?;
    let total = g.add(t2e, e2t)?;
    Ok(MfclLoss { t2e, e2t, total })
}

/// One (frame, text) example for the matching loss. Token inputs are graph
/// nodes (encoder hidden states) so gradients reach both encoders.
#[derive(Clone, Debug)]
pub struct MatchPair {
    pub frame: Var,
    pub frame_mask: Vec<bool>,
    pub text: Var,
    pub text_mask: Vec<bool>,
    /// True when the frame is salient for its genuinely paired text.
    pub label: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct LsfmLoss {
    pub loss: Var,
    /// Every pair carries the same label; the loss is still computed.
    pub single_class: bool,
}

/// Cross-entropy of the matching head: mean over pairs of `−log P(y | E, L)`.
pub fn loss_lsfm<T: Scalar>(g: &mut Graph<T>, pairs: &[MatchPair], fusion: &FusionModel, params: &BoundParams) -> Result<LsfmLoss> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let single_class = pairs.iter().all(|p| p.label == pairs[0].label);
    let mut terms = Vec::with_capacity(pairs.len());
    for p in pairs {
        let out = fusion.forward(g, params, p.frame, &p.frame_mask, p.text, &p.text_mask)?;
        terms.push(matching_nll(g, out.logits, p.label)?);
    }
    let loss = batch_mean(g, &terms)?;
    Ok(LsfmLoss { loss, single_class })
}

/// `−log softmax(logits)[class]` with class 0 = match.
pub fn matching_nll<T: Scalar>(g: &mut Graph<T>, logits: Var, label: bool) -> Result<Var> {
    let lse = g.log_sum_exp_rows(logits)?;
    let pick = g.slice_cols(logits, if label { 0 } else { 1 }, 1)?;
    g.sub(lse, pick)
}

#[derive(Clone, Copy, Debug)]
pub struct TotalLoss {
    pub mvcl: MvclLoss,
    pub mfcl: MfclLoss,
    pub lsfm: LsfmLoss,
    pub total: Var,
}

/// `L_MVCL + L_MFCL + L_LSFM`, unweighted.
pub fn loss_total<T: Scalar>(g: &mut Graph<T>, mvcl: MvclLoss, mfcl: MfclLoss, lsfm: LsfmLoss) -> Result<TotalLoss> {
    let s = g.add(mvcl.total, mfcl.total)?;
    let total = g.add(s, lsfm.loss)?;
    Ok(TotalLoss { mvcl, mfcl, lsfm, total })
}

/// Scalar values of every component of a [`TotalLoss`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub v2t: f64,
    pub t2v: f64,
    pub t2e: f64,
    pub e2t: f64,
    pub lsfm: f64,
    pub total: f64,
}

impl LossValues {
    pub fn read<T: Scalar>(g: &Graph<T>, l: &TotalLoss) -> Self {
        let s = |v: Var| g.scalar(v).to_f64_lossy();
        Self {
            v2t: s(l.mvcl.v2t),
            t2v: s(l.mvcl.t2v),
            t2e: s(l.mfcl.t2e),
            e2t: s(l.mfcl.e2t),
            lsfm: s(l.lsfm.loss),
            total: s(l.total),
        }
    }
}
