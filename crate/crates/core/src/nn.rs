//! Transformer building blocks expressed over [`ParamStore`] handles.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

const LN_EPS: f64 = 1e-5;

/// `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let std = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add_normal(format!("{name}.weight"), &[in_dim, out_dim], std, rng);
        let bias = bias.then(|| store.add_filled(format!("{name}.bias"), &[1, out_dim], 0.0));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.get(self.weight))?;
        match self.bias {
            Some(b) => g.add_row(y, p.get(b)),
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalization with learned gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gain = store.add_filled(format!("{name}.gain"), &[1, dim], 1.0);
        let shift = store.add_filled(format!("{name}.shift"), &[1, dim], 0.0);
        Self { gain, shift }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let z = g.layer_norm_rows(x, T::lit(LN_EPS))?;
        let z = g.mul_row(z, p.get(self.gain))?;
        g.add_row(z, p.get(self.shift))
    }
}

/// Multi-head scaled dot-product attention. Query, key and value projections
/// carry no bias (a key bias is invisible to the softmax).
#[derive(Clone, Debug)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads >= 1 && dim.is_multiple_of(heads), "width {dim} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, false, rng),
            key: Linear::new(store, &format!("{name}.key"), kv_dim, dim, false, rng),
            value: Linear::new(store, &format!("{name}.value"), kv_dim, dim, false, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, rng),
            heads,
            dim,
        }
    }

    /// Attend from the rows of `queries` to the rows of `context`. Context rows
    /// whose `key_mask` entry is false receive exactly zero weight.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        queries: Var,
        context: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let q = self.query.forward(g, p, queries)?;
        let k = self.key.forward(g, p, context)?;
        let v = self.value.forward(g, p, context)?;
        let dh = self.dim / self.heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let w_out = p.get(self.out.weight);
        let mut acc: Option<Var> = None;
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax_rows(scores, key_mask)?;
            let oh = g.matmul(attn, vh)?;
            // concat(heads) @ W_out == sum_h head_h @ W_out[h rows]
            let wh = g.slice_rows(w_out, h * dh, dh)?;
            let part = g.matmul(oh, wh)?;
            acc = Some(match acc {
                Some(a) => g.add(a, part)?,
                None => part,
            });
        }
        let y = acc.expect("at least one head");
        match self.out.bias {
            Some(b) => g.add_row(y, p.get(b)),
            None => Ok(y),
        }
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let h = self.up.forward(g, p, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, p, h)
    }
}

/// Pre-norm self-attention + feed-forward block with residuals.
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    pub norm_attn: LayerNorm,
    pub attn: Attention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl SelfAttentionBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), dim),
            attn: Attention::new(store, &format!("{name}.attn"), dim, dim, heads, rng),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), dim),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, hidden, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let h = self.norm_attn.forward(g, p, x)?;
        let a = self.attn.forward(g, p, h, h, mask)?;
        let x = g.add(x, a)?;
        let h = self.norm_ffn.forward(g, p, x)?;
        let f = self.ffn.forward(g, p, h)?;
        g.add(x, f)
    }
}

pub(crate) fn check_width(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(shape_err(op, format!("token width {got}, expected {want}")))
    }
}
