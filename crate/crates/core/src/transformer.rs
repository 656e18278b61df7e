//! Pre-norm transformer encoder blocks shared by both branches and the
//! fusion head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Logit added to masked attention keys.
pub const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, prefix: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: store.insert_ones(format!("{prefix}.gamma"), vec![dim])?,
            beta: store.insert_zeros(format!("{prefix}.beta"), vec![dim])?,
            eps,
        })
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, bound[self.gamma], bound[self.beta], T::lit(self.eps))
    }
}

/// Q/K/V/O projections of one multi-head self-attention sublayer. The
/// projections carry no biases.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub num_heads: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        num_heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if num_heads == 0 || !dim.is_multiple_of(num_heads) {
            return Err(Error::Config(format!(
                "embedding dim {dim} is not divisible by {num_heads} heads"
            )));
        }
        let mut w = |n: &str| store.insert_normal(format!("{prefix}.{n}"), vec![dim, dim], rng);
        Ok(Self {
            w_q: w("w_q")?,
            w_k: w("w_k")?,
            w_v: w("w_v")?,
            w_o: w("w_o")?,
            num_heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_heads
    }
}

#[derive(Debug, Clone)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl MlpParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if hidden < dim {
            return Err(Error::Config(format!(
                "MLP hidden width {hidden} is smaller than the embedding dim {dim}"
            )));
        }
        Ok(Self {
            w1: store.insert_normal(format!("{prefix}.w1"), vec![dim, hidden], rng)?,
            b1: store.insert_zeros(format!("{prefix}.b1"), vec![hidden])?,
            w2: store.insert_normal(format!("{prefix}.w2"), vec![hidden, dim], rng)?,
            b2: store.insert_zeros(format!("{prefix}.b2"), vec![dim])?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderShape {
    pub dim: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub ln_eps: f64,
}

impl EncoderLayerParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        shape: EncoderShape,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNormParams::init(store, &format!("{prefix}.ln1"), shape.dim, shape.ln_eps)?,
            attn: AttentionParams::init(
                store,
                &format!("{prefix}.attn"),
                shape.dim,
                shape.num_heads,
                rng,
            )?,
            ln2: LayerNormParams::init(store, &format!("{prefix}.ln2"), shape.dim, shape.ln_eps)?,
            mlp: MlpParams::init(
                store,
                &format!("{prefix}.mlp"),
                shape.dim,
                shape.mlp_hidden,
                rng,
            )?,
        })
    }
}

pub fn init_stack(
    store: &mut ParamStore,
    prefix: &str,
    depth: usize,
    shape: EncoderShape,
    rng: &mut impl Rng,
) -> Result<Vec<EncoderLayerParams>> {
    if depth == 0 {
        return Err(Error::Config(format!(
            "{prefix}: encoder stack needs at least one layer"
        )));
    }
    (0..depth)
        .map(|i| EncoderLayerParams::init(store, &format!("{prefix}.{i}"), shape, rng))
        .collect()
}

/// Sublayer output plus the per-head attention matrices (`n × n`, rows
/// sum to one).
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// `key_mask[j] == false` removes token `j` from every query's attention.
pub fn multi_head_self_attention<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &AttentionParams,
    x: Var,
    key_mask: Option<&[bool]>,
) -> Result<AttentionOutput> {
    let shape = g.shape(x).to_vec();
    let [n, d] = shape[..] else {
        return Err(Error::Dimension(format!(
            "attention input must be n×d, got {shape:?}"
        )));
    };
    if d != p.dim {
        return Err(Error::Dimension(format!(
            "attention input width {d} does not match parameters ({})",
            p.dim
        )));
    }
    let bias = match key_mask {
        Some(mask) if mask.len() != n => {
            return Err(Error::Dimension(format!(
                "key mask of length {} for {n} tokens",
                mask.len()
            )))
        }
        Some(mask) if mask.iter().any(|&keep| !keep) => {
            let b = Tensor::from_fn(vec![n], |j| {
                if mask[j] {
                    T::zero()
                } else {
                    T::lit(MASKED_LOGIT)
                }
            });
            Some(g.constant(b)?)
        }
        _ => None,
    };

    let q = g.matmul(x, bound[p.w_q])?;
    let k = g.matmul(x, bound[p.w_k])?;
    let v = g.matmul(x, bound[p.w_v])?;
    let dh = p.head_dim();
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(p.num_heads);
    let mut weights = Vec::with_capacity(p.num_heads);
    for h in 0..p.num_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if p.num_heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, lo, hi)?,
                g.slice_cols(k, lo, hi)?,
                g.slice_cols(v, lo, hi)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let mut scores = g.scale(scores, scale)?;
        if let Some(b) = bias {
            scores = g.add(scores, b)?;
        }
        let attn = g.softmax(scores, 1)?;
        heads.push(g.matmul(attn, vh)?);
        weights.push(attn);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let out = g.matmul(joined, bound[p.w_o])?;
    Ok(AttentionOutput { out, weights })
}

/// `GeLU(x·W1 + b1)·W2 + b2`, one hidden layer.
pub fn mlp_block<T: Real>(g: &mut Graph<T>, bound: &Bound, p: &MlpParams, x: Var) -> Result<Var> {
    let h = g.matmul(x, bound[p.w1])?;
    let h = g.add(h, bound[p.b1])?;
    let h = g.gelu(h)?;
    let o = g.matmul(h, bound[p.w2])?;
    g.add(o, bound[p.b2])
}

/// Pre-norm layer: `x + MSA(LN(x))`, then `x + MLP(LN(x))`.
pub fn encoder_layer<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &EncoderLayerParams,
    x: Var,
    key_mask: Option<&[bool]>,
) -> Result<AttentionOutput> {
    let normed = p.ln1.apply(g, bound, x)?;
    let attn = multi_head_self_attention(g, bound, &p.attn, normed, key_mask)?;
    let x = g.add(x, attn.out)?;
    let normed = p.ln2.apply(g, bound, x)?;
    let mlp = mlp_block(g, bound, &p.mlp, normed)?;
    let out = g.add(x, mlp)?;
    Ok(AttentionOutput {
        out,
        weights: attn.weights,
    })
}

#[derive(Debug, Clone)]
pub struct StackOutput {
    pub out: Var,
    /// Attention matrices, outer index = layer, inner = head.
    pub weights: Vec<Vec<Var>>,
}

pub fn encoder_stack<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    layers: &[EncoderLayerParams],
    x: Var,
    key_mask: Option<&[bool]>,
) -> Result<StackOutput> {
    if layers.is_empty() {
        return Err(Error::Config("encoder stack has no layers".into()));
    }
    let mut out = x;
    let mut weights = Vec::with_capacity(layers.len());
    for layer in layers {
        let o = encoder_layer(g, bound, layer, out, key_mask)?;
        out = o.out;
        weights.push(o.weights);
    }
    Ok(StackOutput { out, weights })
}
