//! Combined attention head: visual-semantic gating, self-attention over the
//! fused sequence, and the two-way softmax classifier.

use serde::{Deserialize, Serialize};

use crate::caption::CaptionOutput;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId};
use crate::tensor::{Graph, Real, Tensor, Var};
use crate::transformer::{encoder_layer, AttentionOutput, EncoderLayerParams};

/// Number of output classes: 0 = no-hate, 1 = hate.
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TextPool {
    /// Row 0, the caption summary token.
    #[default]
    Cls,
    /// Mean over non-PAD positions.
    Mean,
}

#[derive(Debug, Clone)]
pub struct FusionParams {
    pub text_pool: TextPool,
    /// Applied to the pooled caption vector before gating.
    pub fusion_proj: Option<ParamId>,
    pub self_attn: Option<EncoderLayerParams>,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
}

/// Mean of the rows of an `n × d` matrix, restricted to rows where
/// `mask` is true. Returns `1 × d`.
pub fn pool_rows<T: Real>(g: &mut Graph<T>, x: Var, mask: Option<&[bool]>) -> Result<Var> {
    let n = g.shape(x)[0];
    let keep: Vec<bool> = match mask {
        Some(m) if m.len() != n => {
            return Err(Error::Dimension(format!(
                "mask of length {} for {n} rows",
                m.len()
            )))
        }
        Some(m) => m.to_vec(),
        None => vec![true; n],
    };
    let count = keep.iter().filter(|&&k| k).count();
    if count == 0 {
        return Err(Error::Contract(
            "pooling over an all-masked sequence".into(),
        ));
    }
    let w = T::lit(1.0 / count as f64);
    let weights = Tensor::from_fn(vec![1, n], |j| if keep[j] { w } else { T::zero() });
    let weights = g.constant(weights)?;
    g.matmul(weights, x)
}

/// Pooled caption summary `1 × d`.
pub fn pool_text<T: Real>(
    g: &mut Graph<T>,
    caption: &CaptionOutput,
    mode: TextPool,
) -> Result<Var> {
    match mode {
        TextPool::Cls => g.slice_rows(caption.tokens, 0, 1),
        TextPool::Mean => pool_rows(g, caption.tokens, Some(&caption.mask)),
    }
}

/// Gates every image token by the projected caption summary:
/// `out_i = img_i ⊙ (t · W_fusion)`.
pub fn visual_semantic_attention<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &FusionParams,
    img_feats: Var,
    caption: &CaptionOutput,
) -> Result<Var> {
    let proj = p.fusion_proj.ok_or_else(|| {
        Error::Config("visual-semantic attention requested without its projection".into())
    })?;
    let t = pool_text(g, caption, p.text_pool)?;
    let t = g.matmul(t, bound[proj])?;
    gate(g, img_feats, t)
}

/// `img ⊙ t` with `t` (`1 × d`) repeated over every row of `img`.
pub fn gate<T: Real>(g: &mut Graph<T>, img_feats: Var, t: Var) -> Result<Var> {
    let d = g.shape(t)[1];
    let t = g.reshape(t, vec![d])?;
    g.mul(img_feats, t)
}

pub fn self_attention_fusion<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &FusionParams,
    fused: Var,
    mask: Option<&[bool]>,
) -> Result<AttentionOutput> {
    let layer = p
        .self_attn
        .as_ref()
        .ok_or_else(|| Error::Config("self-attention fusion requested without its layer".into()))?;
    encoder_layer(g, bound, layer, fused, mask)
}

#[derive(Debug, Clone, Copy)]
pub struct Classified {
    /// `1 × 2`
    pub logits: Var,
    /// `1 × 2`, `[P(no-hate), P(hate)]`
    pub probs: Var,
}

/// Mean-pool the (unmasked) tokens, project to two logits, softmax.
pub fn classify<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &FusionParams,
    features: Var,
    mask: Option<&[bool]>,
) -> Result<Classified> {
    let pooled = pool_rows(g, features, mask)?;
    let z = g.matmul(pooled, bound[p.cls_w])?;
    let logits = g.add(z, bound[p.cls_b])?;
    let probs = g.softmax(logits, 1)?;
    Ok(Classified { logits, probs })
}
