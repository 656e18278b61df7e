//! Caption branch: text cleanup, vocabulary, and the token + segment +
//! position embedded transformer encoder.

pub mod porter;
mod text;
mod vocab;

use rand::Rng;

pub use text::{preprocess_text, Stopwords, DEFAULT_STOPWORDS};
pub use vocab::{Vocabulary, CLS, PAD, UNK};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Graph, Real, Var};
use crate::transformer::{
    encoder_stack, init_stack, EncoderLayerParams, EncoderShape, LayerNormParams,
};

#[derive(Debug, Clone)]
pub struct CaptionParams {
    pub tok_embed: ParamId,
    pub seg_embed: ParamId,
    pub pos_embed: ParamId,
    pub layers: Vec<EncoderLayerParams>,
    pub ln_final: LayerNormParams,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dim: usize,
}

impl CaptionParams {
    pub fn init(
        store: &mut ParamStore,
        vocab_size: usize,
        max_len: usize,
        depth: usize,
        shape: EncoderShape,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = shape.dim;
        Ok(Self {
            tok_embed: store.insert_normal("caption.tok", vec![vocab_size, d], rng)?,
            seg_embed: store.insert_normal("caption.seg", vec![2, d], rng)?,
            pos_embed: store.insert_normal("caption.pos", vec![max_len, d], rng)?,
            layers: init_stack(store, "caption.layers", depth, shape, rng)?,
            ln_final: LayerNormParams::init(store, "caption.ln_f", d, shape.ln_eps)?,
            vocab_size,
            max_len,
            dim: d,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CaptionOutput {
    /// `[max_len × d]`
    pub tokens: Var,
    /// `true` for CLS and word positions, `false` for PAD.
    pub mask: Vec<bool>,
    pub attention: Vec<Vec<Var>>,
}

/// `E_i = T_i + S_i + P_i` for every position. Captions are single-segment,
/// so every position uses segment row 0.
pub fn embed_caption<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &CaptionParams,
    ids: &[usize],
) -> Result<Var> {
    if ids.len() != p.max_len {
        return Err(Error::Contract(format!(
            "caption has {} ids, expected max_len {}",
            ids.len(),
            p.max_len
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id >= p.vocab_size) {
        return Err(Error::Contract(format!(
            "token id {bad} outside vocabulary of {}",
            p.vocab_size
        )));
    }
    let d = p.dim;
    let rows = |ids: &mut dyn Iterator<Item = usize>| -> Vec<usize> {
        ids.flat_map(|id| id * d..(id + 1) * d).collect()
    };
    let tok = g.gather(
        bound[p.tok_embed],
        rows(&mut ids.iter().copied()),
        vec![p.max_len, d],
    )?;
    let seg = g.gather(
        bound[p.seg_embed],
        rows(&mut std::iter::repeat_n(0, p.max_len)),
        vec![p.max_len, d],
    )?;
    let e = g.add(tok, seg)?;
    g.add(e, bound[p.pos_embed])
}

/// Embeds and encodes a caption with PAD keys masked out of attention.
/// With `bypass_stack` the raw embeddings go straight to the final
/// normalization.
pub fn caption_encode<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &CaptionParams,
    ids: &[usize],
    bypass_stack: bool,
) -> Result<CaptionOutput> {
    let e = embed_caption(g, bound, p, ids)?;
    let mask: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
    let (encoded, attention) = if bypass_stack {
        (e, Vec::new())
    } else {
        let s = encoder_stack(g, bound, &p.layers, e, Some(&mask))?;
        (s.out, s.weights)
    };
    let tokens = p.ln_final.apply(g, bound, encoded)?;
    Ok(CaptionOutput {
        tokens,
        mask,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_at, ScalarFn, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> EncoderShape {
        EncoderShape {
            dim: 8,
            num_heads: 2,
            mlp_hidden: 32,
            ln_eps: 1e-5,
        }
    }

    fn params(seed: u64) -> (ParamStore, CaptionParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = CaptionParams::init(&mut store, 10, 6, 2, shape(), &mut rng).unwrap();
        // Sharper attention than the 0.02 init gives.
        for layer in &p.layers {
            for id in [layer.attn.w_q, layer.attn.w_k] {
                store
                    .get_mut(id)
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v *= 40.0);
            }
        }
        (store, p)
    }

    #[test]
    fn all_pad_caption_attends_only_to_cls() {
        let (store, p) = params(1);
        let mut g = Graph::<f32>::new();
        let b = store.bind(&mut g).unwrap();
        let ids = [CLS, PAD, PAD, PAD, PAD, PAD];
        let out = caption_encode(&mut g, &b, &p, &ids, false).unwrap();
        assert_eq!(out.mask, vec![true, false, false, false, false, false]);
        for layer in &out.attention {
            for head in layer {
                let w = g.value(*head).data();
                // Every query, CLS included, puts all weight on CLS.
                for r in 0..6 {
                    assert_eq!(w[r * 6], 1.0);
                    assert!(w[r * 6 + 1..(r + 1) * 6].iter().all(|&x| x == 0.0));
                }
            }
        }
        assert!(g.value(out.tokens).data()[..8]
            .iter()
            .all(|v| v.is_finite()));
    }

    #[test]
    fn zero_weight_stack_is_normalized_embedding() {
        let (mut store, p) = params(2);
        for layer in &p.layers {
            for id in [
                layer.attn.w_q,
                layer.attn.w_k,
                layer.attn.w_v,
                layer.attn.w_o,
                layer.mlp.w1,
                layer.mlp.w2,
            ] {
                store.get_mut(id).data_mut().fill(0.0);
            }
        }
        let ids = [CLS, 4, 5, PAD, PAD, PAD];
        let mut g = Graph::<f32>::new();
        let b = store.bind(&mut g).unwrap();
        let full = caption_encode(&mut g, &b, &p, &ids, false).unwrap().tokens;
        let raw = caption_encode(&mut g, &b, &p, &ids, true).unwrap().tokens;
        assert_eq!(g.value(full).data(), g.value(raw).data());
    }

    #[test]
    fn pad_embedding_does_not_reach_real_tokens() {
        let (mut store, p) = params(3);
        let ids = [CLS, 4, 7, 3, PAD, PAD];
        let run = |store: &ParamStore| {
            let mut g = Graph::<f32>::new();
            let b = store.bind(&mut g).unwrap();
            let o = caption_encode(&mut g, &b, &p, &ids, false).unwrap();
            g.value(o.tokens).data().to_vec()
        };
        let before = run(&store);
        store.get_mut(p.tok_embed).data_mut()[..8]
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 3.0 * i as f32 - 7.0);
        let after = run(&store);
        for r in 0..4 {
            for j in 0..8 {
                let (a, b) = (before[r * 8 + j], after[r * 8 + j]);
                assert!((a - b).abs() <= 1e-5, "row {r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn contract_errors() {
        let (store, p) = params(4);
        let mut g = Graph::<f32>::new();
        let b = store.bind(&mut g).unwrap();
        assert!(matches!(
            caption_encode(&mut g, &b, &p, &[CLS, 3], false),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            caption_encode(&mut g, &b, &p, &[CLS, 10, 0, 0, 0, 0], false),
            Err(Error::Contract(_))
        ));
    }

    struct TokLoss<'a> {
        store: &'a ParamStore,
        p: &'a CaptionParams,
        ids: [usize; 6],
    }
    impl ScalarFn for TokLoss<'_> {
        fn eval<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
            let b = self.store.bind_replacing(g, self.p.tok_embed, x)?;
            let o = caption_encode(g, &b, self.p, &self.ids, false)?;
            let w = g.constant(Tensor::from_fn(vec![6, 8], |i| {
                T::lit(((i * 7) % 5) as f64 - 2.0)
            }))?;
            let prod = g.mul(o.tokens, w)?;
            g.sum(prod)
        }
    }

    #[test]
    fn token_embedding_gradient_matches_finite_differences() {
        let (mut store, p) = params(5);
        store
            .get_mut(p.tok_embed)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= 20.0);
        let x = store.get(p.tok_embed).clone();
        let f = TokLoss {
            store: &store,
            p: &p,
            ids: [CLS, 4, 4, 9, PAD, PAD],
        };
        // Rows 0 (PAD), 2 (CLS), 4 and 9 carry gradient; row 5 checks zeros.
        let idx: Vec<usize> = [0, 2, 4, 5, 9]
            .iter()
            .flat_map(|r| r * 8..(r + 1) * 8)
            .collect();
        let r = grad_check_at(&f, &x, &idx, 1e-3, 1e-3).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
