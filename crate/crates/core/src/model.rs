//! Model configuration, ablation switches, and the assembled classifier.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caption::{caption_encode, CaptionOutput, CaptionParams};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::fusion::{
    classify, pool_rows, pool_text, self_attention_fusion, visual_semantic_attention, FusionParams,
    TextPool, NUM_CLASSES,
};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, Real, Tensor, Var};
use crate::transformer::{EncoderLayerParams, EncoderShape};
use crate::vision::{vision_encode, PatchGrid, VisionParams, CHANNELS, PATCH_SIZE};

/// Architectural switches. Every [`AblationMode`] is one setting of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_vision: bool,
    pub use_caption: bool,
    pub visual_semantic: bool,
    pub self_attention: bool,
    pub vision_encoder: bool,
    pub caption_encoder: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationMode::Full.flags()
    }
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if !self.use_vision && !self.use_caption {
            return Err(Error::Config(
                "ablation removes both the image and the caption branch".into(),
            ));
        }
        if self.visual_semantic && !(self.use_vision && self.use_caption) {
            return Err(Error::Config(
                "visual-semantic attention needs both branches".into(),
            ));
        }
        Ok(())
    }
}

/// The seven rows of the ablation table, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    TextualOnly,
    VisualOnly,
    NoVisualSemantic,
    NoSelfAttention,
    NoVisionEncoder,
    NoCaptionEncoder,
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 7] = [
        AblationMode::TextualOnly,
        AblationMode::VisualOnly,
        AblationMode::NoVisualSemantic,
        AblationMode::NoSelfAttention,
        AblationMode::NoVisionEncoder,
        AblationMode::NoCaptionEncoder,
        AblationMode::Full,
    ];

    pub fn flags(self) -> AblationFlags {
        let full = AblationFlags {
            use_vision: true,
            use_caption: true,
            visual_semantic: true,
            self_attention: true,
            vision_encoder: true,
            caption_encoder: true,
        };
        match self {
            AblationMode::Full => full,
            AblationMode::TextualOnly => AblationFlags {
                use_vision: false,
                visual_semantic: false,
                ..full
            },
            AblationMode::VisualOnly => AblationFlags {
                use_caption: false,
                visual_semantic: false,
                ..full
            },
            AblationMode::NoVisualSemantic => AblationFlags {
                visual_semantic: false,
                ..full
            },
            AblationMode::NoSelfAttention => AblationFlags {
                self_attention: false,
                ..full
            },
            AblationMode::NoVisionEncoder => AblationFlags {
                vision_encoder: false,
                ..full
            },
            AblationMode::NoCaptionEncoder => AblationFlags {
                caption_encoder: false,
                ..full
            },
        }
    }

    pub fn from_flags(flags: AblationFlags) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.flags() == flags)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::TextualOnly => "textual_only",
            AblationMode::VisualOnly => "visual_only",
            AblationMode::NoVisualSemantic => "no_visual_semantic",
            AblationMode::NoSelfAttention => "no_self_attention",
            AblationMode::NoVisionEncoder => "no_vision_encoder",
            AblationMode::NoCaptionEncoder => "no_caption_encoder",
        }
    }

    /// Row label for the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            AblationMode::TextualOnly => "Unimodal: Textual",
            AblationMode::VisualOnly => "Unimodal: Visual",
            AblationMode::NoVisualSemantic => "Without Visual Semantic Attention",
            AblationMode::NoSelfAttention => "Without Self Attention",
            AblationMode::NoVisionEncoder => "Without Vision Attention-mechanism encoder",
            AblationMode::NoCaptionEncoder => "Without Caption Attention-mechanism encoder",
            AblationMode::Full => "Proposed",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square input side; images are `channels × image_size × image_size`.
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Encoder depth of each branch.
    pub layers: usize,
    /// MLP hidden width as a multiple of `embed_dim`.
    pub mlp_ratio: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub text_pool: TextPool,
    pub ln_eps: f64,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            channels: CHANNELS,
            patch_size: PATCH_SIZE,
            embed_dim: 64,
            num_heads: 4,
            layers: 4,
            mlp_ratio: 4,
            vocab_size: 3,
            max_len: 32,
            text_pool: TextPool::Cls,
            ln_eps: 1e-5,
            ablation: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    /// Gradient-check scale: d=8, 2 layers, 2 heads, 3×32×32, max_len 6.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            image_size: 32,
            embed_dim: 8,
            num_heads: 2,
            layers: 2,
            vocab_size,
            max_len: 6,
            ..Self::default()
        }
    }

    pub fn with_ablation(mut self, mode: AblationMode) -> Self {
        self.ablation = mode.flags();
        self
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(
            self.channels,
            self.image_size,
            self.image_size,
            self.patch_size,
        )
    }

    pub fn encoder_shape(&self) -> EncoderShape {
        EncoderShape {
            dim: self.embed_dim,
            num_heads: self.num_heads,
            mlp_hidden: self.mlp_ratio * self.embed_dim,
            ln_eps: self.ln_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ablation.validate()?;
        self.grid()?;
        if self.embed_dim == 0
            || self.num_heads == 0
            || !self.embed_dim.is_multiple_of(self.num_heads)
        {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.layers == 0 || self.mlp_ratio == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "layers, mlp_ratio and max_len must be positive".into(),
            ));
        }
        if self.vocab_size < 3 {
            return Err(Error::Config(
                "vocabulary must hold the 3 reserved tokens".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StmaModel {
    cfg: ModelConfig,
    store: ParamStore,
    vision: Option<VisionParams>,
    caption: Option<CaptionParams>,
    fusion: FusionParams,
}

/// Handles into one recorded forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `1 × 2`
    pub logits: Var,
    /// `1 × 2`
    pub probs: Var,
    /// Vision encoder output `[(N+1) × d]`, row 0 is CLS.
    pub vision_tokens: Option<Var>,
    pub caption: Option<CaptionOutput>,
    /// Input to the self-attention fusion block (or to the classifier when
    /// that block is ablated).
    pub fused: Var,
    pub fusion_attention: Vec<Var>,
}

impl StmaModel {
    /// Fresh parameters: weights and embeddings from N(0, 0.02), layer-norm
    /// gains 1, biases 0. Only the parameters the ablation flags use are
    /// created.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let flags = cfg.ablation;
        let shape = cfg.encoder_shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let vision = if flags.use_vision {
            let depth = if flags.vision_encoder { cfg.layers } else { 0 };
            Some(init_vision(
                &mut store,
                cfg.grid()?,
                depth,
                shape,
                &mut rng,
            )?)
        } else {
            None
        };
        let caption = if flags.use_caption {
            let depth = if flags.caption_encoder { cfg.layers } else { 0 };
            Some(init_caption(&mut store, &cfg, depth, shape, &mut rng)?)
        } else {
            None
        };
        let d = cfg.embed_dim;
        let fusion_proj = if flags.visual_semantic {
            Some(store.insert_normal("fusion.proj", vec![d, d], &mut rng)?)
        } else {
            None
        };
        let self_attn = if flags.self_attention {
            Some(EncoderLayerParams::init(
                &mut store,
                "fusion.self_attn",
                shape,
                &mut rng,
            )?)
        } else {
            None
        };
        let cls_w = store.insert_normal("cls.w", vec![d, NUM_CLASSES], &mut rng)?;
        let cls_b = store.insert_zeros("cls.b", vec![NUM_CLASSES])?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            vision,
            caption,
            fusion: FusionParams {
                // Without the caption stack the CLS row never sees the words.
                text_pool: if flags.caption_encoder {
                    cfg.text_pool
                } else {
                    TextPool::Mean
                },
                fusion_proj,
                self_attn,
                cls_w,
                cls_b,
            },
        })
    }

    /// Rebuilds the structure for `cfg` and takes every parameter from
    /// `params`, which must match names and shapes exactly.
    pub fn from_parameters(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        if params.len() != model.store.len() {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} parameters, configuration needs {}",
                params.len(),
                model.store.len()
            )));
        }
        for (id, name, expected) in model.store.iter() {
            let got = params.by_name(name).ok_or_else(|| {
                Error::Integrity(format!("checkpoint is missing parameter {name}"))
            })?;
            if got.shape() != expected.shape() {
                return Err(Error::Integrity(format!(
                    "parameter {name} has shape {:?}, configuration needs {:?}",
                    got.shape(),
                    expected.shape()
                )));
            }
            debug_assert_eq!(params.id(name).map(|i| i.index()), Some(id.index()));
        }
        let mut ordered = ParamStore::new();
        for (_, name, _) in model.store.iter() {
            ordered.insert(name, params.by_name(name).expect("checked").clone())?;
        }
        model.store = ordered;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn vision(&self) -> Option<&VisionParams> {
        self.vision.as_ref()
    }

    pub fn caption(&self) -> Option<&CaptionParams> {
        self.caption.as_ref()
    }

    pub fn fusion(&self) -> &FusionParams {
        &self.fusion
    }

    /// Records the full forward pass. `image` is ignored when the vision
    /// branch is ablated away.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        image: Var,
        token_ids: &[usize],
    ) -> Result<ForwardTrace> {
        let flags = self.cfg.ablation;
        let vision_tokens = match &self.vision {
            Some(vp) => Some(vision_encode(g, bound, vp, image, !flags.vision_encoder)?),
            None => None,
        };
        let caption = match &self.caption {
            Some(cp) => Some(caption_encode(
                g,
                bound,
                cp,
                token_ids,
                !flags.caption_encoder,
            )?),
            None => None,
        };
        let (fused, mask) = match (vision_tokens, &caption) {
            (Some(v), Some(c)) if flags.visual_semantic => (
                visual_semantic_attention(g, bound, &self.fusion, v, c)?,
                None,
            ),
            (Some(v), Some(c)) => {
                let pv = pool_rows(g, v, None)?;
                let pt = pool_text(g, c, self.fusion.text_pool)?;
                (g.concat_rows(&[pv, pt])?, None)
            }
            (Some(v), None) => (v, None),
            (None, Some(c)) => (c.tokens, Some(c.mask.clone())),
            (None, None) => unreachable!("validated: at least one branch"),
        };
        let (features, fusion_attention) = if flags.self_attention {
            let o = self_attention_fusion(g, bound, &self.fusion, fused, mask.as_deref())?;
            (o.out, o.weights)
        } else {
            (fused, Vec::new())
        };
        let c = classify(g, bound, &self.fusion, features, mask.as_deref())?;
        Ok(ForwardTrace {
            logits: c.logits,
            probs: c.probs,
            vision_tokens,
            caption,
            fused,
            fusion_attention,
        })
    }

    /// Binds the parameters and records a forward pass for one sample.
    pub fn forward_sample<T: Real>(
        &self,
        g: &mut Graph<T>,
        sample: &Sample,
    ) -> Result<(Bound, ForwardTrace)> {
        let bound = self.store.bind(g)?;
        let image = g.constant(sample.image.cast())?;
        let trace = self.forward(g, &bound, image, &sample.token_ids)?;
        Ok((bound, trace))
    }

    /// `[P(no-hate), P(hate)]`
    pub fn predict(&self, sample: &Sample) -> Result<[f32; 2]> {
        let mut g = Graph::<f32>::new();
        let (_, trace) = self.forward_sample(&mut g, sample)?;
        let p = g.value(trace.probs).data();
        Ok([p[0], p[1]])
    }

    /// Cross-entropy of one sample, its class probabilities, and
    /// `scale · ∂loss/∂θ` for every parameter in store order.
    pub fn loss_probs_and_grads(
        &self,
        sample: &Sample,
        scale: f32,
    ) -> Result<(f32, [f32; 2], Vec<Vec<f32>>)> {
        let mut g = Graph::<f32>::new();
        let (bound, trace) = self.forward_sample(&mut g, sample)?;
        let loss = g.cross_entropy(trace.probs, &[sample.label])?;
        let value = g.value(loss).data()[0];
        let p = g.value(trace.probs).data();
        let probs = [p[0], p[1]];
        g.backward(loss)?;
        Ok((value, probs, self.store.collect_grads(&g, &bound, scale)))
    }

    /// Mean cross-entropy over a batch, recorded on one graph. Gives the
    /// same gradient as summing scaled per-sample gradients; kept as the
    /// reference path for tests.
    pub fn batch_loss<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        batch: &[Sample],
    ) -> Result<Var> {
        let mut rows = Vec::with_capacity(batch.len());
        for s in batch {
            let image = g.constant(s.image.cast())?;
            rows.push(self.forward(g, bound, image, &s.token_ids)?.probs);
        }
        let probs = g.concat_rows(&rows)?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        g.cross_entropy(probs, &labels)
    }
}

fn init_vision(
    store: &mut ParamStore,
    grid: PatchGrid,
    depth: usize,
    shape: EncoderShape,
    rng: &mut ChaCha8Rng,
) -> Result<VisionParams> {
    if depth > 0 {
        return VisionParams::init(store, grid, depth, shape, rng);
    }
    Ok(VisionParams {
        patch: crate::vision::PatchEmbedParams::init(store, grid, shape.dim, rng)?,
        layers: Vec::new(),
        ln_final: crate::transformer::LayerNormParams::init(
            store,
            "vision.ln_f",
            shape.dim,
            shape.ln_eps,
        )?,
    })
}

fn init_caption(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    depth: usize,
    shape: EncoderShape,
    rng: &mut ChaCha8Rng,
) -> Result<CaptionParams> {
    if depth > 0 {
        return CaptionParams::init(store, cfg.vocab_size, cfg.max_len, depth, shape, rng);
    }
    let d = shape.dim;
    Ok(CaptionParams {
        tok_embed: store.insert_normal("caption.tok", vec![cfg.vocab_size, d], rng)?,
        seg_embed: store.insert_normal("caption.seg", vec![2, d], rng)?,
        pos_embed: store.insert_normal("caption.pos", vec![cfg.max_len, d], rng)?,
        layers: Vec::new(),
        ln_final: crate::transformer::LayerNormParams::init(
            store,
            "caption.ln_f",
            d,
            shape.ln_eps,
        )?,
        vocab_size: cfg.vocab_size,
        max_len: cfg.max_len,
        dim: d,
    })
}

/// Image tensor placeholder for models without a vision branch.
pub fn blank_image(cfg: &ModelConfig) -> Tensor<f32> {
    Tensor::zeros(vec![cfg.channels, cfg.image_size, cfg.image_size])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::{CLS, PAD};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn sample(cfg: &ModelConfig, seed: u64, label: usize) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.image_size;
        let mut ids = vec![CLS];
        ids.extend((0..3).map(|_| rng.random_range(3..cfg.vocab_size)));
        ids.resize(cfg.max_len, PAD);
        Sample {
            id: format!("s{seed}"),
            image: Tensor::from_fn(vec![3, n, n], |_| rng.random::<f32>() - 0.5),
            token_ids: ids,
            label,
        }
    }

    #[test]
    fn modes_have_distinct_flags_and_round_trip() {
        let mut seen = std::collections::HashSet::new();
        for m in AblationMode::ALL {
            assert!(seen.insert(m.flags()), "{m} duplicates flags");
            assert_eq!(AblationMode::from_flags(m.flags()), Some(m));
            assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
            m.flags().validate().unwrap();
        }
        assert_eq!(AblationFlags::default(), AblationMode::Full.flags());
    }

    #[test]
    fn removing_both_branches_is_config_error() {
        let flags = AblationFlags {
            use_vision: false,
            use_caption: false,
            visual_semantic: false,
            ..AblationFlags::default()
        };
        let cfg = ModelConfig {
            ablation: flags,
            ..ModelConfig::tiny(10)
        };
        assert!(matches!(StmaModel::new(cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn all_zero_parameters_give_uniform_prediction() {
        for mode in AblationMode::ALL {
            let cfg = ModelConfig::tiny(10).with_ablation(mode);
            let mut m = StmaModel::new(cfg.clone(), 1).unwrap();
            m.params_mut().fill_all(0.0);
            for seed in 0..3 {
                let p = m.predict(&sample(&cfg, seed, 0)).unwrap();
                assert_eq!(p, [0.5, 0.5], "{mode}");
            }
        }
    }

    #[test]
    fn ablation_modes_only_create_needed_parameters() {
        let full = StmaModel::new(ModelConfig::tiny(10), 0).unwrap();
        let text = StmaModel::new(
            ModelConfig::tiny(10).with_ablation(AblationMode::TextualOnly),
            0,
        )
        .unwrap();
        assert!(full.params().by_name("vision.patch.proj").is_some());
        assert!(text.params().by_name("vision.patch.proj").is_none());
        assert!(text.params().by_name("fusion.proj").is_none());
        let bypass = StmaModel::new(
            ModelConfig::tiny(10).with_ablation(AblationMode::NoVisionEncoder),
            0,
        )
        .unwrap();
        assert!(bypass
            .params()
            .by_name("vision.layers.0.attn.w_q")
            .is_none());
        assert!(bypass
            .params()
            .by_name("caption.layers.0.attn.w_q")
            .is_some());
    }

    #[test]
    fn probabilities_are_on_the_simplex() {
        let cfg = ModelConfig::tiny(10);
        let mut m = StmaModel::new(cfg.clone(), 3).unwrap();
        for (_, _, t) in m.params().clone().iter() {
            let _ = t;
        }
        let ids: Vec<_> = m.params().ids().collect();
        for id in ids {
            m.params_mut()
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v *= 25.0);
        }
        for seed in 0..5 {
            let p = m.predict(&sample(&cfg, seed, 1)).unwrap();
            assert!(p.iter().all(|&v| v >= 0.0));
            assert_abs_diff_eq!(p[0] + p[1], 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn no_self_attention_equals_direct_classification() {
        let cfg = ModelConfig::tiny(10).with_ablation(AblationMode::NoSelfAttention);
        let m = StmaModel::new(cfg.clone(), 4).unwrap();
        let s = sample(&cfg, 9, 1);
        let mut g = Graph::<f32>::new();
        let (bound, trace) = m.forward_sample(&mut g, &s).unwrap();

        // Second path assembled from the public block functions.
        let image = g.constant(s.image.clone()).unwrap();
        let v = vision_encode(&mut g, &bound, m.vision().unwrap(), image, false).unwrap();
        let c = caption_encode(&mut g, &bound, m.caption().unwrap(), &s.token_ids, false).unwrap();
        let fused = visual_semantic_attention(&mut g, &bound, m.fusion(), v, &c).unwrap();
        let direct = classify(&mut g, &bound, m.fusion(), fused, None).unwrap();
        assert_eq!(g.value(trace.probs).data(), g.value(direct.probs).data());
    }

    #[test]
    fn from_parameters_checks_shapes() {
        let cfg = ModelConfig::tiny(10);
        let m = StmaModel::new(cfg.clone(), 5).unwrap();
        let back = StmaModel::from_parameters(cfg.clone(), m.params().clone()).unwrap();
        assert_eq!(back.params(), m.params());
        let other = StmaModel::new(ModelConfig::tiny(11), 5).unwrap();
        assert!(matches!(
            StmaModel::from_parameters(cfg, other.params().clone()),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn batch_graph_matches_scaled_single_gradients() {
        let cfg = ModelConfig::tiny(10);
        let m = StmaModel::new(cfg.clone(), 6).unwrap();
        let batch: Vec<_> = (0..3)
            .map(|i| sample(&cfg, 20 + i, (i % 2) as usize))
            .collect();
        let mut summed: Vec<Vec<f32>> = m
            .params()
            .iter()
            .map(|(_, _, t)| vec![0.0; t.len()])
            .collect();
        for s in &batch {
            let (_, _, grads) = m.loss_probs_and_grads(s, 1.0 / 3.0).unwrap();
            for (acc, g) in summed.iter_mut().zip(grads) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        let mut g = Graph::<f32>::new();
        let bound = m.params().bind(&mut g).unwrap();
        let loss = m.batch_loss(&mut g, &bound, &batch).unwrap();
        g.backward(loss).unwrap();
        let reference = m.params().collect_grads(&g, &bound, 1.0);
        for (a, b) in summed.iter().flatten().zip(reference.iter().flatten()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
    }
}
