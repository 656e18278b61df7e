//! Image → patch tokens → vision encoder.
//!
//! The stride-P, kernel-P convolution of a ViT patch embedding is realised as
//! an unfold (pure index gather) followed by one linear map, which is the
//! same function with a simpler backward.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Graph, Real, Tensor, Var};
use crate::transformer::{
    encoder_stack, init_stack, EncoderLayerParams, EncoderShape, LayerNormParams,
};

pub const PATCH_SIZE: usize = 16;
pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
}

impl PatchGrid {
    pub fn new(channels: usize, height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0
            || !height.is_multiple_of(patch)
            || !width.is_multiple_of(patch)
            || height == 0
            || width == 0
        {
            return Err(Error::Dimension(format!(
                "image {height}×{width} is not divisible into {patch}×{patch} patches"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            patch,
        })
    }

    pub fn rows(&self) -> usize {
        self.height / self.patch
    }

    pub fn cols(&self) -> usize {
        self.width / self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// For every element of the `[N × P²C]` patch matrix, its flat index in
    /// the `[C × H × W]` image. Patches run row-major over the grid; each
    /// patch is flattened channel-major, then row, then column.
    pub fn index_map(&self) -> Vec<usize> {
        let (p, h, w) = (self.patch, self.height, self.width);
        let mut map = Vec::with_capacity(self.num_patches() * self.patch_len());
        for gy in 0..self.rows() {
            for gx in 0..self.cols() {
                for c in 0..self.channels {
                    for py in 0..p {
                        let row = c * h * w + (gy * p + py) * w + gx * p;
                        map.extend(row..row + p);
                    }
                }
            }
        }
        map
    }

    fn of_image<T: Real>(img: &Tensor<T>, patch: usize) -> Result<Self> {
        match *img.shape() {
            [c, h, w] => Self::new(c, h, w, patch),
            ref s => Err(Error::Dimension(format!(
                "expected a C×H×W image, got {s:?}"
            ))),
        }
    }
}

pub fn extract_patches<T: Real>(img: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let grid = PatchGrid::of_image(img, patch)?;
    let data = grid
        .index_map()
        .into_iter()
        .map(|i| img.data()[i])
        .collect();
    Tensor::new(vec![grid.num_patches(), grid.patch_len()], data)
}

/// Inverse of [`extract_patches`].
pub fn reassemble_patches<T: Real>(patches: &Tensor<T>, grid: PatchGrid) -> Result<Tensor<T>> {
    if patches.shape() != [grid.num_patches(), grid.patch_len()] {
        return Err(Error::Dimension(format!(
            "patch matrix {:?} does not match grid {grid:?}",
            patches.shape()
        )));
    }
    let mut img = Tensor::zeros(vec![grid.channels, grid.height, grid.width]);
    for (src, dst) in grid.index_map().into_iter().enumerate() {
        img.data_mut()[dst] = patches.data()[src];
    }
    Ok(img)
}

/// Recorded version of [`extract_patches`]; gradients flow back to pixels.
pub fn extract_patches_var<T: Real>(g: &mut Graph<T>, img: Var, patch: usize) -> Result<Var> {
    let grid = PatchGrid::of_image(g.value(img), patch)?;
    g.gather(
        img,
        grid.index_map(),
        vec![grid.num_patches(), grid.patch_len()],
    )
}

#[derive(Debug, Clone)]
pub struct PatchEmbedParams {
    pub proj: ParamId,
    pub cls_token: ParamId,
    pub pos_embed: ParamId,
    pub grid: PatchGrid,
    pub dim: usize,
}

impl PatchEmbedParams {
    pub fn init(
        store: &mut ParamStore,
        grid: PatchGrid,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let n = grid.num_patches();
        Ok(Self {
            proj: store.insert_normal("vision.patch.proj", vec![grid.patch_len(), dim], rng)?,
            cls_token: store.insert_normal("vision.patch.cls", vec![1, dim], rng)?,
            pos_embed: store.insert_normal("vision.patch.pos", vec![n + 1, dim], rng)?,
            grid,
            dim,
        })
    }
}

/// `[N × P²C]` patches → `[(N+1) × d]` tokens: project, prepend CLS, add
/// positions.
pub fn embed_patches<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &PatchEmbedParams,
    patches: Var,
) -> Result<Var> {
    let projected = g.matmul(patches, bound[p.proj])?;
    let seq = g.concat_rows(&[bound[p.cls_token], projected])?;
    g.add(seq, bound[p.pos_embed])
}

#[derive(Debug, Clone)]
pub struct VisionParams {
    pub patch: PatchEmbedParams,
    pub layers: Vec<EncoderLayerParams>,
    pub ln_final: LayerNormParams,
}

impl VisionParams {
    pub fn init(
        store: &mut ParamStore,
        grid: PatchGrid,
        depth: usize,
        shape: EncoderShape,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            patch: PatchEmbedParams::init(store, grid, shape.dim, rng)?,
            layers: init_stack(store, "vision.layers", depth, shape, rng)?,
            ln_final: LayerNormParams::init(store, "vision.ln_f", shape.dim, shape.ln_eps)?,
        })
    }
}

/// Full token sequence `[(N+1) × d]` of the vision encoder. With
/// `bypass_stack` the transformer layers are skipped and the patch
/// embeddings go straight to the final normalization.
pub fn vision_encode<T: Real>(
    g: &mut Graph<T>,
    bound: &Bound,
    p: &VisionParams,
    img: Var,
    bypass_stack: bool,
) -> Result<Var> {
    if *g.shape(img)
        != [
            p.patch.grid.channels,
            p.patch.grid.height,
            p.patch.grid.width,
        ]
    {
        return Err(Error::Dimension(format!(
            "image shape {:?} does not match the configured {}×{}×{}",
            g.shape(img),
            p.patch.grid.channels,
            p.patch.grid.height,
            p.patch.grid.width
        )));
    }
    let patches = extract_patches_var(g, img, p.patch.grid.patch)?;
    let tokens = embed_patches(g, bound, &p.patch, patches)?;
    let encoded = if bypass_stack {
        tokens
    } else {
        encoder_stack(g, bound, &p.layers, tokens, None)?.out
    };
    p.ln_final.apply(g, bound, encoded)
}
