//! Gradient-weighted activation maps over the vision encoder's patch
//! tokens.

use crate::data::image::Rgb8;
use crate::error::{Error, Result};
use crate::model::StmaModel;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// One value per patch, row-major, min-max normalized to `[0, 1]`.
    pub values: Vec<f32>,
    /// Class whose logit was differentiated.
    pub class: usize,
    pub probs: [f32; 2],
}

impl Heatmap {
    /// Nearest-neighbor upsampling: every patch value fills its
    /// `patch × patch` block.
    pub fn upsample(&self, patch: usize) -> Vec<f32> {
        let (h, w) = (self.rows * patch, self.cols * patch);
        (0..h * w)
            .map(|i| self.values[(i / w / patch) * self.cols + (i % w) / patch])
            .collect()
    }
}

/// Min-max normalization; a constant map becomes all zeros.
pub fn normalize(values: &mut [f32]) {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    for v in values.iter_mut() {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
    }
}

/// Differentiates the predicted class's logit (or `class`, if given) with
/// respect to the vision encoder output. Each patch token `i` scores
/// `ReLU(Σ_d w_d · feat_{i,d})` with `w_d` the gradient averaged over
/// patch tokens.
pub fn gradcam(
    model: &StmaModel,
    image: &Tensor<f32>,
    token_ids: &[usize],
    class: Option<usize>,
) -> Result<Heatmap> {
    let vp = model
        .vision()
        .ok_or_else(|| Error::Config("GradCAM needs a model with a vision branch".into()))?;
    let (rows, cols) = (vp.patch.grid.rows(), vp.patch.grid.cols());
    let mut g = Graph::<f32>::new();
    let bound = model.params().bind(&mut g)?;
    let img = g.constant(image.clone())?;
    let trace = model.forward(&mut g, &bound, img, token_ids)?;
    let p = g.value(trace.probs).data();
    let probs = [p[0], p[1]];
    let class = class.unwrap_or(usize::from(probs[1] > probs[0]));
    let target = g.element(trace.logits, class)?;
    g.backward(target)?;

    let feats_var = trace.vision_tokens.expect("vision branch present");
    let d = g.shape(feats_var)[1];
    let n = g.shape(feats_var)[0] - 1;
    if n != rows * cols {
        return Err(Error::Dimension(format!(
            "{n} patch tokens do not form a {rows}×{cols} grid"
        )));
    }
    let feats = &g.value(feats_var).data()[d..];
    let zeros = vec![0.0; (n + 1) * d];
    let grads = &g.grad(feats_var).unwrap_or(&zeros)[d..];
    let mut w = vec![0.0f32; d];
    for row in grads.chunks_exact(d) {
        w.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    w.iter_mut().for_each(|v| *v /= n as f32);
    let mut values: Vec<f32> = feats
        .chunks_exact(d)
        .map(|f| f.iter().zip(&w).map(|(a, b)| a * b).sum::<f32>().max(0.0))
        .collect();
    normalize(&mut values);
    Ok(Heatmap {
        rows,
        cols,
        values,
        class,
        probs,
    })
}

pub fn heat_to_gray(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// The image on the left; the image blended half-and-half with a red heat
/// layer on the right.
pub fn overlay(image: &Rgb8, heat: &[f32]) -> Result<Rgb8> {
    let (w, h) = (image.width, image.height);
    if heat.len() != w * h {
        return Err(Error::Dimension(format!(
            "heat map of {} values for a {w}×{h} image",
            heat.len()
        )));
    }
    let mut out = Rgb8::filled(2 * w, h, [0; 3]);
    for y in 0..h {
        for x in 0..w {
            let px = image.get(x, y);
            out.put(x, y, px);
            let t = heat[y * w + x].clamp(0.0, 1.0);
            let layer = [255.0 * t, 64.0 * (1.0 - t), 255.0 * (1.0 - t)];
            let blend = [0, 1, 2].map(|c| (0.5 * px[c] as f32 + 0.5 * layer[c]).round() as u8);
            out.put(w + x, y, blend);
        }
    }
    Ok(out)
}

/// Undoes mean subtraction and scaling for display.
pub fn tensor_to_rgb(image: &Tensor<f32>, mean: [f32; 3]) -> Rgb8 {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let mut out = Rgb8::filled(w, h, [0; 3]);
    for p in 0..plane {
        let px = [0, 1, 2].map(|c| {
            ((image.data()[c * plane + p] + mean[c]).clamp(0.0, 1.0) * 255.0).round() as u8
        });
        out.put(p % w, p / w, px);
    }
    out
}
