//! Manifests, image decoding and normalization, the synthetic confounder
//! dataset, and checkpoint files.

pub mod checkpoint;
pub mod image;
mod manifest;
pub mod toy;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta, FORMAT_VERSION};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestEntry};

use crate::caption::{preprocess_text, Stopwords, Vocabulary};
use crate::error::Result;
use crate::tensor::Tensor;

/// One model-ready example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `3 × H × W`, unit-scaled then mean-centered per channel.
    pub image: Tensor<f32>,
    /// Exactly `max_len` ids.
    pub token_ids: Vec<usize>,
    pub label: usize,
}

/// A decoded manifest entry before the training-split statistics are known.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    /// `3 × H × W` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub tokens: Vec<String>,
    pub label: usize,
}

/// Decodes every entry's image at `size × size` and cleans its caption.
pub fn load_records(
    entries: &[ManifestEntry],
    size: usize,
    stopwords: &Stopwords,
) -> Result<Vec<Record>> {
    entries
        .iter()
        .map(|e| {
            Ok(Record {
                id: e.id.clone(),
                image: image::load_unit_image(&e.image_path, size, size)?,
                tokens: preprocess_text(&e.caption, stopwords),
                label: e.label,
            })
        })
        .collect()
}

/// Per-channel pixel mean over the given records, accumulated sequentially
/// in `f64`.
pub fn channel_mean<'a, I>(images: I) -> [f32; 3]
where
    I: IntoIterator<Item = &'a Tensor<f32>>,
{
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for img in images {
        let plane = img.len() / 3;
        for (c, s) in sum.iter_mut().enumerate() {
            *s += img.data()[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        count += plane;
    }
    if count == 0 {
        return [0.0; 3];
    }
    sum.map(|s| (s / count as f64) as f32)
}

/// Subtracts `mean[c]` from every pixel of channel `c`.
pub fn subtract_mean(img: &Tensor<f32>, mean: [f32; 3]) -> Tensor<f32> {
    let plane = img.len() / 3;
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v -= mean[i / plane];
    }
    out
}

pub fn to_sample(record: &Record, vocab: &Vocabulary, mean: [f32; 3]) -> Sample {
    Sample {
        id: record.id.clone(),
        image: subtract_mean(&record.image, mean),
        token_ids: vocab.encode_ids(&record.tokens),
        label: record.label,
    }
}

pub fn to_samples(records: &[Record], vocab: &Vocabulary, mean: [f32; 3]) -> Vec<Sample> {
    records.iter().map(|r| to_sample(r, vocab, mean)).collect()
}
