//! Shared fixtures for the benchmarks.

use stma_core::data::Sample;
use stma_core::train::Profile;
use stma_core::{AblationMode, ModelConfig, StmaModel};

pub const VOCAB: usize = 40;

/// Toy-profile model of the given mode with a synthetic vocabulary size.
pub fn toy_config(mode: AblationMode) -> ModelConfig {
    let mut cfg = Profile::Toy.model_config().with_ablation(mode);
    cfg.vocab_size = VOCAB;
    cfg
}

/// A model plus one sample with a striped image and a half-filled caption.
pub fn fixture(mode: AblationMode) -> (StmaModel, Sample) {
    let cfg = toy_config(mode);
    let model = StmaModel::new(cfg.clone(), 1).expect("valid toy config");
    let mut image = stma_core::model::blank_image(&cfg);
    let side = cfg.image_size;
    for (i, v) in image.data_mut().iter_mut().enumerate() {
        *v = if ((i % side) / 2).is_multiple_of(2) {
            0.4
        } else {
            -0.4
        };
    }
    let token_ids = (0..cfg.max_len)
        .map(|i| {
            if i < cfg.max_len / 2 {
                3 + i % (VOCAB - 3)
            } else {
                0
            }
        })
        .collect();
    let sample = Sample {
        id: "bench".into(),
        image,
        token_ids,
        label: 1,
    };
    (model, sample)
}
