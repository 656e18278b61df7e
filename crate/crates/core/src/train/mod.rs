//! Loss, Adam, dataset splits, augmentation, metrics, and the epoch loop.

mod augment;
mod hyper;
mod metrics;
mod optim;
mod split;

pub use augment::{
    augment, center_zoom, flip_horizontal, rotate, AugmentPlan, Rotation, ZOOM_SCALE,
};
pub use hyper::{Hyperparams, Optimizer, Profile};
pub use metrics::{roc_auc, Confusion, MetricsReport};
pub use optim::{adam_step, OptimizerState, ADAM_EPS, BETA1, BETA2};
pub use split::{split_dataset, split_sizes, Split};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::StmaModel;
use crate::params::ParamStore;

/// Lower clamp on the probability inside `−log p`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Stream of the training RNG (shuffling and augmentation). Model
/// initialization uses stream 0 of the same seed.
const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's training samples, measured during the pass.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose parameters the model now holds.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub loss: f64,
    /// Hate probability per sample, in input order.
    pub scores: Vec<f64>,
}

pub fn sample_loss(probs: [f32; 2], label: usize) -> f64 {
    -(probs[label] as f64).max(PROB_FLOOR).ln()
}

pub fn evaluate(model: &StmaModel, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation split is empty".into()));
    }
    let mut scores = Vec::with_capacity(samples.len());
    let mut loss = 0.0;
    for s in samples {
        let p = model.predict(s)?;
        loss += sample_loss(p, s.label);
        scores.push(p[1] as f64);
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        report: MetricsReport::from_scores(&scores, &labels),
        loss: loss / samples.len() as f64,
        scores,
    })
}

/// Runs `hp.epochs` passes of mini-batch Adam over `train` and leaves the
/// model at the epoch with the best validation accuracy (ties: lower
/// validation loss, then earlier epoch). Without a validation split the
/// last epoch is kept. `on_epoch` sees every record as soon as it exists.
pub fn train(
    model: &mut StmaModel,
    train: &[Sample],
    val: &[Sample],
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut state = OptimizerState::new(model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::with_capacity(hp.epochs);
    let mut best: Option<(usize, f64, f64, ParamStore)> = None;

    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(hp.batch_size) {
            let scale = 1.0 / batch.len() as f32;
            model.params_mut().zero_grads();
            for &i in batch {
                let mut sample = train[i].clone();
                if hp.augment {
                    sample.image = augment(&sample.image, &mut rng);
                }
                let (loss, probs, grads) = model.loss_probs_and_grads(&sample, scale)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        op: "training loss",
                    });
                }
                loss_sum += loss as f64;
                correct += usize::from(usize::from(probs[1] > 0.5) == sample.label);
                model.params_mut().accumulate_grads(&grads)?;
            }
            adam_step(model.params_mut(), &mut state, hp.learning_rate)?;
        }
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let e = evaluate(model, val)?;
            (Some(e.loss), Some(e.report.accuracy))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&record)?;
        records.push(record);

        let (acc, loss) = (val_accuracy.unwrap_or(0.0), val_loss.unwrap_or(0.0));
        let better = match &best {
            None => true,
            Some(_) if val.is_empty() => true,
            Some((_, a, l, _)) => acc > *a || (acc == *a && loss < *l),
        };
        if better {
            best = Some((epoch, acc, loss, model.params().clone()));
        }
    }
    let (best_epoch, best_acc, _, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    model.params_mut().clear_grads();
    Ok(TrainOutcome {
        records,
        best_epoch,
        best_val_accuracy: (!val.is_empty()).then_some(best_acc),
    })
}
