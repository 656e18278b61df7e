//! Manifest → splits → samples, and the run-directory writers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stma_core::caption::{Stopwords, Vocabulary};
use stma_core::data::{self, Checkpoint, Record, Sample, TrainingMeta};
use stma_core::train::{self, EpochRecord, Hyperparams, MetricsReport, Profile};
use stma_core::{AblationMode, ModelConfig, StmaModel};

pub const CONFIG_FILE: &str = "config.snapshot";
pub const EPOCHS_FILE: &str = "epochs.log";
pub const METRICS_FILE: &str = "metrics.final";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TABLE_FILE: &str = "ablation.table";

/// Splits with the statistics derived from the training part.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub channel_mean: [f32; 3],
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub dropped: usize,
}

impl Prepared {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

#[derive(Debug, Clone)]
pub struct RecordSplit {
    pub train: Vec<Record>,
    pub val: Vec<Record>,
    pub test: Vec<Record>,
    pub dropped: usize,
}

pub fn load_split(manifest: &Path, image_size: usize, seed: u64) -> Result<RecordSplit> {
    let m = data::load_manifest(manifest)?;
    let records = data::load_records(&m.entries, image_size, &Stopwords::default())?;
    let s = train::split_dataset(&records, seed)?;
    Ok(RecordSplit {
        train: s.train,
        val: s.val,
        test: s.test,
        dropped: m.dropped,
    })
}

pub fn prepare(manifest: &Path, image_size: usize, max_len: usize, seed: u64) -> Result<Prepared> {
    let s = load_split(manifest, image_size, seed)?;
    let vocab = Vocabulary::build(s.train.iter().map(|r| r.tokens.as_slice()), max_len)?;
    let channel_mean = data::channel_mean(s.train.iter().map(|r| &r.image));
    Ok(Prepared {
        train: data::to_samples(&s.train, &vocab, channel_mean),
        val: data::to_samples(&s.val, &vocab, channel_mean),
        test: data::to_samples(&s.test, &vocab, channel_mean),
        vocab,
        channel_mean,
        dropped: s.dropped,
    })
}

/// Everything needed to reproduce a run from the same manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub run_id: String,
    pub manifest: PathBuf,
    pub profile: Profile,
    pub ablation: AblationMode,
    pub hyperparams: Hyperparams,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub run_id: String,
    pub best_epoch: usize,
    pub train: MetricsReport,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub dir: PathBuf,
    pub metrics: FinalMetrics,
    pub epochs: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Trains one model on prepared data and writes the run directory.
pub fn run_training(
    prep: &Prepared,
    snapshot: &ConfigSnapshot,
    out_dir: &Path,
) -> Result<RunRecord> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_json(&out_dir.join(CONFIG_FILE), snapshot)?;

    let hp = &snapshot.hyperparams;
    let mut model = StmaModel::new(snapshot.model.clone(), hp.seed)?;
    let epochs_path = out_dir.join(EPOCHS_FILE);
    let mut log = fs::File::create(&epochs_path)
        .with_context(|| format!("creating {}", epochs_path.display()))?;
    let outcome = train::train(&mut model, &prep.train, &prep.val, hp, |r| {
        let line = serde_json::to_string(r)?;
        writeln!(log, "{line}").map_err(|e| stma_core::Error::Io {
            path: epochs_path.clone(),
            source: e,
        })?;
        log::info!(
            "{} epoch {}: loss {:.4} acc {:.4} val_acc {}",
            snapshot.run_id,
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            r.val_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
        );
        Ok(())
    })?;

    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    data::save_checkpoint(
        &Checkpoint {
            config: snapshot.model.clone(),
            vocab: prep.vocab.clone(),
            params: model.params().clone(),
            channel_mean: prep.channel_mean,
            meta: TrainingMeta {
                seed: hp.seed,
                epoch: outcome.best_epoch,
                val_accuracy: outcome.best_val_accuracy,
            },
        },
        &checkpoint,
    )?;

    let metrics = FinalMetrics {
        run_id: snapshot.run_id.clone(),
        best_epoch: outcome.best_epoch,
        train: train::evaluate(&model, &prep.train)?.report,
        val: train::evaluate(&model, &prep.val)?.report,
        test: train::evaluate(&model, &prep.test)?.report,
    };
    write_json(&out_dir.join(METRICS_FILE), &metrics)?;
    Ok(RunRecord {
        run_id: snapshot.run_id.clone(),
        dir: out_dir.to_path_buf(),
        metrics,
        epochs: outcome.records,
        checkpoint,
    })
}

pub fn run_id(profile: Profile, mode: AblationMode, seed: u64) -> String {
    format!("{profile}-{mode}-seed{seed}")
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| format!("{:>8}", "n/a"), |v| format!("{v:>8.4}"))
}

/// Fixed-width text table, one row per finished mode, in table order.
pub fn render_table(rows: &[(AblationMode, MetricsReport)], seed: u64, n_test: usize) -> String {
    let mut out = format!("Ablation scores (test split, {n_test} samples, seed {seed})\n");
    out.push_str(&format!(
        "{:<46}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
        "Model", "Acc", "P", "R", "F1", "AUC"
    ));
    for (mode, r) in rows {
        out.push_str(&format!(
            "{:<46}{}{}{}{}{}\n",
            mode.label(),
            fmt_metric(Some(r.accuracy)),
            fmt_metric(Some(r.precision)),
            fmt_metric(Some(r.recall)),
            fmt_metric(Some(r.f1)),
            fmt_metric(r.auc),
        ));
    }
    out.push_str(
        "\nNote: the vision-encoder ablation sends the patch embeddings straight to the \
         final layer norm;\nno pretrained CNN is substituted for the removed transformer stack.\n",
    );
    out
}
