//! Command-line surface: training, evaluation, the ablation matrix, GradCAM
//! export, and the synthetic dataset generator.

pub mod pipeline;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stma_core::caption::{preprocess_text, Stopwords};
use stma_core::data::{self, image, toy};
use stma_core::gradcam;
use stma_core::train::{self, Hyperparams, MetricsReport, Profile};
use stma_core::{AblationMode, StmaModel};

use pipeline::{ConfigSnapshot, Prepared, RunRecord};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTEGRITY: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "stma",
    version,
    about = "Multimodal image+caption hate classifier"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Train every ablation mode on the same splits and tabulate them.
    Ablate(AblateArgs),
    /// Export a GradCAM heatmap for one image and caption.
    Gradcam(GradcamArgs),
    /// Write the synthetic confounder dataset.
    GenerateToy(ToyArgs),
    /// Print the hyperparameter presets as JSON.
    Profiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Mmhs150k,
    Multioff,
    Hmc,
    Toy,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Mmhs150k => Profile::Mmhs150k,
            ProfileArg::Multioff => Profile::Multioff,
            ProfileArg::Hmc => Profile::Hmc,
            ProfileArg::Toy => Profile::Toy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub embed_dim: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub layers: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub heads: Option<u64>,
    /// Overrides the profile's augmentation setting.
    #[arg(long)]
    pub augment: Option<bool>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum)]
    pub profile: ProfileArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "full", value_parser = parse_mode)]
    pub ablation: AblationMode,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Split seed; defaults to the seed stored in the checkpoint.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; defaults to `eval.<split>.json` next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "toy")]
    pub profile: ProfileArg,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub caption: String,
    /// Heatmap PGM path; the overlay goes next to it as `<stem>.overlay.ppm`.
    #[arg(long)]
    pub out: PathBuf,
    /// Class logit to explain; defaults to the predicted class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..2))]
    pub class: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_mode(s: &str) -> std::result::Result<AblationMode, String> {
    s.parse().map_err(|e: stma_core::Error| e.to_string())
}

/// Usage problems found after argument parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Process exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use stma_core::Error as E;
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.chain().find_map(|e| e.downcast_ref::<E>()) {
        Some(E::Config(_)) => EXIT_USAGE,
        Some(E::Integrity(_) | E::Version { .. }) => EXIT_INTEGRITY,
        Some(E::NonFinite { .. }) => EXIT_NUMERIC,
        Some(
            E::Io { .. }
            | E::Parse { .. }
            | E::EmptyDataset(_)
            | E::Decode { .. }
            | E::Channel { .. }
            | E::Contract(_),
        ) => EXIT_DATA,
        _ => {
            if err
                .chain()
                .any(|e| e.downcast_ref::<std::io::Error>().is_some())
            {
                EXIT_DATA
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|r| {
            println!(
                "{}",
                serde_json::to_string_pretty(&r.metrics).expect("serializable")
            );
        }),
        Command::Eval(a) => cmd_eval(&a).map(|r| {
            println!(
                "{}",
                serde_json::to_string_pretty(&r).expect("serializable")
            );
        }),
        Command::Ablate(a) => cmd_ablate(&a).map(|t| print!("{t}")),
        Command::Gradcam(a) => cmd_gradcam(&a).map(|h| {
            println!(
                "class {} (p = [{:.4}, {:.4}]) heatmap {}",
                h.class,
                h.probs[0],
                h.probs[1],
                a.out.display()
            );
        }),
        Command::GenerateToy(a) => {
            let m = toy::write_toy_dataset(&a.out_dir, a.n, a.seed)?;
            println!("{}", m.display());
            Ok(())
        }
        Command::Profiles => {
            println!("{}", profiles_json()?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ProfileDump {
    profile: Profile,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    optimizer: train::Optimizer,
    augment: bool,
}

pub fn profiles_json() -> Result<String> {
    let rows: Vec<_> = Profile::ALL
        .into_iter()
        .map(|p| {
            let h = p.hyperparams(0);
            ProfileDump {
                profile: p,
                epochs: h.epochs,
                batch_size: h.batch_size,
                learning_rate: h.learning_rate,
                optimizer: h.optimizer,
                augment: h.augment,
            }
        })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)?)
}

/// Profile defaults with command-line overrides applied.
pub fn resolve(
    profile: Profile,
    mode: AblationMode,
    seed: u64,
    o: &Overrides,
) -> Result<(Hyperparams, stma_core::ModelConfig)> {
    let mut hp = profile.hyperparams(seed);
    if let Some(e) = o.epochs {
        hp.epochs = e as usize;
    }
    if let Some(b) = o.batch_size {
        hp.batch_size = b as usize;
    }
    if let Some(lr) = o.lr {
        hp.learning_rate = lr;
    }
    if let Some(a) = o.augment {
        hp.augment = a;
    }
    let mut cfg = profile.model_config().with_ablation(mode);
    if let Some(d) = o.embed_dim {
        cfg.embed_dim = d as usize;
    }
    if let Some(l) = o.layers {
        cfg.layers = l as usize;
    }
    if let Some(h) = o.heads {
        cfg.num_heads = h as usize;
    }
    hp.validate()?;
    // Vocabulary size is not known yet; check everything else now.
    let mut probe = cfg.clone();
    probe.vocab_size = probe.vocab_size.max(3);
    probe.validate()?;
    Ok((hp, cfg))
}

fn snapshot(
    manifest: &Path,
    profile: Profile,
    mode: AblationMode,
    hp: &Hyperparams,
    cfg: &stma_core::ModelConfig,
    prep: &Prepared,
) -> ConfigSnapshot {
    let mut model = cfg.clone().with_ablation(mode);
    model.vocab_size = prep.vocab.len();
    ConfigSnapshot {
        run_id: pipeline::run_id(profile, mode, hp.seed),
        manifest: manifest.to_path_buf(),
        profile,
        ablation: mode,
        hyperparams: hp.clone(),
        model,
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<RunRecord> {
    let profile = Profile::from(a.profile);
    let (hp, cfg) = resolve(profile, a.ablation, a.seed, &a.overrides)?;
    let prep = pipeline::prepare(&a.manifest, cfg.image_size, cfg.max_len, a.seed)?;
    let snap = snapshot(&a.manifest, profile, a.ablation, &hp, &cfg, &prep);
    pipeline::run_training(&prep, &snap, &a.out_dir)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricsReport> {
    let ckpt = data::load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let seed = a.seed.unwrap_or(ckpt.meta.seed);
    if ckpt.vocab.max_len() != ckpt.config.max_len {
        return Err(stma_core::Error::Integrity(format!(
            "vocabulary max_len {} differs from model max_len {}",
            ckpt.vocab.max_len(),
            ckpt.config.max_len
        ))
        .into());
    }
    let model = StmaModel::from_parameters(ckpt.config.clone(), ckpt.params.clone())?;
    let split = pipeline::load_split(&a.manifest, ckpt.config.image_size, seed)?;
    let records = match a.split {
        SplitArg::Train => &split.train,
        SplitArg::Val => &split.val,
        SplitArg::Test => &split.test,
    };
    let samples = data::to_samples(records, &ckpt.vocab, ckpt.channel_mean);
    let report = train::evaluate(&model, &samples)?.report;
    let out = a.out.clone().unwrap_or_else(|| {
        let name = format!("eval.{}.json", format!("{:?}", a.split).to_lowercase());
        a.checkpoint.with_file_name(name)
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    Ok(report)
}

/// Trains all seven modes in table order. The table file is rewritten after
/// every finished mode, so a failure leaves the completed rows behind.
pub fn cmd_ablate(a: &AblateArgs) -> Result<String> {
    let profile = Profile::from(a.profile);
    let (hp, cfg) = resolve(profile, AblationMode::Full, a.seed, &a.overrides)?;
    let prep = pipeline::prepare(&a.manifest, cfg.image_size, cfg.max_len, a.seed)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let table_path = a.out_dir.join(pipeline::TABLE_FILE);
    let mut rows = Vec::new();
    let mut table = pipeline::render_table(&rows, a.seed, prep.test.len());
    for mode in AblationMode::ALL {
        let snap = snapshot(&a.manifest, profile, mode, &hp, &cfg, &prep);
        let rec = pipeline::run_training(&prep, &snap, &a.out_dir.join(mode.as_str()))
            .with_context(|| format!("ablation mode {mode}"))?;
        rows.push((mode, rec.metrics.test));
        table = pipeline::render_table(&rows, a.seed, prep.test.len());
        fs::write(&table_path, &table)
            .with_context(|| format!("writing {}", table_path.display()))?;
    }
    Ok(table)
}

pub fn cmd_gradcam(a: &GradcamArgs) -> Result<gradcam::Heatmap> {
    let ckpt = data::load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let cfg = &ckpt.config;
    let model = StmaModel::from_parameters(cfg.clone(), ckpt.params.clone())?;
    let img = image::load_image(&a.image, cfg.image_size, cfg.image_size, ckpt.channel_mean)?;
    let ids = ckpt
        .vocab
        .encode_ids(&preprocess_text(&a.caption, &Stopwords::default()));
    let heat = gradcam::gradcam(&model, &img, &ids, a.class.map(|c| c as usize))?;
    if heat.rows != heat.cols {
        bail!("patch grid {}×{} is not square", heat.rows, heat.cols);
    }
    let full = heat.upsample(cfg.patch_size);
    let side = cfg.image_size;
    image::write_pgm(&a.out, side, side, &gradcam::heat_to_gray(&full))?;
    let display = gradcam::tensor_to_rgb(&img, ckpt.channel_mean);
    image::write_ppm(&overlay_path(&a.out), &gradcam::overlay(&display, &full)?)?;
    Ok(heat)
}

pub fn overlay_path(pgm: &Path) -> PathBuf {
    let stem = pgm
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    pgm.with_file_name(format!("{stem}.overlay.ppm"))
}
