use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use famdrift::clusterer::{build_family_model, Provenance};
use famdrift::dataio::{
    apply_mask, fit_variance_mask, load_dataset, read_mask, split, write_dataset, write_mask,
    FeatureMask, LabeledDataset, SplitMode, SyntheticSpec,
};
use famdrift::detector::{mad_fit_model, DEFAULT_MAD_COEFFICIENT};
use famdrift::harness::persist::{load_family_model, load_network, save_family_model, save_network};
use famdrift::harness::{detect_rows, report_render, run_leave_one_out, EvalConfig, ReportFormat};
use famdrift::metric::{embed, train, TrainConfig, TrainMode, DEFAULT_HIDDEN_DIMS};

#[derive(Parser)]
#[command(name = "famdrift", version, about = "Detect unseen malware families in feature vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a variance mask and write a temporal train/test split.
    Prep(PrepArgs),
    /// Generate a synthetic labeled dataset of Gaussian families.
    Synth(SynthArgs),
    /// Train the autoencoder.
    Train(TrainArgs),
    /// Cluster training embeddings into a family model.
    Cluster(ClusterArgs),
    /// Classify samples as a known family or drift.
    Detect(DetectArgs),
    /// Run the leave-one-family-out evaluation.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Global,
    PerFamily,
}

impl From<SplitArg> for SplitMode {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Global => SplitMode::Global,
            SplitArg::PerFamily => SplitMode::PerFamily,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Vanilla,
    Triplet,
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdMode {
    Dbscan,
    Mad,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderArg {
    Table,
    Csv,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    min_variance: f64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, value_enum, default_value_t = SplitArg::Global)]
    split: SplitArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    families: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 300)]
    per_family: usize,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 1)]
    clusters_per_family: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    /// Mask file from `prep`; all columns are kept when omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Triplet)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Triplets drawn per epoch; defaults to the number of training samples.
    #[arg(long)]
    triplets_per_epoch: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// `auto` or comma-separated encoder widths starting with the input width.
    #[arg(long, default_value = "auto")]
    dims: String,
    #[arg(long)]
    out: PathBuf,
    /// Write the per-epoch losses as CSV.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Print one summary line per cluster.
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    family_model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ThresholdMode::Dbscan)]
    threshold_mode: ThresholdMode,
    #[arg(long, default_value_t = DEFAULT_MAD_COEFFICIENT)]
    mad_coefficient: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    min_variance: f64,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, value_enum, default_value_t = SplitArg::Global)]
    split: SplitArg,
    #[arg(long, default_value = "auto")]
    dims: String,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long)]
    triplets_per_epoch: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAD_COEFFICIENT)]
    mad_coefficient: f64,
    /// CSV report destination.
    #[arg(long)]
    out: PathBuf,
    /// Also print the report to stdout in this format.
    #[arg(long, value_enum)]
    render: Option<RenderArg>,
    /// Save each scenario's network and family model here.
    #[arg(long)]
    model_dir: Option<PathBuf>,
}

/// `None` for `auto`, otherwise the parsed comma-separated widths.
fn parse_dims(spec: &str) -> Result<Option<Vec<usize>>> {
    if spec.trim() == "auto" {
        return Ok(None);
    }
    let dims = spec
        .split(',')
        .map(|d| d.trim().parse::<usize>().with_context(|| format!("bad layer width {d:?} in --dims")))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 {
        bail!("--dims needs at least an input and a latent width");
    }
    Ok(Some(dims))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn prep(a: PrepArgs) -> Result<()> {
    let ds = load_dataset(&a.input)?;
    let mask = fit_variance_mask(&ds, a.min_variance)?;
    let (train_part, test_part) = split(&ds, a.train_fraction, a.split.into())?;
    fs::create_dir_all(&a.out_dir)?;
    write_mask(a.out_dir.join("mask.txt"), &mask)?;
    write_dataset(a.out_dir.join("train.csv"), &train_part)?;
    write_dataset(a.out_dir.join("test.csv"), &test_part)?;
    println!(
        "kept {} of {} features; train {} rows, test {} rows",
        mask.len(),
        ds.width(),
        train_part.len(),
        test_part.len()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let data = SyntheticSpec {
        n_families: a.families,
        dim: a.dim,
        samples_per_family: a.per_family,
        centroid_separation: a.separation,
        clusters_per_family: a.clusters_per_family,
    }
    .generate(a.seed)?;
    write_dataset(&a.out, &data.dataset)?;
    println!("wrote {} samples to {}", data.dataset.len(), a.out.display());
    Ok(())
}

/// Loads a raw CSV and projects it onto `mask`.
fn load_masked(path: &Path, mask: &FeatureMask) -> Result<LabeledDataset> {
    let ds = load_dataset(path)?;
    Ok(apply_mask(&ds, mask).with_context(|| format!("applying the model's feature mask to {}", path.display()))?)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let raw = load_dataset(&a.input)?;
    let mask = match &a.mask {
        Some(p) => read_mask(p)?,
        None => FeatureMask::identity(raw.width()),
    };
    let ds = apply_mask(&raw, &mask)?;
    let layer_dims = parse_dims(&a.dims)?
        .unwrap_or_else(|| std::iter::once(ds.width()).chain(DEFAULT_HIDDEN_DIMS).collect());
    let cfg = TrainConfig {
        layer_dims,
        margin: a.margin,
        triplet_weight: a.lambda,
        epochs: a.epochs,
        batch_size: a.batch,
        triplets_per_epoch: a.triplets_per_epoch,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let mode = match a.mode {
        ModeArg::Vanilla => TrainMode::Vanilla,
        ModeArg::Triplet => TrainMode::Triplet,
    };
    log::info!("training {} on {} samples: {cfg}", mode.as_str(), ds.len());
    let model = train(&ds, &cfg, mode)?.with_mask(mask)?;
    let hash = save_network(&a.out, &model)?;
    if let Some(path) = &a.loss_curve {
        let mut text = String::from("epoch,recon_loss,triplet_loss\n");
        for e in &model.loss_curve {
            text.push_str(&format!("{},{},{}\n", e.epoch, e.reconstruction, e.triplet));
        }
        write_text(path, &text)?;
    }
    println!("saved {} (sha256 {hash})", a.out.display());
    Ok(())
}

fn cluster_cmd(a: ClusterArgs) -> Result<()> {
    let (model, hash) = load_network(&a.model)?;
    let ds = load_masked(&a.input, &model.feature_mask)?;
    let z = embed(&model, &ds)?;
    let mut fm = build_family_model(z.view(), ds.labels(), model.latent_dim())?;
    fm.provenance = Provenance {
        network_hash: hash,
        config: model.config.to_string(),
    };
    save_family_model(&a.out, &fm)?;
    if a.report {
        print!("{}", fm.report());
    }
    Ok(())
}

fn detect_cmd(a: DetectArgs) -> Result<()> {
    let (model, hash) = load_network(&a.model)?;
    let fm = load_family_model(&a.family_model, Some(&hash))?;
    let ds = load_masked(&a.input, &model.feature_mask)?;
    let z = embed(&model, &ds)?;
    let mad = match a.threshold_mode {
        ThresholdMode::Dbscan => None,
        ThresholdMode::Mad => Some(mad_fit_model(&fm, a.mad_coefficient)?),
    };
    let verdicts = detect_rows(&fm, mad.as_ref(), z.view())?;
    let mut text = String::from("sample_index,verdict,nearest_family,nearest_cluster,distance,threshold\n");
    for (i, v) in verdicts.iter().enumerate() {
        text.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            v.verdict, v.nearest_family, v.nearest_cluster_id, v.distance, v.threshold_used
        ));
    }
    write_text(&a.out, &text)?;
    let drift = verdicts.iter().filter(|v| v.is_drift()).count();
    println!("{} samples, {drift} flagged DRIFT", verdicts.len());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let cfg = EvalConfig {
        min_variance: a.min_variance,
        train_fraction: a.train_fraction,
        split: a.split.into(),
        dims: parse_dims(&a.dims)?,
        margin: a.margin,
        triplet_weight: a.lambda,
        epochs: a.epochs,
        batch_size: a.batch,
        triplets_per_epoch: a.triplets_per_epoch,
        learning_rate: a.lr,
        seed: a.seed,
        mad_coefficient: a.mad_coefficient,
    };
    let report = run_leave_one_out(&a.input, &cfg, a.model_dir.as_deref())?;
    write_text(&a.out, &report_render(&report, ReportFormat::Csv))?;
    match a.render {
        Some(RenderArg::Table) => print!("{}", report_render(&report, ReportFormat::Table)),
        Some(RenderArg::Csv) => print!("{}", report_render(&report, ReportFormat::Csv)),
        None => {}
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prep(a) => prep(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Cluster(a) => cluster_cmd(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
