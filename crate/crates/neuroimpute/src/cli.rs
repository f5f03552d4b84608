//! Command-line interface. The binary is a thin wrapper over [`cli_main`];
//! every subcommand maps onto a library operation and all randomness flows
//! from explicit seeds.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::classifier::{
    fit, hyperparameter_search, predict_proba, BackboneSpec, FitConfig, Modality, SearchSpace,
    TrainedClassifier,
};
use crate::diffusion::{
    sample_conditional, scaled_linear_schedule, train_ddpm, DdpmCheckpoint, DdpmTrainConfig,
    DenoiserSpec,
};
use crate::error::{Error, Result};
use crate::harness::{
    collect_run_records, render_table, run_experiment, to_csv, to_text, ExperimentConfig,
    LoadedDataset, RunOutcome,
};
use crate::imputation::{build_augmented_training_set, AugmentationPlan, ImputationStrategy};
use crate::manifest::{DatasetManifest, Split};
use crate::metrics::{classification_metrics, ScoreMatrix};
use crate::phantom::{generate_dataset, DatasetCounts, PhantomSpec};
use crate::rng::seeded;
use crate::volume::{read_volume, write_volume};

#[derive(Parser)]
#[command(
    name = "neuroimpute",
    version,
    about = "Impute a missing imaging modality with a conditional diffusion model and measure its effect on 3-way classification"
)]
struct Cli {
    /// Overrides the seed found in config files, where one applies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic paired-volume dataset generation.
    Phantom {
        #[command(subcommand)]
        cmd: PhantomCmd,
    },
    /// Conditional diffusion training and sampling.
    Ddpm {
        #[command(subcommand)]
        cmd: DdpmCmd,
    },
    /// Impute missing DWI volumes into a dataset.
    Impute(ImputeArgs),
    /// Classifier training and evaluation.
    Classify {
        #[command(subcommand)]
        cmd: ClassifyCmd,
    },
    /// Config-driven multi-seed experiments.
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
    /// Aggregate run records into result tables.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Generate volumes and a manifest from a spec file.
    Generate {
        /// JSON file mirroring the phantom spec fields plus counts and
        /// paired_fraction.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DdpmCmd {
    /// Train the T1 -> FA denoiser on the paired training split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample one FA volume conditioned on a T1 volume.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    strategy: CliStrategy,
    /// Per-class additions, e.g. "cn=0,mci=200,ad=100".
    #[arg(long)]
    plan: String,
    /// Checkpoint directory; required for --strategy ddpm.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliStrategy {
    Ddpm,
    Blank,
    Avgdx,
}

#[derive(Subcommand)]
enum ClassifyCmd {
    /// Train a classifier on a dataset's train/val splits.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        modality: CliModality,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained classifier on one split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: CliSplit,
        /// Metrics JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliModality {
    T1,
    Dwi,
    Both,
}

impl From<CliModality> for Modality {
    fn from(m: CliModality) -> Self {
        match m {
            CliModality::T1 => Modality::T1,
            CliModality::Dwi => Modality::Dwi,
            CliModality::Both => Modality::Bimodal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliSplit {
    Train,
    Val,
    Test,
}

impl From<CliSplit> for Split {
    fn from(s: CliSplit) -> Self {
        match s {
            CliSplit::Train => Split::Train,
            CliSplit::Val => Split::Val,
            CliSplit::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run every seed of an experiment config; completed runs are skipped.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing run records (searched recursively).
    #[arg(long = "in")]
    input: PathBuf,
    /// Where report.csv and report.txt go; defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which rendering to print on stdout.
    #[arg(long, value_enum, default_value = "text")]
    format: CliFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliFormat {
    Csv,
    Text,
}

/// Phantom generation config: spec fields at the top level plus the split
/// counts and the paired fraction.
#[derive(Serialize, Deserialize)]
struct GenerateConfig {
    #[serde(flatten)]
    phantom: PhantomSpec,
    counts: DatasetCounts,
    #[serde(default = "default_paired_fraction")]
    paired_fraction: f64,
}

fn default_paired_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { timesteps: 1000, beta_start: 5e-4, beta_end: 1.95e-2 }
    }
}

#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct DdpmJobConfig {
    train: DdpmTrainConfig,
    denoiser: DenoiserSpec,
    schedule: ScheduleParams,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(default)]
struct ClassifyJobConfig {
    backbone: BackboneSpec,
    fit: FitConfig,
    search: Option<SearchSpace>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn absolutize(base: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        base.join(rel)
    }
}

fn run_command(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom { cmd: PhantomCmd::Generate { spec, out } } => {
            let mut config: GenerateConfig = read_json(&spec)?;
            if let Some(seed) = cli.seed {
                config.phantom.seed = seed;
            }
            let manifest =
                generate_dataset(&config.phantom, &config.counts, config.paired_fraction, &out)?;
            println!(
                "generated {} scans into {} (paired: {})",
                manifest.records.len(),
                out.display(),
                manifest.records.iter().filter(|r| r.has_dwi).count()
            );
            Ok(())
        }
        Command::Ddpm { cmd: DdpmCmd::Train { manifest, config, out } } => {
            let mut job: DdpmJobConfig = read_json(&config)?;
            if let Some(seed) = cli.seed {
                job.train.seed = seed;
            }
            let schedule = scaled_linear_schedule(
                job.schedule.timesteps,
                job.schedule.beta_start,
                job.schedule.beta_end,
            )?;
            let data = LoadedDataset::load(&manifest)?;
            let pairs: Vec<_> =
                data.paired_train().into_iter().map(|p| (p.t1, p.fa)).collect();
            let (mut ckpt, stats) =
                train_ddpm::<f32>(&pairs, &job.train, &job.denoiser, &schedule)?;
            ckpt.save(&out)?;
            println!(
                "trained {} epochs on {} pairs; final loss {:.6}; checkpoint at {}",
                job.train.epochs,
                pairs.len(),
                stats.epoch_losses.last().unwrap_or(&f64::NAN),
                out.display()
            );
            Ok(())
        }
        Command::Ddpm { cmd: DdpmCmd::Sample { ckpt, t1, out } } => {
            let ckpt = DdpmCheckpoint::<f32>::load(&ckpt)?;
            let t1 = read_volume(&t1)?;
            let mut rng = seeded(cli.seed.unwrap_or(0), 0x73616d70);
            let fa = sample_conditional(&t1, &ckpt, &mut rng)?;
            write_volume(&fa, &out)?;
            println!("sampled FA volume written to {}", out.display());
            Ok(())
        }
        Command::Impute(args) => run_impute(args, cli.seed.unwrap_or(0)),
        Command::Classify { cmd: ClassifyCmd::Train { manifest, modality, config, out } } => {
            let mut job: ClassifyJobConfig = read_json(&config)?;
            if let Some(seed) = cli.seed {
                job.fit.seed = seed;
            }
            let modality: Modality = modality.into();
            let data = LoadedDataset::load(&manifest)?;
            let train_set = data.classifier_set(Split::Train, modality);
            let val_set = data.classifier_set(Split::Val, modality);
            let mut trained = match &job.search {
                Some(space) => {
                    let (best, trained, rows) = hyperparameter_search::<f32>(
                        space,
                        &job.backbone,
                        modality,
                        &train_set,
                        &val_set,
                        &job.fit,
                    )?;
                    println!(
                        "search evaluated {} configs; best lr {:.0e}, wd {:.0e}",
                        rows.len(),
                        best.learning_rate,
                        best.weight_decay
                    );
                    trained
                }
                None => fit::<f32>(&job.backbone, modality, &train_set, &val_set, &job.fit)?.0,
            };
            trained.save(&out)?;
            println!(
                "trained {modality} classifier: best epoch {}, val accuracy {:.4}; model at {}",
                trained.meta.best_epoch,
                trained.meta.best_val_accuracy,
                out.display()
            );
            Ok(())
        }
        Command::Classify { cmd: ClassifyCmd::Eval { model, manifest, split, out } } => {
            let trained = TrainedClassifier::<f32>::load(&model)?;
            let data = LoadedDataset::load(&manifest)?;
            let eval_set = data.classifier_set(split.into(), trained.meta.modality);
            let (rows, _) = predict_proba(&trained, &eval_set)?;
            let scores = ScoreMatrix::new(rows, eval_set.labels())?;
            let report = classification_metrics(&scores);
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            match out {
                Some(path) => {
                    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
                    println!("metrics written to {}", path.display());
                }
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::Experiment { cmd: ExperimentCmd::Run { config } } => {
            let mut cfg = ExperimentConfig::read(&config)?;
            if let Some(seed) = cli.seed {
                cfg.base_seed = seed;
            }
            let outcomes = run_experiment::<f32>(&cfg)?;
            let mut failed = 0usize;
            for outcome in &outcomes {
                match outcome {
                    RunOutcome::Ok(r) => println!(
                        "run seed {} done: accuracy {:.4} ({} train records)",
                        r.seed,
                        r.metrics.accuracy.unwrap_or(f64::NAN),
                        r.summary.train_total
                    ),
                    RunOutcome::Failed { seed, error, .. } => {
                        failed += 1;
                        eprintln!("run seed {seed} failed: {error}");
                    }
                }
            }
            let records = collect_run_records(cfg.out_dir.join("runs"))?;
            if !records.is_empty() {
                let table = render_table(&records)?;
                let csv_path = cfg.out_dir.join("report.csv");
                std::fs::write(&csv_path, to_csv(&table)).map_err(|e| Error::io(&csv_path, e))?;
                let txt_path = cfg.out_dir.join("report.txt");
                std::fs::write(&txt_path, to_text(&table)).map_err(|e| Error::io(&txt_path, e))?;
            }
            if failed > 0 {
                return Err(Error::Runtime(format!("{failed} run(s) failed")));
            }
            Ok(())
        }
        Command::Report(args) => {
            let records = collect_run_records(&args.input)?;
            let table = render_table(&records)?;
            let out_dir = args.out.unwrap_or_else(|| args.input.clone());
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let csv = to_csv(&table);
            let text = to_text(&table);
            let csv_path = out_dir.join("report.csv");
            std::fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
            let txt_path = out_dir.join("report.txt");
            std::fs::write(&txt_path, &text).map_err(|e| Error::io(&txt_path, e))?;
            match args.format {
                CliFormat::Csv => print!("{csv}"),
                CliFormat::Text => print!("{text}"),
            }
            Ok(())
        }
    }
}

fn run_impute(args: ImputeArgs, seed: u64) -> Result<()> {
    if matches!(args.strategy, CliStrategy::Ddpm) && args.ckpt.is_none() {
        return Err(Error::InvalidConfig("--strategy ddpm requires --ckpt".into()));
    }
    let plan = AugmentationPlan::parse(&args.plan)?;
    let data = LoadedDataset::load(&args.manifest)?;
    let manifest_dir =
        args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let paired_train = data.paired_train();
    let pool = data.t1_only_train_pool();

    let ckpt = match (&args.strategy, &args.ckpt) {
        (CliStrategy::Ddpm, Some(path)) => Some(DdpmCheckpoint::<f32>::load(path)?),
        _ => None,
    };
    let strategy = match args.strategy {
        CliStrategy::Ddpm => ImputationStrategy::Ddpm(ckpt.as_ref().expect("checked")),
        CliStrategy::Blank => ImputationStrategy::Blank,
        CliStrategy::Avgdx => ImputationStrategy::AvgDx,
    };
    let augmented = build_augmented_training_set(&paired_train, &pool, &plan, &strategy, seed)?;

    let vol_dir = args.out.join("vols");
    std::fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;

    // Assemble a complete dataset manifest: augmented training records with
    // freshly written FA volumes, untouched leftovers and eval splits. Paths
    // are absolutized so the new manifest resolves from anywhere.
    let mut records = Vec::new();
    let augmented_ids: std::collections::HashSet<&str> =
        augmented.records.iter().map(|r| r.record.scan_id.as_str()).collect();
    for scan in &augmented.records {
        let mut record = scan.record.clone();
        record.t1_path = record.t1_path.as_ref().map(|p| absolutize(&manifest_dir, p));
        if record.provenance != crate::manifest::Provenance::Real {
            let fa = scan.fa.as_ref().expect("imputed records carry FA");
            let rel = format!("vols/{}_dwi.vol", record.scan_id);
            write_volume(fa, args.out.join(&rel))?;
            record.dwi_path = Some(args.out.join(rel));
            record.has_dwi = true;
        } else {
            record.dwi_path = record.dwi_path.as_ref().map(|p| absolutize(&manifest_dir, p));
        }
        records.push(record);
    }
    for scan in &data.scans {
        if scan.record.split == Split::Train && augmented_ids.contains(scan.record.scan_id.as_str())
        {
            continue;
        }
        let mut record = scan.record.clone();
        record.t1_path = record.t1_path.as_ref().map(|p| absolutize(&manifest_dir, p));
        record.dwi_path = record.dwi_path.as_ref().map(|p| absolutize(&manifest_dir, p));
        records.push(record);
    }
    let manifest = DatasetManifest::new(records);
    let violations = crate::manifest::validate_manifest(&manifest);
    if !violations.is_empty() {
        return Err(Error::InvalidManifest(violations.len()));
    }
    manifest.write(args.out.join("manifest.json"))?;
    println!(
        "imputed {} scans ({} strategy); augmented manifest at {}",
        plan.total(),
        augmented.strategy,
        args.out.join("manifest.json").display()
    );
    Ok(())
}

/// Entry point used by the binary: returns the process exit code.
/// 0 = success, 1 = validation error (including usage), 2 = runtime failure.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match run_command(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
