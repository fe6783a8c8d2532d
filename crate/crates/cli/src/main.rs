//! `evifuse`: masks, imputation, training, evaluation and sweeps for
//! incomplete multi-view data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use evifuse::dataset::{generate_missing_mask, load_dataset, read_mask, write_mask};
use evifuse::experiment::{self, export_imputed, read_results, report, sweep, write_tidy, ExperimentConfig};
use evifuse::imputer::{Imputer, StreamKey};
use evifuse::predictor::{evaluate, stability_experiment, test_completions, PredictConfig};
use evifuse::trainer::{train, TrainConfig, TrainMode, TrainedModel};
use evifuse::{Error, MissingnessSpec, MultiViewDataset, ZScoreStats};

#[derive(Parser)]
#[command(name = "evifuse", version, about = "Incomplete multi-view classification with sampled imputations and evidential fusion")]
struct Cli {
    /// Top-level seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config: training settings for `train`, a sweep for `sweep`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Directory with view_*.csv, labels.csv and optionally mask.csv.
    #[arg(long)]
    data: PathBuf,
    /// Availability mask (N×V of 0/1), replacing any mask.csv in the directory.
    #[arg(long)]
    mask: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> Result<MultiViewDataset> {
        let data = load_dataset(&self.data)?;
        match &self.mask {
            Some(path) => Ok(data.with_mask(read_mask(path)?)?),
            None => Ok(data),
        }
    }
}

#[derive(Args)]
struct SamplingArgs {
    /// Completions per sample (defaults to the training value).
    #[arg(long)]
    ns: Option<usize>,
    /// Neighbours per view (defaults to the training value).
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random availability mask with missing rate η.
    Mask {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Impute a dataset from its own label-conditioned neighbours and write
    /// one concatenated CSV per completion.
    Impute {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 30)]
        ns: usize,
        #[arg(long, default_value_t = 1e-3)]
        jitter: f64,
        #[arg(long)]
        diag_cov: bool,
        /// Search neighbours without the label filter.
        #[arg(long)]
        label_free: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        mode: Option<TrainMode>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Write the per-epoch loss history here.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a model on a test set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Include per-sample predictions in the output.
        #[arg(long)]
        predictions: bool,
    },
    /// Repeat test-time sampling with a fixed mask and report label consistency.
    Stability {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (η, seed, mode) cells; completed cells in OUT are skipped.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        etas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<TrainMode>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a results table as mean ± std per mode and η.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Long-format CSV for plotting.
        #[arg(long)]
        tidy: Option<PathBuf>,
    },
    /// Write a model's test-time completions, one concatenated CSV each.
    ExportImputed {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    Ok(value)
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn predict_config(cli: &Cli, model: &TrainedModel, s: &SamplingArgs) -> PredictConfig {
    let base = PredictConfig::from_train(&model.config);
    PredictConfig {
        n_samplings: s.ns.unwrap_or(base.n_samplings),
        k: s.k.unwrap_or(base.k),
        seed: cli.seed.unwrap_or(base.seed),
        ..base
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match &cli.command {
        Command::Mask { data, eta, out } => {
            let d = load_dataset(data)?;
            let spec = MissingnessSpec::new(*eta, cli.seed.unwrap_or(0))?;
            let mask = generate_missing_mask(d.n_samples(), d.n_views(), &spec)?;
            write_mask(out, &mask)?;
            let missing = mask.iter().filter(|&&m| !m).count();
            eprintln!("wrote {} ({missing} of {} slots missing)", out.display(), mask.len());
        }
        Command::Impute { data, k, ns, jitter, diag_cov, label_free, out } => {
            let raw = data.load()?;
            let stats = ZScoreStats::fit(&raw);
            let z = stats.transform(&raw).zero_unobserved();
            let cfg = TrainConfig { k: *k, jitter: *jitter, diag_cov: *diag_cov, ..Default::default() };
            let plan = Imputer::new(&z, cfg.imputer())?.plan(&z, !label_free, StreamKey::Index)?;
            let completions = plan.sample(*ns, cli.seed.unwrap_or(0))?;
            let paths = export_imputed(&raw, &completions, &stats, out)?;
            eprintln!("imputed {} slots ({} fallbacks); wrote {} files to {}", plan.slot_count(), plan.fallback_count(), paths.len(), out.display());
        }
        Command::Train { data, mode, epochs, out, metrics } => {
            let mut cfg: TrainConfig = match &cli.config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = *m;
            }
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let model = train(&data.load()?, &cfg)?;
            model.save(out)?;
            if let Some(path) = metrics {
                write_json(Some(path), &model.history)?;
            }
            if let Some(last) = model.history.last() {
                eprintln!("trained {} epochs; final loss {:.4}", model.epochs_completed, last.total);
            }
        }
        Command::Eval { model, data, sampling, out, predictions } => {
            let model = TrainedModel::load(model)?;
            let cfg = predict_config(cli, &model, sampling);
            let mut metrics = evaluate(&model, &data.load()?, &cfg)?;
            eprintln!("accuracy {:.4} on {} samples", metrics.accuracy, metrics.n_samples);
            if !predictions {
                metrics.predictions.clear();
            }
            write_json(out.as_deref(), &metrics)?;
        }
        Command::Stability { model, data, sampling, repeats, out } => {
            let model = TrainedModel::load(model)?;
            let cfg = predict_config(cli, &model, sampling);
            let report = stability_experiment(&model, &data.load()?, *repeats, &cfg)?;
            eprintln!("consistent fraction {:.4} over {repeats} repeats", report.consistent_fraction);
            write_json(out.as_deref(), &report)?;
        }
        Command::Sweep { data, etas, seeds, modes, out } => {
            let mut cfg: ExperimentConfig = match &cli.config {
                Some(p) => read_json(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(e) = etas {
                cfg.etas = e.clone();
            }
            if let Some(s) = seeds {
                cfg.seeds = s.clone();
            }
            if let Some(m) = modes {
                cfg.modes = m.clone();
            }
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            let d = load_dataset(data)?;
            let outcome = sweep(&d, &cfg, out, |rec| match (&rec.result, &rec.error) {
                (Some(r), _) => eprintln!("{}: accuracy {:.4} ({:.1}s)", rec.cell.id(), r.accuracy, r.wall_time),
                (None, Some(e)) => eprintln!("{}: failed: {e}", rec.cell.id()),
                _ => {}
            })?;
            eprintln!(
                "{} cells run, {} held by other workers, {} failed; results in {}",
                outcome.executed,
                outcome.skipped_locked,
                outcome.summary.failures.len(),
                out.join(experiment::RESULTS_FILE).display()
            );
            if !outcome.results.is_empty() {
                print!("{}", report(&outcome.results)?.0);
            }
        }
        Command::Report { results, tidy } => {
            let rows = read_results(results)?;
            let (text, long) = report(&rows)?;
            print!("{text}");
            if let Some(path) = tidy {
                write_tidy(path, &long)?;
            }
        }
        Command::ExportImputed { model, data, sampling, out } => {
            let model = TrainedModel::load(model)?;
            let cfg = predict_config(cli, &model, sampling);
            let raw = data.load()?;
            let completions = test_completions(&model, &raw, &cfg)?;
            let paths = export_imputed(&raw, &completions, &model.normalization, out)?;
            eprintln!("wrote {} files to {}", paths.len(), out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
