//! Missing-rate sweeps: split, mask, train and evaluate one cell per
//! (η, seed, mode), with an on-disk ledger so interrupted sweeps resume.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_missing_mask, split, write_atomic, write_matrix, MissingnessSpec, MultiViewDataset, SplitSpec, ZScoreStats};
use crate::error::{Error, Result};
use crate::imputer::{CompletionSet, Provenance};
use crate::predictor::{evaluate, EvalMetrics, PredictConfig};
use crate::rng::{self, tag};
use crate::trainer::{train, TrainConfig, TrainMode, TrainedModel, CONFIG_SCHEMA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    /// Training settings; `mode` and `seed` are set per cell.
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub stratified: bool,
    /// Test-time completions per sample; defaults to the training value.
    pub test_samplings: Option<usize>,
    pub etas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub modes: Vec<TrainMode>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            train: TrainConfig::default(),
            train_fraction: 0.8,
            stratified: true,
            test_samplings: None,
            etas: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            seeds: vec![0, 1, 2, 3, 4],
            modes: vec![TrainMode::Uimc],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::InvalidConfig(format!(
                "config schema {} is not supported (expected {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        self.train.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("train_fraction {} is outside (0, 1)", self.train_fraction)));
        }
        if self.test_samplings == Some(0) {
            return Err(Error::InvalidConfig("test_samplings must be at least 1".into()));
        }
        for &eta in &self.etas {
            MissingnessSpec::new(eta, 0)?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &mode in &self.modes {
            for &eta in &self.etas {
                for &seed in &self.seeds {
                    cells.push(Cell { eta, seed, mode });
                }
            }
        }
        cells
    }
}

/// Coordinates of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub eta: f64,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Cell {
    /// File-name-safe identifier.
    pub fn id(&self) -> String {
        format!("{}_eta{:.4}_seed{}", self.mode, self.eta, self.seed)
    }
}

/// Train/test partitions and settings of a cell. The split depends only on
/// the seed and the masks only on (seed, η), so every mode sees the same data.
#[derive(Debug, Clone)]
pub struct PreparedCell {
    pub train: MultiViewDataset,
    pub test: MultiViewDataset,
    pub train_config: TrainConfig,
    pub predict_config: PredictConfig,
}

pub fn prepare_cell(data: &MultiViewDataset, cfg: &ExperimentConfig, cell: &Cell) -> Result<PreparedCell> {
    if (0..data.n_samples()).any(|n| !data.is_complete(n)) {
        return Err(Error::InvalidDataset("sweeps draw their own masks and need fully observed data".into()));
    }
    let base = rng::stream_seed(cfg.train.seed, &[tag::CELL, cell.seed]);
    let eta_key = cell.eta.to_bits();
    let spec = SplitSpec {
        train_fraction: cfg.train_fraction,
        seed: rng::stream_seed(base, &[tag::SPLIT]),
        stratified: cfg.stratified,
    };
    let (train_set, test_set) = split(data, &spec)?;
    let views = data.n_views();
    let train_mask = generate_missing_mask(
        train_set.n_samples(),
        views,
        &MissingnessSpec::new(cell.eta, rng::stream_seed(base, &[tag::TRAIN_MASK, eta_key]))?,
    )?;
    let test_mask = generate_missing_mask(
        test_set.n_samples(),
        views,
        &MissingnessSpec::new(cell.eta, rng::stream_seed(base, &[tag::TEST_MASK, eta_key]))?,
    )?;
    let train_config = TrainConfig {
        mode: cell.mode,
        seed: rng::stream_seed(base, &[tag::TRAIN, eta_key]),
        ..cfg.train.clone()
    };
    let predict_config = PredictConfig {
        n_samplings: cfg.test_samplings.unwrap_or(train_config.n_samplings),
        seed: rng::stream_seed(base, &[tag::EVAL, eta_key]),
        ..PredictConfig::from_train(&train_config)
    };
    Ok(PreparedCell {
        train: train_set.with_mask(train_mask)?,
        test: test_set.with_mask(test_mask)?,
        train_config,
        predict_config,
    })
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub eta: f64,
    pub seed: u64,
    pub mode: TrainMode,
    pub accuracy: f64,
    pub mean_uncertainty: f64,
    pub wall_time: f64,
}

/// Ledger entry: the result, or the error that stopped the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: Cell,
    pub result: Option<CellResult>,
    pub mean_uncertainty_correct: Option<f64>,
    pub mean_uncertainty_incorrect: Option<f64>,
    pub error: Option<String>,
}

/// Everything a cell produces.
pub struct CellRun {
    pub prepared: PreparedCell,
    pub model: TrainedModel,
    pub metrics: EvalMetrics,
    pub result: CellResult,
}

pub fn run_cell(data: &MultiViewDataset, cfg: &ExperimentConfig, cell: &Cell) -> Result<CellRun> {
    let start = Instant::now();
    let prepared = prepare_cell(data, cfg, cell)?;
    let model = train(&prepared.train, &prepared.train_config)?;
    let metrics = evaluate(&model, &prepared.test, &prepared.predict_config)?;
    let result = CellResult {
        eta: cell.eta,
        seed: cell.seed,
        mode: cell.mode,
        accuracy: metrics.accuracy,
        mean_uncertainty: metrics.mean_uncertainty,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(CellRun { prepared, model, metrics, result })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub mode: TrainMode,
    pub eta: f64,
    pub n: usize,
    pub accuracy_mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub accuracy_std: f64,
    pub uncertainty_mean: f64,
    pub uncertainty_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub entries: Vec<SummaryEntry>,
    pub failures: Vec<CellRecord>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean ± std per (mode, η), ordered by mode then η.
pub fn summarize(results: &[CellResult]) -> Vec<SummaryEntry> {
    let mut groups: BTreeMap<(TrainMode, u64), Vec<&CellResult>> = BTreeMap::new();
    for r in results {
        // η ≥ 0, so its bit pattern orders like the value
        groups.entry((r.mode, r.eta.to_bits())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((mode, eta), rows)| {
            let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
            let unc: Vec<f64> = rows.iter().map(|r| r.mean_uncertainty).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (uncertainty_mean, uncertainty_std) = mean_std(&unc);
            SummaryEntry {
                mode,
                eta: f64::from_bits(eta),
                n: rows.len(),
                accuracy_mean,
                accuracy_std,
                uncertainty_mean,
                uncertainty_std,
            }
        })
        .collect()
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
const LEDGER_DIR: &str = "cells";

pub fn write_results(path: &Path, results: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(r).map_err(|e| Error::Results(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Results(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_results(path: &Path) -> Result<Vec<CellResult>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Results(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<CellResult>, _>>()
        .map_err(|e| Error::Results(format!("{}: {e}", path.display())))
}

/// Outcome of [`sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub results: Vec<CellResult>,
    pub summary: SweepSummary,
    /// Cells run by this invocation (the rest came from the ledger or were
    /// held by another worker).
    pub executed: usize,
    pub skipped_locked: usize,
}

fn read_record(path: &Path) -> Option<CellRecord> {
    let bytes = fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

/// Run every cell of `cfg` not already completed in `out_dir`, then write
/// `results.csv` and `summary.json` for all completed cells. Cells that fail
/// are recorded and retried on the next run.
pub fn sweep(
    data: &MultiViewDataset,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    mut progress: impl FnMut(&CellRecord),
) -> Result<SweepOutcome> {
    cfg.validate()?;
    let ledger = out_dir.join(LEDGER_DIR);
    fs::create_dir_all(&ledger).map_err(|e| Error::io(&ledger, e))?;
    let mut executed = 0;
    let mut skipped_locked = 0;
    let mut records = Vec::new();
    for cell in cfg.cells() {
        let done = ledger.join(format!("{}.json", cell.id()));
        if let Some(rec) = read_record(&done).filter(|r| r.result.is_some()) {
            records.push(rec);
            continue;
        }
        let lock = ledger.join(format!("{}.lock", cell.id()));
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                skipped_locked += 1;
                continue;
            }
            Err(e) => return Err(Error::io(&lock, e)),
        }
        let record = match run_cell(data, cfg, &cell) {
            Ok(run) => CellRecord {
                cell,
                result: Some(run.result),
                mean_uncertainty_correct: run.metrics.mean_uncertainty_correct,
                mean_uncertainty_incorrect: run.metrics.mean_uncertainty_incorrect,
                error: None,
            },
            Err(e) => CellRecord {
                cell,
                result: None,
                mean_uncertainty_correct: None,
                mean_uncertainty_incorrect: None,
                error: Some(e.to_string()),
            },
        };
        let written = write_atomic(&done, &serde_json::to_vec_pretty(&record)?);
        let _ = fs::remove_file(&lock);
        written?;
        executed += 1;
        progress(&record);
        records.push(record);
    }
    let results: Vec<CellResult> = records.iter().filter_map(|r| r.result.clone()).collect();
    let summary = SweepSummary {
        entries: summarize(&results),
        failures: records.into_iter().filter(|r| r.error.is_some()).collect(),
    };
    write_results(&out_dir.join(RESULTS_FILE), &results)?;
    write_atomic(&out_dir.join(SUMMARY_FILE), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(SweepOutcome { results, summary, executed, skipped_locked })
}

/// Long-format row of the tidy report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub mode: TrainMode,
    pub eta: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Text table and tidy rows summarizing a results table.
pub fn report(results: &[CellResult]) -> Result<(String, Vec<TidyRow>)> {
    if results.is_empty() {
        return Err(Error::Results("no results to report".into()));
    }
    let entries = summarize(results);
    let mut text = format!("{:<18} {:>6} {:>17} {:>17} {:>3}\n", "mode", "eta", "accuracy", "uncertainty", "n");
    let mut tidy = Vec::with_capacity(2 * entries.len());
    for e in &entries {
        text.push_str(&format!(
            "{:<18} {:>6.2} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4} {:>3}\n",
            e.mode.as_str(),
            e.eta,
            e.accuracy_mean,
            e.accuracy_std,
            e.uncertainty_mean,
            e.uncertainty_std,
            e.n
        ));
        for (metric, mean, std) in [
            ("accuracy", e.accuracy_mean, e.accuracy_std),
            ("mean_uncertainty", e.uncertainty_mean, e.uncertainty_std),
        ] {
            tidy.push(TidyRow { mode: e.mode, eta: e.eta, metric: metric.into(), mean, std, n: e.n });
        }
    }
    Ok((text, tidy))
}

pub fn write_tidy(path: &Path, rows: &[TidyRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Results(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Results(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Write one CSV per completion: all views side by side, then the label.
///
/// `raw` supplies the observed values verbatim; imputed values, which
/// `completions` holds in standardized units, are mapped back with `stats`.
pub fn export_imputed(
    raw: &MultiViewDataset,
    completions: &CompletionSet,
    stats: &ZScoreStats,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if completions.base().n_samples() != raw.n_samples() || completions.base().view_dims() != raw.view_dims() {
        return Err(Error::InvalidDataset("completions do not match the dataset".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dims = raw.view_dims();
    let width: usize = dims.iter().sum();
    let mut paths = Vec::with_capacity(completions.n_samplings());
    for s in 0..completions.n_samplings() {
        let mut out = Array2::zeros((raw.n_samples(), width + 1));
        for n in 0..raw.n_samples() {
            let mut col = 0;
            for (v, &d) in dims.iter().enumerate() {
                match completions.provenance(n, v) {
                    Provenance::Observed => {
                        for (j, &x) in raw.row(n, v).iter().enumerate() {
                            out[[n, col + j]] = x;
                        }
                    }
                    Provenance::Imputed => {
                        for (j, &z) in completions.row(n, v, s).iter().enumerate() {
                            out[[n, col + j]] = stats.inverse_value(v, j, z);
                        }
                    }
                }
                col += d;
            }
            out[[n, width]] = raw.labels()[n] as f64;
        }
        let path = out_dir.join(format!("sampling_{s:03}.csv"));
        write_matrix(&path, &out)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imputer::sample_completions;

    fn data(n: usize) -> MultiViewDataset {
        let a = Array2::from_shape_fn((n, 3), |(i, j)| (i % 3) as f64 * 2.0 + ((i * 5 + j) % 7) as f64 * 0.3);
        let b = Array2::from_shape_fn((n, 4), |(i, j)| (i % 3) as f64 - ((i + 2 * j) % 5) as f64 * 0.2);
        MultiViewDataset::new(vec![a, b], (0..n).map(|i| i % 3).collect(), None).unwrap()
    }

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            train: TrainConfig { epochs: 3, batch_size: 16, k: 3, n_samplings: 2, hidden: vec![4], ..Default::default() },
            etas: vec![0.0, 0.3],
            seeds: vec![0, 1],
            ..Default::default()
        }
    }

    #[test]
    fn modes_share_split_and_masks() {
        let d = data(30);
        let cfg = config();
        let a = prepare_cell(&d, &cfg, &Cell { eta: 0.3, seed: 1, mode: TrainMode::Uimc }).unwrap();
        let b = prepare_cell(&d, &cfg, &Cell { eta: 0.3, seed: 1, mode: TrainMode::NaiveCe }).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.train_config.seed, b.train_config.seed);
        assert!((a.train.missing_rate() - 0.3).abs() < 0.05);
        assert_eq!(a.train.n_samples() + a.test.n_samples(), 30);
    }

    #[test]
    fn rejects_incomplete_input() {
        let d = data(30);
        let mut mask = Array2::from_elem((30, 2), true);
        mask[[0, 0]] = false;
        let d = d.with_mask(mask).unwrap();
        assert!(prepare_cell(&d, &config(), &Cell { eta: 0.0, seed: 0, mode: TrainMode::Uimc }).is_err());
    }

    #[test]
    fn summary_counts_and_std() {
        let r = |eta, seed, mode, accuracy| CellResult { eta, seed, mode, accuracy, mean_uncertainty: 0.1, wall_time: 1.0 };
        let rows = vec![
            r(0.0, 0, TrainMode::Uimc, 0.9),
            r(0.0, 1, TrainMode::Uimc, 0.7),
            r(0.5, 0, TrainMode::Uimc, 0.5),
            r(0.5, 0, TrainMode::NaiveCe, 0.4),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].mode, TrainMode::Uimc);
        assert!((s[0].accuracy_mean - 0.8).abs() < 1e-12);
        assert!((s[0].accuracy_std - (0.02f64).sqrt()).abs() < 1e-12);
        assert_eq!(s[1].accuracy_std, 0.0);
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(matches!(report(&[]), Err(Error::Results(_))));
    }

    #[test]
    fn export_keeps_observed_values() {
        let d = data(12);
        let mut mask = Array2::from_elem((12, 2), true);
        mask[[2, 0]] = false;
        mask[[5, 1]] = false;
        let d = d.with_mask(mask).unwrap();
        let stats = ZScoreStats::fit(&d);
        let z = stats.transform(&d).zero_unobserved();
        let c = sample_completions(&z, 2, 3, 1e-3, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = export_imputed(&d, &c, &stats, dir.path()).unwrap();
        assert_eq!(paths.len(), 3);
        for p in &paths {
            let m = crate::dataset::read_matrix(p).unwrap();
            assert_eq!(m.dim(), (12, 8));
            for n in 0..12 {
                assert_eq!(m[[n, 7]], d.labels()[n] as f64);
                if n != 2 {
                    for j in 0..3 {
                        assert_eq!(m[[n, j]], d.row(n, 0)[j]);
                    }
                }
                if n != 5 {
                    for j in 0..4 {
                        assert_eq!(m[[n, 3 + j]], d.row(n, 1)[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn sweep_resumes_from_ledger() {
        let d = data(30);
        let cfg = config();
        let dir = tempfile::tempdir().unwrap();
        let first = sweep(&d, &cfg, dir.path(), |_| {}).unwrap();
        assert_eq!(first.executed, 4);
        assert_eq!(first.results.len(), 4);
        assert_eq!(first.summary.entries.len(), 2);
        let second = sweep(&d, &cfg, dir.path(), |_| {}).unwrap();
        assert_eq!(second.executed, 0);
        assert_eq!(second.results, first.results);
        assert_eq!(read_results(&dir.path().join(RESULTS_FILE)).unwrap(), first.results);
    }
}
