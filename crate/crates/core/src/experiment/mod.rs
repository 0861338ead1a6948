//! Repeated-split experiment runner.
//!
//! A run loads (or synthesizes) a dataset, derives the group atlas, and for
//! every calibration/test split fits each configured method on the
//! calibration side and evaluates it on the test side. Results are written as
//! a report bundle:
//!
//! ```text
//! {output_dir}/{run_id}/
//!   manifest.json
//!   splits/{i}/calibration/{method}.report.json, {method}.scorer.json
//!   splits/{i}/conformal/{method}_a{alpha}.report.json, ....rule.json
//!   aggregate/calibration.csv, conformal.csv, delta_*.csv, summary.json
//!   plots/*.csv
//! ```
//!
//! Everything except the manifest's wall time is a pure function of the
//! configuration and the data.

mod config;
mod plots;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::calibration::{CalibrationSettings, CalibratorRegistry, ClaimSet, LevelSetGrid};
use crate::conformal::{ConformalRegistry, ConformalSettings, CqrOptions};
use crate::dataset::{
    derive_groups, generate_synthetic, load_dataset, make_splits, EntityRecord, GroupAtlas, SplitPlan, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{calibration_report, coverage_report, delta_table, mean_and_stderr, CalibrationReport, ConformalReport};

pub use config::{validate_config, ExperimentConfig, ALL_METHODS};
pub use plots::{emit_plots, PLOT_PANELS};

/// Name of the raw-score baseline in calibration outputs.
pub const UNCALIBRATED: &str = "uncalibrated";

/// Method pairs compared group by group in the delta tables.
const CALIBRATION_PAIRS: [(&str, &str); 2] = [("HB", "IGHB"), ("PS", "GCULR")];
const CONFORMAL_PAIRS: [(&str, &str); 2] = [("SC", "MVSC"), ("CQR", "GCCQR")];
const DELTA_K: usize = 5;

#[derive(Debug, Clone, Serialize)]
pub struct SplitFailure {
    pub split: usize,
    pub error: String,
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub bundle_dir: PathBuf,
    pub failures: Vec<SplitFailure>,
}

/// Per-split results.
#[derive(Debug, Clone)]
struct SplitResult {
    calibration: BTreeMap<String, CalibrationReport>,
    /// Keyed by (method, alpha index).
    conformal: BTreeMap<(String, usize), ConformalReport>,
}

struct Dataset {
    entities: Vec<EntityRecord>,
    warnings: Vec<String>,
    digest: String,
}

fn load(config: &ExperimentConfig) -> Result<Dataset> {
    match (&config.data, &config.synthetic) {
        (Some(path), None) => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            Ok(Dataset {
                entities: load_dataset(path)?,
                warnings: Vec::new(),
                digest: hex::encode(Sha256::digest(&bytes)),
            })
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let spec = SyntheticSpec::from_toml(&text)?;
            let data = generate_synthetic(&spec, config.seed)?;
            Ok(Dataset {
                entities: data.entities,
                warnings: data.warnings,
                digest: hex::encode(Sha256::digest(text.as_bytes())),
            })
        }
        _ => Err(Error::Config("exactly one of `data` and `synthetic` must be set".into())),
    }
}

/// Stable identifier of a configuration and its input: the first 12 hex
/// digits of a SHA-256 over both. The output directory does not contribute.
pub fn run_id(config: &ExperimentConfig, data_digest: &str) -> Result<String> {
    let mut echo = config.clone();
    echo.output_dir = PathBuf::new();
    let text = serde_json::to_string(&echo)?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.update(data_digest.as_bytes());
    Ok(hex::encode(hasher.finalize())[..12].to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Deterministic per-split, per-alpha seed for the quantile fits.
fn derived_seed(seed: u64, split: usize, alpha_index: usize) -> u64 {
    seed ^ (split as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (alpha_index as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Shortest decimal form of an alpha for file names and CSV cells.
pub(crate) fn fmt_alpha(alpha: f64) -> String {
    format!("{}", (alpha * 1e9).round() / 1e9)
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    entities: &'a [EntityRecord],
    atlas: &'a GroupAtlas,
    calibrators: &'a CalibratorRegistry,
    conformal: &'a ConformalRegistry,
    split_root: PathBuf,
}

impl Context<'_> {
    fn run_split(&self, plan: &SplitPlan) -> Result<SplitResult> {
        let config = self.config;
        let dir = self.split_root.join(plan.index.to_string());
        let (cal, test) = plan.partition(self.entities);
        let grid = LevelSetGrid::new(config.grid_m)?;
        let cal_claims = ClaimSet::new(&cal, &self.atlas.groups);
        let retained: Vec<_> = self
            .atlas
            .retained(&test)
            .into_iter()
            .map(|i| self.atlas.groups[i].clone())
            .collect();
        let test_claims = ClaimSet::new(&test, &retained);

        let mut calibration = BTreeMap::new();
        let raw = calibration_report(test_claims.scores(), &test_claims, &grid)?;
        write_json(&dir.join("calibration").join(format!("{UNCALIBRATED}.report.json")), &raw)?;
        calibration.insert(UNCALIBRATED.to_string(), raw);

        let settings = CalibrationSettings {
            grid,
            max_iter: config.max_iter,
            ..CalibrationSettings::default()
        };
        for name in config.methods.iter().filter(|m| self.calibrators.contains(m)) {
            let scorer = self.calibrators.get(name)?.fit(&cal_claims, &settings)?;
            let scores = scorer.apply(&test);
            let report = calibration_report(&scores, &test_claims, &grid)?;
            write_text(&dir.join("calibration").join(format!("{name}.scorer.json")), &scorer.to_json()?)?;
            write_json(&dir.join("calibration").join(format!("{name}.report.json")), &report)?;
            calibration.insert(name.clone(), report);
        }

        let mut conformal = BTreeMap::new();
        for (ai, &alpha) in config.alphas.iter().enumerate() {
            let settings = ConformalSettings {
                max_iter: config.max_iter,
                min_group_support: 10,
                cqr: CqrOptions {
                    k: config.k,
                    cv_grid: config.cv_grid.clone(),
                    cv_folds: config.cv_folds,
                    seed: derived_seed(config.seed, plan.index, ai),
                    ..CqrOptions::default()
                },
            };
            for name in config.methods.iter().filter(|m| self.conformal.contains(m)) {
                let rule = self.conformal.get(name)?.fit(&cal, self.atlas, alpha, &settings)?;
                let report = coverage_report(&rule, &test, self.atlas, alpha)?;
                let stem = format!("{name}_a{}", fmt_alpha(alpha));
                write_text(&dir.join("conformal").join(format!("{stem}.rule.json")), &rule.to_json()?)?;
                write_json(&dir.join("conformal").join(format!("{stem}.report.json")), &report)?;
                conformal.insert((name.clone(), ai), report);
            }
        }
        Ok(SplitResult { calibration, conformal })
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    version: &'static str,
    config: &'a ExperimentConfig,
    data_digest: &'a str,
    n_entities: usize,
    n_claims: usize,
    n_groups: usize,
    data_warnings: &'a [String],
    n_splits_completed: usize,
    failures: &'a [SplitFailure],
    wall_time_secs: f64,
}

/// Runs the configured experiment and writes its report bundle. Split
/// failures are recorded in the summary and manifest rather than returned as
/// errors; errors are reserved for problems that prevent any split from
/// running.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let started = Instant::now();
    config.validate()?;
    let data = load(config)?;
    let run_id = run_id(config, &data.digest)?;
    let bundle = config.output_dir.join(&run_id);
    if bundle.exists() {
        fs::remove_dir_all(&bundle).map_err(|e| Error::io(&bundle, e))?;
    }
    fs::create_dir_all(&bundle).map_err(|e| Error::io(&bundle, e))?;

    let atlas = derive_groups(&data.entities, config.max_arity, config.group_floor)?;
    let plans = make_splits(&data.entities, config.n_splits, config.split_fraction, config.seed)?;
    let calibrators = CalibratorRegistry::builtin();
    let conformal = ConformalRegistry::builtin();
    let ctx = Context {
        config,
        entities: &data.entities,
        atlas: &atlas,
        calibrators: &calibrators,
        conformal: &conformal,
        split_root: bundle.join("splits"),
    };
    log::info!(
        "run {run_id}: {} entities, {} groups, {} splits",
        data.entities.len(),
        atlas.len(),
        plans.len()
    );

    let outcomes: Vec<Result<SplitResult>> = plans.par_iter().map(|plan| ctx.run_split(plan)).collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (plan, outcome) in plans.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => {
                log::error!("split {} failed: {e}", plan.index);
                failures.push(SplitFailure {
                    split: plan.index,
                    error: e.to_string(),
                });
            }
        }
    }

    if !results.is_empty() {
        write_aggregates(&bundle.join("aggregate"), config, &results)?;
        let conformal_methods = config.methods.iter().filter(|m| conformal.contains(m)).count();
        if conformal_methods > 0 && config.alphas.len() >= 2 {
            emit_plots(&bundle)?;
        }
    }

    let manifest = Manifest {
        run_id: &run_id,
        version: env!("CARGO_PKG_VERSION"),
        config,
        data_digest: &data.digest,
        n_entities: data.entities.len(),
        n_claims: data.entities.iter().map(|e| e.claims.len()).sum(),
        n_groups: atlas.len(),
        data_warnings: &data.warnings,
        n_splits_completed: results.len(),
        failures: &failures,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    write_json(&bundle.join("manifest.json"), &manifest)?;
    Ok(RunSummary {
        run_id,
        bundle_dir: bundle,
        failures,
    })
}

/// Values of one metric across splits, keyed by group.
#[derive(Default)]
struct Series(BTreeMap<String, Vec<f64>>);

impl Series {
    fn push(&mut self, group: &str, value: f64) {
        self.0.entry(group.to_string()).or_default().push(value);
    }

    fn means(&self) -> BTreeMap<String, f64> {
        self.0.iter().map(|(g, v)| (g.clone(), mean_and_stderr(v).0)).collect()
    }
}

fn calibration_series(results: &[SplitResult], method: &str) -> BTreeMap<&'static str, Series> {
    let mut out: BTreeMap<&'static str, Series> = BTreeMap::new();
    for r in results {
        let Some(rep) = r.calibration.get(method) else { continue };
        out.entry("asce").or_default().push("all", rep.asce);
        out.entry("gasce_max").or_default().push("all", rep.gasce_max);
        out.entry("gasce_mean").or_default().push("all", rep.gasce_mean);
        out.entry("brier_marginal").or_default().push("all", rep.brier_marginal);
        out.entry("brier_group_max").or_default().push("all", rep.brier_group_max);
        out.entry("brier_group_mean").or_default().push("all", rep.brier_group_mean);
        for (g, v) in &rep.gasce_per_group {
            out.entry("gasce").or_default().push(g, *v);
        }
        for (g, v) in &rep.brier_per_group {
            out.entry("brier").or_default().push(g, *v);
        }
    }
    out
}

fn conformal_series(results: &[SplitResult], method: &str, alpha_index: usize) -> BTreeMap<&'static str, Series> {
    let mut out: BTreeMap<&'static str, Series> = BTreeMap::new();
    let key = (method.to_string(), alpha_index);
    for r in results {
        let Some(rep) = r.conformal.get(&key) else { continue };
        out.entry("marginal_coverage").or_default().push("all", rep.marginal_coverage);
        out.entry("coverage_error_marginal").or_default().push("all", rep.coverage_error_marginal);
        out.entry("mean_group_coverage_error").or_default().push("all", rep.mean_group_coverage_error);
        out.entry("max_group_coverage_error").or_default().push("all", rep.max_group_coverage_error);
        out.entry("frac_entities_retained").or_default().push("all", rep.frac_entities_retained);
        out.entry("mean_claims_retained").or_default().push("all", rep.mean_claims_retained);
        for (g, v) in &rep.per_group_coverage {
            out.entry("group_coverage").or_default().push(g, *v);
        }
        for (g, v) in &rep.per_group_coverage_error {
            out.entry("group_coverage_error").or_default().push(g, *v);
        }
    }
    out
}

#[derive(Serialize)]
struct Summary {
    n_splits: usize,
    calibration: BTreeMap<String, BTreeMap<String, f64>>,
    conformal: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    delta_tables: BTreeMap<String, crate::metrics::DeltaTable>,
}

fn write_aggregates(dir: &Path, config: &ExperimentConfig, results: &[SplitResult]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let calibrators = CalibratorRegistry::builtin();
    let conformal = ConformalRegistry::builtin();
    let cal_methods: Vec<String> = std::iter::once(UNCALIBRATED.to_string())
        .chain(config.methods.iter().filter(|m| calibrators.contains(m)).cloned())
        .collect();
    let conf_methods: Vec<String> = config.methods.iter().filter(|m| conformal.contains(m)).cloned().collect();
    let mut summary = Summary {
        n_splits: results.len(),
        calibration: BTreeMap::new(),
        conformal: BTreeMap::new(),
        delta_tables: BTreeMap::new(),
    };

    let path = dir.join("calibration.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["method", "metric", "group", "value", "split_stderr", "n_splits"])?;
    let mut group_gasce: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for method in &cal_methods {
        let series = calibration_series(results, method);
        for (metric, s) in &series {
            for (group, values) in &s.0 {
                let (mean, se) = mean_and_stderr(values);
                w.write_record([
                    method.as_str(),
                    metric,
                    group.as_str(),
                    &mean.to_string(),
                    &se.to_string(),
                    &values.len().to_string(),
                ])?;
                if group == "all" {
                    summary
                        .calibration
                        .entry(method.clone())
                        .or_default()
                        .insert(metric.to_string(), mean);
                }
            }
        }
        if let Some(s) = series.get("gasce") {
            group_gasce.insert(method.clone(), s.means());
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("conformal.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["method", "alpha", "metric", "group", "value", "split_stderr", "n_splits"])?;
    let mut group_errors: BTreeMap<(String, usize), BTreeMap<String, f64>> = BTreeMap::new();
    for method in &conf_methods {
        for (ai, &alpha) in config.alphas.iter().enumerate() {
            let series = conformal_series(results, method, ai);
            for (metric, s) in &series {
                for (group, values) in &s.0 {
                    let (mean, se) = mean_and_stderr(values);
                    w.write_record([
                        method.as_str(),
                        &fmt_alpha(alpha),
                        metric,
                        group.as_str(),
                        &mean.to_string(),
                        &se.to_string(),
                        &values.len().to_string(),
                    ])?;
                    if group == "all" {
                        summary
                            .conformal
                            .entry(method.clone())
                            .or_default()
                            .entry(fmt_alpha(alpha))
                            .or_default()
                            .insert(metric.to_string(), mean);
                    }
                }
            }
            if let Some(s) = series.get("group_coverage_error") {
                group_errors.insert((method.clone(), ai), s.means());
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    for (a, b) in CALIBRATION_PAIRS {
        if let (Some(va), Some(vb)) = (group_gasce.get(a), group_gasce.get(b)) {
            let name = format!("delta_gasce_{a}_{b}");
            let table = delta_table(va, vb, DELTA_K)?;
            write_delta_csv(&dir.join(format!("{name}.csv")), &table)?;
            summary.delta_tables.insert(name, table);
        }
    }
    for (a, b) in CONFORMAL_PAIRS {
        for (ai, &alpha) in config.alphas.iter().enumerate() {
            let va = group_errors.get(&(a.to_string(), ai));
            let vb = group_errors.get(&(b.to_string(), ai));
            if let (Some(va), Some(vb)) = (va, vb) {
                let name = format!("delta_coverage_error_{a}_{b}_a{}", fmt_alpha(alpha));
                let table = delta_table(va, vb, DELTA_K)?;
                write_delta_csv(&dir.join(format!("{name}.csv")), &table)?;
                summary.delta_tables.insert(name, table);
            }
        }
    }
    write_json(&dir.join("summary.json"), &summary)
}

fn write_delta_csv(path: &Path, table: &crate::metrics::DeltaTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "group", "a", "b", "delta"])?;
    for (i, row) in table.rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            row.group.clone(),
            row.a.to_string(),
            row.b.to_string(),
            row.delta.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
