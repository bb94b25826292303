//! Monte-Carlo comparison runs, metrics, the out-of-sample R² protocol and
//! result files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_lasso_target, fit_translasso, TRANSLASSO_VARIANT};
use crate::data::{DataSet, Standardizer};
use crate::error::{Error, Result};
use crate::estimator::{fit_ptl, fit_ptl_with_basis, fit_sources, PtlConfig, SourceEstimator};
use crate::lasso::LassoOptions;
use crate::seed::derive_seed;
use crate::simgen::{generate, sample_replication, SimConfig};

/// `p⁻¹‖β̂ − β‖²`.
pub fn mse(beta_hat: &DVector<f64>, beta_true: &DVector<f64>) -> Result<f64> {
    if beta_hat.len() != beta_true.len() || beta_hat.is_empty() {
        return Err(Error::invalid(format!(
            "mse: lengths {} and {} differ or are zero",
            beta_hat.len(),
            beta_true.len()
        )));
    }
    Ok((beta_hat - beta_true).norm_squared() / beta_hat.len() as f64)
}

/// `1 − Σ(ŷ − y)² / Σ(y − ȳ)²`; `None` when the responses are constant.
pub fn r_squared(predicted: &DVector<f64>, observed: &DVector<f64>) -> Result<Option<f64>> {
    if predicted.len() != observed.len() || observed.is_empty() {
        return Err(Error::invalid("r_squared: lengths differ or are zero"));
    }
    let mean = observed.mean();
    let total: f64 = observed.iter().map(|y| (y - mean).powi(2)).sum();
    if total == 0.0 {
        return Ok(None);
    }
    let residual: f64 = predicted
        .iter()
        .zip(observed.iter())
        .map(|(p, y)| (p - y).powi(2))
        .sum();
    Ok(Some(1.0 - residual / total))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Lasso,
    TransLasso,
    Ptl,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Lasso, EstimatorKind::TransLasso, EstimatorKind::Ptl];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Lasso => "lasso",
            EstimatorKind::TransLasso => "translasso",
            EstimatorKind::Ptl => "ptl",
        }
    }

    /// Parses a comma-separated list such as `lasso,translasso,ptl`.
    pub fn parse_list(s: &str) -> Result<Vec<EstimatorKind>> {
        let mut out: Vec<EstimatorKind> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let kind = part.parse()?;
            if !out.contains(&kind) {
                out.push(kind);
            }
        }
        if out.is_empty() {
            return Err(Error::config("no estimators requested"));
        }
        Ok(out)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lasso" => Ok(EstimatorKind::Lasso),
            "translasso" | "trans-lasso" => Ok(EstimatorKind::TransLasso),
            "ptl" => Ok(EstimatorKind::Ptl),
            other => Err(Error::config(format!("unknown estimator `{other}`"))),
        }
    }
}

/// A full Monte-Carlo study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sim: SimConfig,
    pub replications: usize,
    pub estimators: Vec<EstimatorKind>,
    pub folds: usize,
    pub lasso: LassoOptions,
    /// Estimator for every source inside PTL.
    pub source_estimator: SourceEstimator,
    /// Worker cap; `None` uses the global rayon pool.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(sim: SimConfig, replications: usize, estimators: Vec<EstimatorKind>) -> Self {
        ExperimentSpec {
            sim,
            replications,
            estimators,
            folds: 5,
            lasso: LassoOptions::default(),
            source_estimator: SourceEstimator::LassoCv,
            threads: None,
        }
    }
}

/// One `(replication, estimator)` outcome. `mse` is `None` when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub replication: usize,
    pub estimator: EstimatorKind,
    pub mse: Option<f64>,
    pub log_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Record {
    fn success(replication: usize, estimator: EstimatorKind, mse: f64) -> Self {
        Record {
            replication,
            estimator,
            mse: Some(mse),
            log_mse: Some(mse.ln()),
            error: None,
        }
    }

    fn failure(replication: usize, estimator: EstimatorKind, error: String) -> Self {
        Record {
            replication,
            estimator,
            mse: None,
            log_mse: None,
            error: Some(error),
        }
    }
}

/// Per-replication PTL diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtlRecord {
    pub replication: usize,
    /// `‖Ẑᵀê‖∞`.
    pub orthogonality: f64,
    /// `‖y‖₂` of the target response.
    pub response_norm: f64,
    pub condition: f64,
    pub lambda_delta: f64,
    pub w_hat: Vec<f64>,
}

/// Five-number summary for boxplots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    /// Linear interpolation between order statistics; `None` when empty.
    pub fn of(values: &[f64]) -> Option<Quantiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Some(Quantiles {
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub estimator: EstimatorKind,
    pub count: usize,
    pub failed: usize,
    pub mse: Option<Quantiles>,
    pub log_mse: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedLog {
    pub base: u64,
    pub problem: u64,
    pub replications: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentSpec,
    pub translasso_variant: String,
    pub seeds: SeedLog,
    pub records: Vec<Record>,
    pub ptl_diagnostics: Vec<PtlRecord>,
    pub summaries: Vec<Summary>,
    pub wall_time_secs: f64,
}

impl ExperimentResult {
    pub fn summary(&self, estimator: EstimatorKind) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }

    pub fn median_mse(&self, estimator: EstimatorKind) -> Option<f64> {
        self.summary(estimator).and_then(|s| s.mse).map(|q| q.median)
    }

    pub fn mse_values(&self, estimator: EstimatorKind) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.estimator == estimator)
            .filter_map(|r| r.mse)
            .collect()
    }
}

const PROBLEM_STREAM: u64 = u64::MAX;

/// Seed for replication `b`, usable to rerun that replication alone.
pub fn replication_seed(base: u64, b: usize) -> u64 {
    derive_seed(base, b as u64)
}

fn summarize(records: &[Record], estimators: &[EstimatorKind]) -> Vec<Summary> {
    let mut sorted = estimators.to_vec();
    sorted.sort();
    sorted
        .into_iter()
        .map(|estimator| {
            let mine: Vec<&Record> = records.iter().filter(|r| r.estimator == estimator).collect();
            let mse: Vec<f64> = mine.iter().filter_map(|r| r.mse).collect();
            let log_mse: Vec<f64> = mine.iter().filter_map(|r| r.log_mse).collect();
            Summary {
                estimator,
                count: mine.len(),
                failed: mine.len() - mse.len(),
                mse: Quantiles::of(&mse),
                log_mse: Quantiles::of(&log_mse),
            }
        })
        .collect()
}

fn run_replication(
    spec: &ExperimentSpec,
    problem: &crate::simgen::GeneratedProblem,
    b: usize,
    seed: u64,
) -> (Vec<Record>, Option<PtlRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sources, target) = match sample_replication(problem, &mut rng) {
        Ok(d) => d,
        Err(e) => {
            let msg = format!("sampling failed: {e}");
            return (
                spec.estimators
                    .iter()
                    .map(|&k| Record::failure(b, k, msg.clone()))
                    .collect(),
                None,
            );
        }
    };
    let beta = problem.beta();
    let mut records = Vec::with_capacity(spec.estimators.len());
    let mut diag = None;
    for &kind in &spec.estimators {
        let fit_seed = derive_seed(seed, kind as u64 + 1);
        let fitted: Result<DVector<f64>> = match kind {
            EstimatorKind::Lasso => {
                fit_lasso_target(&target, spec.folds, &spec.lasso, fit_seed).map(|f| f.beta)
            }
            EstimatorKind::TransLasso => {
                fit_translasso(&sources, &target, spec.folds, &spec.lasso, fit_seed).map(|f| f.beta)
            }
            EstimatorKind::Ptl => {
                let config = PtlConfig {
                    folds: spec.folds,
                    lasso: spec.lasso,
                    seed: fit_seed,
                    source_estimators: vec![Some(spec.source_estimator); sources.len()],
                };
                fit_ptl(&sources, &target, &config).map(|fit| {
                    diag = Some(PtlRecord {
                        replication: b,
                        orthogonality: fit.diagnostics.orthogonality,
                        response_norm: fit.diagnostics.response_norm,
                        condition: fit.diagnostics.condition,
                        lambda_delta: fit.lambda_delta,
                        w_hat: fit.w_hat.iter().copied().collect(),
                    });
                    fit.beta_hat
                })
            }
        };
        records.push(match fitted.and_then(|bh| mse(&bh, beta)) {
            Ok(m) => Record::success(b, kind, m),
            Err(e) => {
                log::warn!("replication {b}, {kind}: {e}");
                Record::failure(b, kind, e.to_string())
            }
        });
    }
    (records, diag)
}

/// Generates the problem once, then for each replication samples fresh
/// source and target data, fits every requested estimator and records its MSE.
///
/// Output is independent of the worker count. More than 10% failed records
/// is an error.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let start = Instant::now();
    spec.sim.validate()?;
    if spec.replications == 0 {
        return Err(Error::config("at least one replication is required"));
    }
    if spec.estimators.is_empty() {
        return Err(Error::config("no estimators requested"));
    }
    spec.lasso.validate()?;

    let base = spec.sim.seed;
    let problem_seed = derive_seed(base, PROBLEM_STREAM);
    let problem = generate(&spec.sim, &mut ChaCha8Rng::seed_from_u64(problem_seed))?;
    let seeds: Vec<u64> = (0..spec.replications).map(|b| replication_seed(base, b)).collect();

    let work = || -> Vec<(Vec<Record>, Option<PtlRecord>)> {
        seeds
            .par_iter()
            .enumerate()
            .map(|(b, &s)| run_replication(spec, &problem, b, s))
            .collect()
    };
    let outcomes = match spec.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut records = Vec::new();
    let mut ptl_diagnostics = Vec::new();
    for (recs, diag) in outcomes {
        records.extend(recs);
        ptl_diagnostics.extend(diag);
    }
    records.sort_by(|a, b| {
        (a.replication, a.estimator.name()).cmp(&(b.replication, b.estimator.name()))
    });
    ptl_diagnostics.sort_by_key(|d| d.replication);

    let failed = records.iter().filter(|r| r.mse.is_none()).count();
    if failed * 10 > records.len() {
        return Err(Error::TooManyFailures {
            failed,
            total: records.len(),
        });
    }

    Ok(ExperimentResult {
        config: spec.clone(),
        translasso_variant: TRANSLASSO_VARIANT.to_string(),
        seeds: SeedLog {
            base,
            problem: problem_seed,
            replications: seeds,
        },
        summaries: summarize(&records, &spec.estimators),
        records,
        ptl_diagnostics,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` means JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// CSV columns `replication,estimator,mse,log_mse` (failed fits leave the
/// numeric fields empty); JSON carries the whole result.
pub fn emit_results(result: &ExperimentResult, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        Format::Csv => {
            writeln!(w, "replication,estimator,mse,log_mse").map_err(io)?;
            for r in &result.records {
                writeln!(
                    w,
                    "{},{},{},{}",
                    r.replication,
                    r.estimator,
                    fmt_opt(r.mse),
                    fmt_opt(r.log_mse)
                )
                .map_err(io)?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, result)
                .map_err(|e| Error::parse(path, e.to_string()))?;
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads the records back from either format.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    match Format::from_path(path) {
        Format::Json => Ok(read_result_json(path)?.records),
        Format::Csv => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
            let mut out = Vec::new();
            for row in reader.records() {
                let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
                let field = |i: usize| row.get(i).unwrap_or("").trim();
                let num = |i: usize| -> Result<Option<f64>> {
                    let f = field(i);
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>()
                            .map(Some)
                            .map_err(|e| Error::parse(path, format!("`{f}`: {e}")))
                    }
                };
                let replication = field(0)
                    .parse()
                    .map_err(|_| Error::parse(path, format!("bad replication `{}`", field(0))))?;
                let estimator: EstimatorKind =
                    field(1).parse().map_err(|e: Error| Error::parse(path, e.to_string()))?;
                let mse = num(2)?;
                out.push(Record {
                    replication,
                    estimator,
                    mse,
                    log_mse: num(3)?,
                    error: mse.is_none().then(|| "failed".to_string()),
                });
            }
            Ok(out)
        }
    }
}

pub fn read_result_json(path: impl AsRef<Path>) -> Result<ExperimentResult> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::parse(path, e.to_string()))
}

/// Boxplot-ready quantiles, one row per estimator and statistic.
pub fn emit_summary(result: &ExperimentResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "estimator,statistic,count,failed,min,q1,median,q3,max").map_err(io)?;
    for s in &result.summaries {
        for (stat, q) in [("mse", s.mse), ("log_mse", s.log_mse)] {
            if let Some(q) = q {
                writeln!(
                    w,
                    "{},{stat},{},{},{:?},{:?},{:?},{:?},{:?}",
                    s.estimator, s.count, s.failed, q.min, q.q1, q.median, q.q3, q.max
                )
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Settings for the out-of-sample R² protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub repeats: usize,
    pub seed: u64,
    pub folds: usize,
    pub lasso: LassoOptions,
    pub source_estimators: Vec<Option<SourceEstimator>>,
    pub estimators: Vec<EstimatorKind>,
    /// Center and scale each dataset; predictions are mapped back to the
    /// original response scale.
    pub standardize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            repeats: 100,
            seed: 0,
            folds: 5,
            lasso: LassoOptions::default(),
            source_estimators: Vec::new(),
            estimators: EstimatorKind::ALL.to_vec(),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Record {
    pub repeat: usize,
    /// 0: fit on the first half, score on the second; 1: the reverse.
    pub orientation: usize,
    pub estimator: EstimatorKind,
    /// `None` when the validation responses are constant.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub records: Vec<R2Record>,
    /// Mean R² per estimator over the non-skipped splits.
    pub mean_r2: BTreeMap<String, f64>,
}

fn prepare(data: &DataSet, standardize: bool) -> Result<(DataSet, Option<Standardizer>)> {
    if standardize {
        let s = Standardizer::fit(data);
        Ok((s.transform(data)?, Some(s)))
    } else {
        Ok((data.clone(), None))
    }
}

fn predict(x: &DMatrix<f64>, beta: &DVector<f64>, scaler: &Option<Standardizer>) -> Result<DVector<f64>> {
    match scaler {
        Some(s) => s.predict(x, beta),
        None => Ok(x * beta),
    }
}

/// Repeated random halving of the target: fit on one half, score R² on the
/// other, in both orientations. Sources are used in full and their PTL fits
/// are computed once.
pub fn evaluate_real(target: &DataSet, sources: &[DataSet], cfg: &EvalConfig) -> Result<EvalResult> {
    if sources.iter().any(|s| s.p() != target.p()) {
        return Err(Error::invalid("sources and target must share the same number of covariates"));
    }
    if target.n() < 2 * cfg.folds {
        return Err(Error::invalid(format!(
            "target has {} rows; each half needs at least {} for {}-fold CV",
            target.n(),
            cfg.folds,
            cfg.folds
        )));
    }
    let prepared_sources = sources
        .iter()
        .map(|s| prepare(s, cfg.standardize).map(|(d, _)| d))
        .collect::<Result<Vec<_>>>()?;
    let basis = if cfg.estimators.contains(&EstimatorKind::Ptl) {
        let estimators: Vec<Option<SourceEstimator>> = (0..sources.len())
            .map(|k| cfg.source_estimators.get(k).copied().flatten())
            .collect();
        Some(fit_sources(
            &prepared_sources,
            &estimators,
            cfg.folds,
            &cfg.lasso,
            derive_seed(cfg.seed, u64::MAX),
        )?)
    } else {
        None
    };

    let n = target.n();
    let half = n / 2;
    let mut records = Vec::new();
    for repeat in 0..cfg.repeats {
        let rep_seed = derive_seed(cfg.seed, repeat as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(rep_seed));
        let (first, second) = order.split_at(half);
        for (orientation, (train_idx, val_idx)) in [(first, second), (second, first)].into_iter().enumerate() {
            let train = target.subset(train_idx)?;
            let val = target.subset(val_idx)?;
            let (train_fit, scaler) = prepare(&train, cfg.standardize)?;
            let fit_seed = derive_seed(rep_seed, orientation as u64);
            for &kind in &cfg.estimators {
                let beta = match kind {
                    EstimatorKind::Lasso => {
                        fit_lasso_target(&train_fit, cfg.folds, &cfg.lasso, fit_seed)?.beta
                    }
                    EstimatorKind::TransLasso => {
                        fit_translasso(&prepared_sources, &train_fit, cfg.folds, &cfg.lasso, fit_seed)?.beta
                    }
                    EstimatorKind::Ptl => {
                        let config = PtlConfig {
                            folds: cfg.folds,
                            lasso: cfg.lasso,
                            seed: fit_seed,
                            source_estimators: Vec::new(),
                        };
                        let basis = basis.clone().expect("basis fitted when PTL is requested");
                        fit_ptl_with_basis(basis, &train_fit, &config)?.beta_hat
                    }
                };
                let pred = predict(val.x(), &beta, &scaler)?;
                let r2 = r_squared(&pred, val.y())?;
                if r2.is_none() {
                    log::warn!("repeat {repeat}: constant validation responses, split skipped");
                }
                records.push(R2Record {
                    repeat,
                    orientation,
                    estimator: kind,
                    r2,
                });
            }
        }
    }

    let mut mean_r2 = BTreeMap::new();
    for &kind in &cfg.estimators {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.estimator == kind)
            .filter_map(|r| r.r2)
            .collect();
        if !vals.is_empty() {
            mean_r2.insert(kind.to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    Ok(EvalResult { records, mean_r2 })
}

/// CSV columns `repeat,orientation,estimator,r2`.
pub fn emit_r2(result: &EvalResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "repeat,orientation,estimator,r2").map_err(io)?;
    for r in &result.records {
        writeln!(w, "{},{},{},{}", r.repeat, r.orientation, r.estimator, fmt_opt(r.r2)).map_err(io)?;
    }
    w.flush().map_err(io)
}
