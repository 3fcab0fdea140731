//! Rate-scaling harness: single trials, factorial scans over one axis,
//! log-log power-law fits, and CSV/JSON persistence.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{generate_low_rank, write_atomic, Dims};
use crate::rng::derive_seed;
use crate::sampling::{sample_observations, NoiseKind, NoiseModel, SamplingDistribution};
use crate::solvers::{
    fit, resolve_tuning, tune_from_theorem, Estimator, EstimatorSpec, SolverConfig, Tuning,
    TuningContext,
};

/// Where entries are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum SamplingSpec {
    #[default]
    Uniform,
    /// `P_jk ∝ rowWeights[j] · colWeights[k]`.
    #[serde(rename_all = "camelCase")]
    Product {
        row_weights: Vec<f64>,
        col_weights: Vec<f64>,
    },
}

impl SamplingSpec {
    pub fn build(&self, dims: Dims) -> Result<SamplingDistribution> {
        match self {
            SamplingSpec::Uniform => Ok(SamplingDistribution::uniform(dims)),
            SamplingSpec::Product {
                row_weights,
                col_weights,
            } => {
                let p = SamplingDistribution::product(row_weights, col_weights)?;
                if p.dims() != dims {
                    return Err(Error::DimensionMismatch {
                        expected: dims,
                        found: p.dims(),
                    });
                }
                Ok(p)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    StudentT,
    TwoPoint,
    None,
}

/// Serializable noise description; `df` applies to Student-t only.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseFamily,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
}

impl NoiseSpec {
    pub fn build(&self) -> Result<NoiseModel> {
        let kind = match self.kind {
            NoiseFamily::Gaussian => NoiseKind::Gaussian,
            NoiseFamily::StudentT => NoiseKind::StudentT {
                df: self.df.unwrap_or(crate::sampling::DEFAULT_STUDENT_DF),
            },
            NoiseFamily::TwoPoint => NoiseKind::TwoPoint,
            NoiseFamily::None => return Ok(NoiseModel::none()),
        };
        NoiseModel::new(kind, self.sigma)
    }
}

fn default_tuning() -> Tuning {
    Tuning::Explicit
}

/// Everything needed to run one trial. `seed` fully determines the trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrialConfig {
    pub m1: usize,
    pub m2: usize,
    pub rank: usize,
    pub a: f64,
    pub n: usize,
    pub estimator: Estimator,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default = "default_tuning")]
    pub tuning: Tuning,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub replicate: usize,
    /// Record wall time; off by default so outputs are byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

impl TrialConfig {
    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.m1, self.m2)
    }

    /// Checks everything that can be checked without running the trial.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims()?;
        if self.rank == 0 || self.rank > dims.min_dim() {
            return Err(Error::invalid(format!(
                "rank must lie in [1, min(m1, m2)] = [1, {}], got {}",
                dims.min_dim(),
                self.rank
            )));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!(
                "a must be positive, got {}",
                self.a
            )));
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        self.noise.build()?;
        self.sampling.build(dims)?;
        self.solver.validate()?;
        match self.tuning {
            Tuning::Explicit if self.lambda.is_none() => {
                return Err(Error::invalid("explicit tuning needs lambda"));
            }
            Tuning::Explicit if self.estimator == Estimator::Huber && self.tau.is_none() => {
                return Err(Error::invalid("explicit Huber tuning needs tau"));
            }
            Tuning::TheoremRule { c } => {
                tune_from_theorem(
                    self.estimator,
                    c,
                    dims,
                    self.n,
                    Some(self.noise.sigma),
                    self.a,
                )?;
            }
            Tuning::Pilot { reps, quantile }
                if reps < 100 || !(quantile > 0.0 && quantile < 1.0) =>
            {
                return Err(Error::invalid(
                    "pilot tuning needs reps >= 100 and quantile in (0, 1)",
                ));
            }
            _ => {}
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!(
                    "lambda must be finite and >= 0, got {l}"
                )));
            }
        }
        Ok(())
    }

    fn estimator_spec(&self) -> EstimatorSpec {
        EstimatorSpec {
            estimator: self.estimator,
            lambda: self.lambda,
            tau: self.tau,
            a: self.a,
            tuning: self.tuning,
        }
    }
}

/// One row of the trials table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialRecord {
    pub m1: usize,
    pub m2: usize,
    pub r: usize,
    pub n: usize,
    pub estimator: Estimator,
    pub sigma: f64,
    pub a: f64,
    pub replicate: usize,
    pub seed: u64,
    /// `‖Â − A0‖_F² / (m1 m2)`.
    pub error_fro: f64,
    /// `Σ P_jk (Â − A0)_jk²`.
    pub error_weighted: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_ms: f64,
}

pub const TRIALS_HEADER: [&str; 14] = [
    "m1",
    "m2",
    "r",
    "n",
    "estimator",
    "sigma",
    "a",
    "replicate",
    "seed",
    "errorFro",
    "errorWeighted",
    "iterations",
    "converged",
    "wallTimeMs",
];

/// Generates a truth, samples, tunes, fits and scores. A solver failure yields
/// a record with `converged = false` and NaN errors rather than an `Err`.
pub fn run_trial(config: &TrialConfig) -> Result<TrialRecord> {
    config.validate()?;
    let dims = config.dims()?;
    let noise = config.noise.build()?;
    let p = config.sampling.build(dims)?;
    let seed = config.seed;
    let truth = generate_low_rank(dims, config.rank, config.a, derive_seed(seed, &[0]))?;
    let obs = sample_observations(&truth, &p, &noise, config.n, derive_seed(seed, &[1]))?;

    let start = Instant::now();
    let ctx = TuningContext {
        sigma: Some(noise.sigma()),
        noise: Some(&noise),
        sampling: Some(&p),
        seed: derive_seed(seed, &[2]),
    };
    let outcome = resolve_tuning(&config.estimator_spec(), dims, config.n, &ctx)
        .and_then(|spec| fit(&obs, &spec, &config.solver));
    let wall_time_ms = if config.timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };

    let (error_fro, error_weighted, iterations, converged) = match outcome {
        Ok(res) => {
            let diff = &res.estimate - truth.matrix();
            let fro = diff.norm_frobenius();
            let w = diff.norm_weighted_frobenius(&p)?;
            (
                fro * fro / dims.len() as f64,
                w * w,
                res.iterations,
                res.converged,
            )
        }
        Err(Error::Numerical(_)) => (f64::NAN, f64::NAN, 0, false),
        Err(e) => return Err(e),
    };
    Ok(TrialRecord {
        m1: config.m1,
        m2: config.m2,
        r: config.rank,
        n: config.n,
        estimator: config.estimator,
        sigma: noise.sigma(),
        a: config.a,
        replicate: config.replicate,
        seed,
        error_fro,
        error_weighted,
        iterations,
        converged,
        wall_time_ms,
    })
}

/// The rule constant that makes the theorem rule reproduce the pilot λ at the
/// configuration's `n`.
pub fn calibrate_theorem_constant(config: &TrialConfig, reps: usize, quantile: f64) -> Result<f64> {
    let dims = config.dims()?;
    let noise = config.noise.build()?;
    let p = config.sampling.build(dims)?;
    let spec = EstimatorSpec {
        lambda: None,
        tau: None,
        tuning: Tuning::Pilot { reps, quantile },
        ..config.estimator_spec()
    };
    let ctx = TuningContext {
        sigma: Some(noise.sigma()),
        noise: Some(&noise),
        sampling: Some(&p),
        seed: derive_seed(config.seed, &[3]),
    };
    let pilot = resolve_tuning(&spec, dims, config.n, &ctx)?
        .lambda
        .expect("pilot resolution sets lambda");
    let unit = tune_from_theorem(
        config.estimator,
        1.0,
        dims,
        config.n,
        Some(noise.sigma()),
        config.a,
    )?;
    Ok(pilot / unit.lambda)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Axis {
    N,
    /// Square dimension `m1 = m2 = M`.
    M,
    R,
}

/// Errors injected instead of running trials: `errorFro = c · x^exponent`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SyntheticErrors {
    pub c: f64,
    pub exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScanConfig {
    pub axis: Axis,
    pub grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub base: TrialConfig,
    /// On an `r` axis, scale `n` as `base.n · r / base.rank`.
    #[serde(default)]
    pub scale_n_with_rank: bool,
    #[serde(default)]
    pub synthetic: Option<SyntheticErrors>,
}

impl ScanConfig {
    /// The trial configuration at grid point `index`, replicate `rep`.
    pub fn trial(&self, index: usize, rep: usize) -> TrialConfig {
        let x = self.grid[index];
        let mut t = self.base.clone();
        match self.axis {
            Axis::N => t.n = x,
            Axis::M => {
                t.m1 = x;
                t.m2 = x;
            }
            Axis::R => {
                if self.scale_n_with_rank {
                    t.n =
                        ((self.base.n as f64) * x as f64 / self.base.rank as f64).round() as usize;
                }
                t.rank = x;
            }
        }
        t.seed = derive_seed(self.seed, &[index as u64, rep as u64]);
        t.replicate = rep;
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.len() < 4 {
            return Err(Error::invalid(format!(
                "scan grid needs at least 4 points, got {}",
                self.grid.len()
            )));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("scan grid must be strictly increasing"));
        }
        if self.reps < 10 {
            return Err(Error::invalid(format!(
                "scan needs at least 10 replicates, got {}",
                self.reps
            )));
        }
        if let Some(s) = self.synthetic {
            if !(s.c > 0.0 && s.c.is_finite() && s.exponent.is_finite()) {
                return Err(Error::invalid(
                    "synthetic errors need c > 0 and a finite exponent",
                ));
            }
        }
        for i in 0..self.grid.len() {
            self.trial(i, 0)
                .validate()
                .map_err(|e| Error::invalid(format!("grid point {}: {e}", self.grid[i])))?;
        }
        Ok(())
    }
}

/// Summary of `errorFro` at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Aggregate {
    pub value: usize,
    pub reps: usize,
    pub mean_error: f64,
    pub median_error: f64,
    /// Sample standard deviation over `√reps`; zero for a single replicate.
    pub stderr: f64,
}

/// Aggregates a non-empty set of replicate records sharing one grid value.
pub fn aggregate(value: usize, records: &[TrialRecord]) -> Aggregate {
    assert!(!records.is_empty(), "aggregate of no records");
    let mut errs: Vec<f64> = records.iter().map(|r| r.error_fro).collect();
    let k = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / k;
    let stderr = if errs.len() > 1 {
        (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (k - 1.0)).sqrt() / k.sqrt()
    } else {
        0.0
    };
    errs.sort_by(f64::total_cmp);
    let h = errs.len() / 2;
    let median = if errs.len() % 2 == 1 {
        errs[h]
    } else {
        0.5 * (errs[h - 1] + errs[h])
    };
    Aggregate {
        value,
        reps: records.len(),
        mean_error: mean,
        median_error: median,
        stderr,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateScanResult {
    pub axis: Axis,
    pub grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// Ordered by grid point, then replicate.
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl RateScanResult {
    /// Regroups `records` by the scanned axis and recomputes the aggregates.
    pub fn from_records(axis: Axis, reps: usize, seed: u64, records: Vec<TrialRecord>) -> Self {
        let key = |r: &TrialRecord| match axis {
            Axis::N => r.n,
            Axis::M => r.m1,
            Axis::R => r.r,
        };
        let mut grid: Vec<usize> = records.iter().map(key).collect();
        grid.sort_unstable();
        grid.dedup();
        let aggregates = grid
            .iter()
            .map(|&x| {
                let group: Vec<TrialRecord> =
                    records.iter().filter(|r| key(r) == x).cloned().collect();
                aggregate(x, &group)
            })
            .collect();
        Self {
            axis,
            grid,
            reps,
            seed,
            records,
            aggregates,
        }
    }
}

fn synthetic_record(t: &TrialConfig, x: usize, s: SyntheticErrors) -> TrialRecord {
    let e = s.c * (x as f64).powf(s.exponent);
    TrialRecord {
        m1: t.m1,
        m2: t.m2,
        r: t.rank,
        n: t.n,
        estimator: t.estimator,
        sigma: t.noise.sigma,
        a: t.a,
        replicate: t.replicate,
        seed: t.seed,
        error_fro: e,
        error_weighted: e,
        iterations: 0,
        converged: true,
        wall_time_ms: 0.0,
    }
}

/// Full factorial over grid × replicates. All points are validated before any
/// trial runs; replicate seeds depend only on `(seed, grid index, replicate)`.
pub fn rate_scan(config: &ScanConfig) -> Result<RateScanResult> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..config.grid.len())
        .flat_map(|i| (0..config.reps).map(move |r| (i, r)))
        .collect();
    let one = |&(i, rep): &(usize, usize)| -> Result<TrialRecord> {
        let t = config.trial(i, rep);
        match config.synthetic {
            Some(s) => Ok(synthetic_record(&t, config.grid[i], s)),
            None => run_trial(&t),
        }
    };
    #[cfg(feature = "parallel")]
    let records: Result<Vec<TrialRecord>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records: Result<Vec<TrialRecord>> = jobs.iter().map(one).collect();
    Ok(RateScanResult::from_records(
        config.axis,
        config.reps,
        config.seed,
        records?,
    ))
}

/// `ln y = intercept + slope · ln x` by ordinary least squares.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub point_count: usize,
}

pub fn fit_power_law_points(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("x and y lengths differ"));
    }
    if xs.len() < 4 {
        return Err(Error::invalid(format!(
            "power-law fit needs at least 4 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("power-law fit needs positive finite values"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("power-law fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(PowerLawFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        point_count: xs.len(),
    })
}

/// Fits mean `errorFro` against the scanned axis.
pub fn fit_power_law(result: &RateScanResult) -> Result<PowerLawFit> {
    let xs: Vec<f64> = result.aggregates.iter().map(|a| a.value as f64).collect();
    let ys: Vec<f64> = result.aggregates.iter().map(|a| a.mean_error).collect();
    fit_power_law_points(&xs, &ys)
}

/// Serializes records as CSV with the trials header (header only when empty).
pub fn trials_csv(records: &[TrialRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Numerical(format!("csv serialization: {e}"));
    w.write_record(TRIALS_HEADER).map_err(to_err)?;
    for r in records {
        w.serialize(r).map_err(to_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Numerical(format!("csv serialization: {e}")))
}

pub fn write_trials_csv(path: impl AsRef<Path>, records: &[TrialRecord]) -> Result<()> {
    write_atomic(path.as_ref(), &trials_csv(records)?)
}

pub fn read_trials_csv(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header = rdr.headers().map_err(|e| Error::format(path, e))?;
    if header.iter().ne(TRIALS_HEADER) {
        return Err(Error::format(path, "unexpected trials header"));
    }
    rdr.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, e))
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Numerical(format!("json serialization: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AggregatesFile {
    pub axis: Axis,
    pub grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub aggregates: Vec<Aggregate>,
}

pub const TRIALS_FILE: &str = "trials.csv";
pub const AGGREGATES_FILE: &str = "aggregates.json";
pub const FIT_FILE: &str = "fit.json";

/// Writes `trials.csv`, `aggregates.json` and `fit.json` into `dir`, each
/// atomically. The fit is skipped (and returned as `None`) when it is undefined.
pub fn persist_scan(result: &RateScanResult, dir: impl AsRef<Path>) -> Result<Option<PowerLawFit>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trials_csv(dir.join(TRIALS_FILE), &result.records)?;
    write_json(
        dir.join(AGGREGATES_FILE),
        &AggregatesFile {
            axis: result.axis,
            grid: result.grid.clone(),
            reps: result.reps,
            seed: result.seed,
            aggregates: result.aggregates.clone(),
        },
    )?;
    let fit = fit_power_law(result).ok();
    if let Some(f) = &fit {
        write_json(dir.join(FIT_FILE), f)?;
    }
    Ok(fit)
}
