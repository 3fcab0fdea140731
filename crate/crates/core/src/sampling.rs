//! Sampling distributions over matrix entries, noise models, and observation
//! sets drawn with replacement from the trace-regression model
//! `Y_i = A0[j_i, k_i] + ξ_i`.

use std::path::Path;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erf;

use crate::error::{check_dims, Error, Result};
use crate::matrix::{write_atomic, Dims, GroundTruth};
use crate::rng::{rng_from_seed, LabRng};

const SUM_TOL: f64 = 1e-12;

/// Probability table `P_jk` over the entries of an `m1 x m2` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingDistribution {
    dims: Dims,
    probs: Vec<f64>,
}

impl SamplingDistribution {
    pub fn uniform(dims: Dims) -> Self {
        Self {
            dims,
            probs: vec![1.0 / dims.len() as f64; dims.len()],
        }
    }

    /// `P_jk ∝ row_weights[j] * col_weights[k]`.
    pub fn product(row_weights: &[f64], col_weights: &[f64]) -> Result<Self> {
        let dims = Dims::new(row_weights.len(), col_weights.len())?;
        if let Some(w) = row_weights
            .iter()
            .chain(col_weights)
            .find(|w| !(**w > 0.0 && w.is_finite()))
        {
            return Err(Error::invalid(format!(
                "product weights must be positive and finite, got {w}"
            )));
        }
        let rs: f64 = row_weights.iter().sum();
        let cs: f64 = col_weights.iter().sum();
        let mut probs = Vec::with_capacity(dims.len());
        for r in row_weights {
            for c in col_weights {
                probs.push((r / rs) * (c / cs));
            }
        }
        Ok(Self { dims, probs })
    }

    pub fn point_mass(dims: Dims, row: usize, col: usize) -> Result<Self> {
        if row >= dims.rows() || col >= dims.cols() {
            return Err(Error::invalid(format!(
                "entry ({row}, {col}) outside a {dims} matrix"
            )));
        }
        let mut probs = vec![0.0; dims.len()];
        probs[dims.index(row, col)] = 1.0;
        Ok(Self { dims, probs })
    }

    /// Row-major probability table; must be nonnegative and sum to one.
    pub fn from_probs(dims: Dims, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims.len() {
            return Err(Error::invalid(format!(
                "expected {} probabilities, got {}",
                dims.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid(
                "probabilities must be finite and nonnegative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { dims, probs })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, row: usize, col: usize) -> f64 {
        self.probs[self.dims.index(row, col)]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.probs
            .chunks(self.dims.cols())
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.cols()];
        for row in self.probs.chunks(self.dims.cols()) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest row or column marginal, `max(max_j Σ_k P_jk, max_k Σ_j P_jk)`.
    pub fn max_marginal(&self) -> f64 {
        let r = self.row_sums().into_iter().fold(0.0, f64::max);
        let c = self.col_sums().into_iter().fold(0.0, f64::max);
        r.max(c)
    }

    /// Constants implied by the row/column mass, minimum mass and maximum mass
    /// conditions on the sampling law. Never rejects.
    pub fn assumption_constants(&self) -> AssumptionConstants {
        let m = self.dims.min_dim() as f64;
        let d = self.dims.sum_dim() as f64;
        let max_prob = self.max_prob();
        let min_prob = self.min_prob();
        AssumptionConstants {
            l2: m * self.max_marginal(),
            mu: if min_prob > 0.0 {
                1.0 / (self.dims.len() as f64 * min_prob)
            } else {
                f64::INFINITY
            },
            l3: max_prob * m * d.ln().powi(3),
            max_prob,
        }
    }

    /// O(1)-per-draw index sampler built from the table.
    pub fn sampler(&self) -> Result<EntrySampler> {
        let alias = WeightedAliasIndex::new(self.probs.clone())
            .map_err(|e| Error::invalid(format!("cannot build alias table: {e}")))?;
        Ok(EntrySampler {
            dims: self.dims,
            alias,
        })
    }
}

/// Free-function form of [`SamplingDistribution::assumption_constants`].
pub fn validate_assumptions(p: &SamplingDistribution) -> AssumptionConstants {
    p.assumption_constants()
}

/// Draws entry locations `(row, col)` from a [`SamplingDistribution`].
#[derive(Clone, Debug)]
pub struct EntrySampler {
    dims: Dims,
    alias: WeightedAliasIndex<f64>,
}

impl EntrySampler {
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let i = self.alias.sample(rng);
        (i / self.dims.cols(), i % self.dims.cols())
    }
}

/// Constants of the sampling assumptions, reported rather than enforced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AssumptionConstants {
    /// `m * max(row and column marginals)`.
    pub l2: f64,
    /// `1 / (m1 m2 min P_jk)`; infinite when some entry has zero mass.
    pub mu: f64,
    /// `max P_jk * m * (ln d)^3`.
    pub l3: f64,
    pub max_prob: f64,
}

impl AssumptionConstants {
    pub fn mu_is_finite(&self) -> bool {
        self.mu.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum NoiseKind {
    Gaussian,
    /// Student-t with `df > 2`, rescaled to variance `sigma²`.
    StudentT {
        df: f64,
    },
    /// `±sigma` with equal probability.
    TwoPoint,
    None,
}

/// Mean-zero, location-independent noise with standard deviation `sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    sigma: f64,
}

pub const DEFAULT_STUDENT_DF: f64 = 2.5;

impl NoiseModel {
    pub fn new(kind: NoiseKind, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if let NoiseKind::StudentT { df } = kind {
            if !(df > 2.0 && df.is_finite()) {
                return Err(Error::invalid(format!(
                    "Student-t degrees of freedom must exceed 2, got {df}"
                )));
            }
        }
        Ok(Self { kind, sigma })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::Gaussian, sigma)
    }

    pub fn student_t(df: f64, sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::StudentT { df }, sigma)
    }

    pub fn two_point(sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::TwoPoint, sigma)
    }

    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            sigma: 0.0,
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Exact variance of a draw.
    pub fn variance(&self) -> f64 {
        match self.kind {
            NoiseKind::None => 0.0,
            _ => self.sigma * self.sigma,
        }
    }

    /// Largest possible `|ξ|`, if bounded.
    pub fn abs_bound(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::None => Some(0.0),
            NoiseKind::TwoPoint => Some(self.sigma),
            NoiseKind::Gaussian | NoiseKind::StudentT { .. } if self.sigma == 0.0 => Some(0.0),
            NoiseKind::Gaussian | NoiseKind::StudentT { .. } => None,
        }
    }

    /// Scale applied to a standard Student-t draw so the variance is `sigma²`.
    fn student_scale(&self, df: f64) -> f64 {
        self.sigma * ((df - 2.0) / df).sqrt()
    }

    /// `P(|ξ| <= x)` in closed form.
    pub fn prob_abs_le(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if self.sigma == 0.0 || self.kind == NoiseKind::None {
            return 1.0;
        }
        match self.kind {
            NoiseKind::Gaussian => erf(x / (self.sigma * std::f64::consts::SQRT_2)),
            NoiseKind::StudentT { df } => {
                let t = StudentsT::new(0.0, 1.0, df).expect("df > 2 validated");
                let z = x / self.student_scale(df);
                if z.is_infinite() {
                    1.0
                } else {
                    2.0 * t.cdf(z) - 1.0
                }
            }
            NoiseKind::TwoPoint => {
                if self.sigma <= x {
                    1.0
                } else {
                    0.0
                }
            }
            NoiseKind::None => 1.0,
        }
    }

    pub fn sampler(&self) -> NoiseSampler {
        let inner = match self.kind {
            NoiseKind::Gaussian => {
                SamplerKind::Gaussian(Normal::new(0.0, self.sigma).expect("sigma validated"))
            }
            NoiseKind::StudentT { df } => SamplerKind::StudentT(
                StudentT::new(df).expect("df validated"),
                self.student_scale(df),
            ),
            NoiseKind::TwoPoint => SamplerKind::TwoPoint(self.sigma),
            NoiseKind::None => SamplerKind::Zero,
        };
        NoiseSampler { inner }
    }
}

#[derive(Clone, Debug)]
enum SamplerKind {
    Gaussian(Normal<f64>),
    StudentT(StudentT<f64>, f64),
    TwoPoint(f64),
    Zero,
}

/// Prepared sampler for a [`NoiseModel`].
#[derive(Clone, Debug)]
pub struct NoiseSampler {
    inner: SamplerKind,
}

impl NoiseSampler {
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.inner {
            SamplerKind::Gaussian(d) => d.sample(rng),
            SamplerKind::StudentT(d, scale) => scale * d.sample(rng),
            SamplerKind::TwoPoint(s) => {
                if rng.random::<bool>() {
                    *s
                } else {
                    -*s
                }
            }
            SamplerKind::Zero => 0.0,
        }
    }
}

/// `count` i.i.d. noise draws.
pub fn noise_sample(noise: &NoiseModel, count: usize, seed: u64) -> Vec<f64> {
    let sampler = noise.sampler();
    let mut rng = rng_from_seed(seed);
    (0..count).map(|_| sampler.draw(&mut rng)).collect()
}

/// One sampled entry and its noisy value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub row: usize,
    pub col: usize,
    pub y: f64,
}

/// `n` observations drawn with replacement; repeats are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    dims: Dims,
    records: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(dims: Dims, records: Vec<Observation>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid(
                "an observation set needs at least one record",
            ));
        }
        if let Some(o) = records
            .iter()
            .find(|o| o.row >= dims.rows() || o.col >= dims.cols() || !o.y.is_finite())
        {
            return Err(Error::invalid(format!(
                "observation ({}, {}, {}) invalid for a {dims} matrix",
                o.row, o.col, o.y
            )));
        }
        Ok(Self { dims, records })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    /// How many times each entry was drawn, row-major.
    pub fn multiplicities(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.dims.len()];
        for o in &self.records {
            counts[self.dims.index(o.row, o.col)] += 1;
        }
        counts
    }

    pub fn max_multiplicity(&self) -> u32 {
        self.multiplicities().into_iter().max().unwrap_or(0)
    }

    /// A copy with every value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dims: self.dims,
            records: self
                .records
                .iter()
                .map(|o| Observation { y: c * o.y, ..*o })
                .collect(),
        }
    }

    /// CSV with header `row,col,y` and zero-based indices.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(Vec::new());
        for o in &self.records {
            w.serialize(o).map_err(|e| Error::format(path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format(path, e))?;
        write_atomic(path, &bytes)
    }

    pub fn read_csv(path: impl AsRef<Path>, dims: Dims) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })?;
        let headers = r.headers().map_err(|e| Error::format(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["row", "col", "y"] {
            return Err(Error::format(path, "expected header row,col,y"));
        }
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<Observation>, _>>()
            .map_err(|e| Error::format(path, e))?;
        Self::new(dims, records).map_err(|e| Error::format(path, e))
    }
}

/// Draws `n` i.i.d. records: `(j, k) ~ P`, then `y = A0[j, k] + ξ`.
pub fn sample_observations(
    truth: &GroundTruth,
    p: &SamplingDistribution,
    noise: &NoiseModel,
    n: usize,
    seed: u64,
) -> Result<ObservationSet> {
    check_dims(truth.dims(), p.dims())?;
    if n == 0 {
        return Err(Error::invalid("sample size n must be positive"));
    }
    let entries = p.sampler()?;
    let noise = noise.sampler();
    let mut rng = rng_from_seed(seed);
    let a0 = truth.matrix();
    let records = (0..n)
        .map(|_| {
            let (row, col) = entries.draw(&mut rng);
            let y = a0.get(row, col) + noise.draw(&mut rng);
            Observation { row, col, y }
        })
        .collect();
    ObservationSet::new(p.dims(), records)
}

pub(crate) fn draw_sign(rng: &mut LabRng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}
