//! Matrix concentration diagnostics for sums `Q = (1/n) Σ ζ_i X_i` under the
//! sampling-with-replacement model.
//!
//! Under this model `E[ζ² X Xᵀ]`, `E[ζ² Xᵀ X]` and `Cov(ζ X)` are all diagonal,
//! so the four parameters of the sharp (dimension-free) inequalities have
//! closed forms in terms of the sampling table:
//!
//! * `γ² = s² · max(max row mass, max column mass) / n`
//! * `γ*² = g² = s² · max_jk P_jk / n`
//! * `R = b / n` (or `2b / n` for recentered truncations)
//!
//! where `s²` bounds `E[ζ² | X]` and `b` bounds `|ζ|`. For `γ*` the squared
//! substitution `u_j = y_j²`, `v_k = z_k²` turns the supremum over unit vectors
//! into the bilinear program `max uᵀ P v` over two simplices, whose optimum sits
//! at a vertex pair, i.e. at `max_jk P_jk`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Dims};
use crate::rng::{derive_seed, rng_from_seed, LabRng};
use crate::sampling::{draw_sign, NoiseModel, NoiseSampler, SamplingDistribution};

/// Spectral norms of simulated sums use power iteration to this relative tolerance.
pub const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 50_000;

/// Random multipliers `ζ_i` attached to each sampled location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Multipliers {
    /// `ε_i = ±1`.
    Rademacher,
    /// `ξ_i` from a noise model.
    Noise(NoiseModel),
    /// `φ_τ(ξ_i)`, the noise clipped to `[-τ, τ]`.
    Truncated { noise: NoiseModel, tau: f64 },
    /// `ε_i · 1{|ξ_i| <= τ/2}`.
    IndicatorRademacher { noise: NoiseModel, tau: f64 },
}

impl Multipliers {
    fn validate(&self) -> Result<()> {
        match self {
            Multipliers::Truncated { tau, .. } | Multipliers::IndicatorRademacher { tau, .. }
                if !(*tau >= 0.0) =>
            {
                Err(Error::invalid(format!(
                    "truncation level must be >= 0, got {tau}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn sampler(&self) -> MultiplierSampler {
        match self {
            Multipliers::Rademacher => MultiplierSampler::Rademacher,
            Multipliers::Noise(noise) => MultiplierSampler::Noise(noise.sampler()),
            Multipliers::Truncated { noise, tau } => {
                MultiplierSampler::Truncated(noise.sampler(), *tau)
            }
            Multipliers::IndicatorRademacher { noise, tau } => {
                MultiplierSampler::Indicator(noise.sampler(), 0.5 * tau)
            }
        }
    }
}

enum MultiplierSampler {
    Rademacher,
    Noise(NoiseSampler),
    Truncated(NoiseSampler, f64),
    Indicator(NoiseSampler, f64),
}

impl MultiplierSampler {
    #[inline]
    fn draw(&self, rng: &mut LabRng) -> f64 {
        match self {
            MultiplierSampler::Rademacher => draw_sign(rng),
            MultiplierSampler::Noise(s) => s.draw(rng),
            MultiplierSampler::Truncated(s, tau) => s.draw(rng).clamp(-tau, *tau),
            MultiplierSampler::Indicator(s, half) => {
                let eps = draw_sign(rng);
                if s.draw(rng).abs() <= *half {
                    eps
                } else {
                    0.0
                }
            }
        }
    }
}

/// Which per-summand bound to report for `R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RBound {
    /// `|ζ| <= b` for an already centered (symmetric) multiplier: `R = b / n`.
    #[default]
    Symmetric,
    /// A truncation recentered by its conditional mean: `R = 2b / n`.
    Recentered,
}

/// A multiplier law together with the moment bounds entering the parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiplierFamily {
    pub multipliers: Multipliers,
    /// Bound on `E[ζ² | X]`.
    pub second_moment_bound: f64,
    /// Bound on `|ζ|`; `None` when unbounded.
    pub abs_bound: Option<f64>,
    pub r_bound: RBound,
}

impl MultiplierFamily {
    pub fn rademacher() -> Self {
        Self {
            multipliers: Multipliers::Rademacher,
            second_moment_bound: 1.0,
            abs_bound: Some(1.0),
            r_bound: RBound::Symmetric,
        }
    }

    pub fn noise(noise: NoiseModel) -> Self {
        Self {
            multipliers: Multipliers::Noise(noise),
            second_moment_bound: noise.variance(),
            abs_bound: noise.abs_bound(),
            r_bound: RBound::Symmetric,
        }
    }

    /// `φ_τ(ξ)`. Clipping is 1-Lipschitz, so `E[φ_τ(ξ)²] <= σ²` for symmetric noise.
    pub fn truncated(noise: NoiseModel, tau: f64) -> Result<Self> {
        let m = Multipliers::Truncated { noise, tau };
        m.validate()?;
        Ok(Self {
            multipliers: m,
            second_moment_bound: noise.variance(),
            abs_bound: Some(tau),
            r_bound: RBound::Symmetric,
        })
    }

    /// `ε · 1{|ξ| <= τ/2}` with second moment `P(|ξ| <= τ/2)` in closed form.
    pub fn indicator(noise: NoiseModel, tau: f64) -> Result<Self> {
        let m = Multipliers::IndicatorRademacher { noise, tau };
        m.validate()?;
        Ok(Self {
            multipliers: m,
            second_moment_bound: noise.prob_abs_le(0.5 * tau),
            abs_bound: Some(1.0),
            r_bound: RBound::Symmetric,
        })
    }

    pub fn recentered(self) -> Self {
        Self {
            r_bound: RBound::Recentered,
            ..self
        }
    }
}

/// The four parameters `(γ, γ*, g, R)` of `Q = (1/n) Σ ζ_i X_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcentrationParams {
    pub gamma: f64,
    pub gamma_star: f64,
    pub g: f64,
    /// Infinite when the multipliers are unbounded.
    pub r: f64,
    pub n: usize,
    pub dims: Dims,
}

impl ConcentrationParams {
    pub fn is_bounded(&self) -> bool {
        self.r.is_finite()
    }
}

pub fn closed_form_params(
    p: &SamplingDistribution,
    family: &MultiplierFamily,
    n: usize,
) -> Result<ConcentrationParams> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let s2 = family.second_moment_bound;
    if !(s2 >= 0.0 && s2.is_finite()) {
        return Err(Error::invalid("second moment bound must be finite"));
    }
    let nf = n as f64;
    let max_p = p.max_prob();
    let r = match family.abs_bound {
        Some(b) => match family.r_bound {
            RBound::Symmetric => b / nf,
            RBound::Recentered => 2.0 * b / nf,
        },
        None => f64::INFINITY,
    };
    Ok(ConcentrationParams {
        gamma: (p.max_marginal() * s2 / nf).sqrt(),
        gamma_star: (s2 * max_p / nf).sqrt(),
        g: (s2 * max_p / nf).sqrt(),
        r,
        n,
        dims: p.dims(),
    })
}

/// Spectral-norm level exceeded with probability at most `d·e^{-t}`:
/// `2γ + C(g^{1/2}γ^{1/2}(ln d)^{3/4} + γ* t^{1/2} + R^{1/3}γ^{2/3}t^{2/3} + R t)`.
pub fn sharp_tail_threshold(params: &ConcentrationParams, d: usize, t: f64, c: f64) -> f64 {
    let ln_d = (d as f64).ln();
    let p = params;
    let mut extra = (p.g * p.gamma).sqrt() * ln_d.powf(0.75) + p.gamma_star * t.sqrt();
    if t > 0.0 {
        if !p.is_bounded() {
            return f64::INFINITY;
        }
        extra += p.r.cbrt() * p.gamma.powf(2.0 / 3.0) * t.powf(2.0 / 3.0) + p.r * t;
    }
    2.0 * p.gamma + c * extra
}

/// `E‖Q‖ <= 2γ + C(g^{1/2}γ^{1/2}(ln d)^{3/4} + R^{1/3}γ^{2/3}(ln d)^{2/3} + R ln d)`.
pub fn sharp_expectation_bound(params: &ConcentrationParams, d: usize, c: f64) -> f64 {
    let p = params;
    if !p.is_bounded() {
        return f64::INFINITY;
    }
    let ln_d = (d as f64).ln();
    2.0 * p.gamma
        + c * ((p.g * p.gamma).sqrt() * ln_d.powf(0.75)
            + p.r.cbrt() * p.gamma.powf(2.0 / 3.0) * ln_d.powf(2.0 / 3.0)
            + p.r * ln_d)
}

/// Classical matrix Bernstein expectation bound `√(2γ² ln d) + R ln d / 3`.
pub fn bernstein_expectation_bound(params: &ConcentrationParams, d: usize) -> f64 {
    if !params.is_bounded() {
        return f64::INFINITY;
    }
    let ln_d = (d as f64).ln();
    (2.0 * params.gamma * params.gamma * ln_d).sqrt() + params.r * ln_d / 3.0
}

/// Empirical quantile with linear interpolation between order statistics.
/// Sorts `xs` in place.
pub fn quantile(xs: &mut [f64], q: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of an empty sample");
    xs.sort_by(f64::total_cmp);
    let h = q.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo])
}

/// One draw of `(1/n) Σ ζ_i X_i` as a dense matrix.
pub fn sample_multiplier_sum(
    p: &SamplingDistribution,
    multipliers: &Multipliers,
    n: usize,
    seed: u64,
) -> Result<DenseMatrix> {
    multipliers.validate()?;
    let entries = p.sampler()?;
    let mult = multipliers.sampler();
    let mut rng = rng_from_seed(seed);
    Ok(accumulate(&entries, &mult, p.dims(), n, &mut rng))
}

fn accumulate(
    entries: &crate::sampling::EntrySampler,
    mult: &MultiplierSampler,
    dims: Dims,
    n: usize,
    rng: &mut LabRng,
) -> DenseMatrix {
    let mut s = DenseMatrix::zeros(dims);
    let inv_n = 1.0 / n as f64;
    for _ in 0..n {
        let (j, k) = entries.draw(rng);
        let z = mult.draw(rng);
        s.add_at(j, k, z);
    }
    s.as_mut_slice().iter_mut().for_each(|x| *x *= inv_n);
    s
}

/// `reps` independent draws of `‖(1/n) Σ ζ_i X_i‖`; replicate `i` uses the
/// stream `derive_seed(seed, [i])`, so output is independent of scheduling.
pub fn multiplier_norm_samples(
    p: &SamplingDistribution,
    multipliers: &Multipliers,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n == 0 || reps == 0 {
        return Err(Error::invalid("n and reps must be positive"));
    }
    multipliers.validate()?;
    let entries = p.sampler()?;
    let dims = p.dims();
    let one = |rep: usize| {
        let mult = multipliers.sampler();
        let mut rng = rng_from_seed(derive_seed(seed, &[rep as u64]));
        accumulate(&entries, &mult, dims, n, &mut rng)
            .top_singular_value(POWER_TOL, POWER_MAX_ITERS)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok((0..reps).into_par_iter().map(one).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok((0..reps).map(one).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralSummary {
    pub mean: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub reps: usize,
    pub seed: u64,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Monte Carlo summary of `‖(1/n) Σ ζ_i X_i‖`.
pub fn empirical_spectral_norm(
    p: &SamplingDistribution,
    family: &MultiplierFamily,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<SpectralSummary> {
    let samples = multiplier_norm_samples(p, &family.multipliers, n, reps, seed)?;
    let mean = samples.iter().sum::<f64>() / reps as f64;
    let mut sorted = samples.clone();
    Ok(SpectralSummary {
        mean,
        q50: quantile(&mut sorted, 0.5),
        q90: quantile(&mut sorted, 0.9),
        q99: quantile(&mut sorted, 0.99),
        reps,
        seed,
        samples,
    })
}

/// Threshold `C1 σ (ln n)^{1/α} + C2 σ t^{1/α}` for `max_i |ξ_i|` over `n`
/// independent ψ_α variables with norm at most `σ`, failing with probability
/// at most `2e^{-t}`.
pub fn max_psi_alpha_bound(
    sigma: f64,
    alpha: f64,
    n: usize,
    t: f64,
    c1: f64,
    c2: f64,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let inv = 1.0 / alpha;
    Ok(c1 * sigma * (n as f64).ln().powf(inv) + c2 * sigma * t.powf(inv))
}

/// Fraction of `trials` in which `max_{i<=n} |ξ_i|` reaches `threshold`.
pub fn max_exceedance_frequency(
    noise: &NoiseModel,
    n: usize,
    trials: usize,
    threshold: f64,
    seed: u64,
) -> Result<f64> {
    if n == 0 || trials == 0 {
        return Err(Error::invalid("n and trials must be positive"));
    }
    let sampler = noise.sampler();
    let hits = (0..trials)
        .filter(|&trial| {
            let mut rng = rng_from_seed(derive_seed(seed, &[trial as u64]));
            (0..n).any(|_| sampler.draw(&mut rng).abs() >= threshold)
        })
        .count();
    Ok(hits as f64 / trials as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TruncatedVarianceReport {
    pub empirical_var: f64,
    /// `σ²`, the variance of the untruncated noise.
    pub bound: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Checks `Var(φ_y(ξ)) <= σ²` on `samples` draws, passing when the sample
/// variance is at most `σ²(1 + 5/√samples)`.
pub fn truncated_variance_check(
    noise: &NoiseModel,
    y: f64,
    samples: usize,
    seed: u64,
) -> Result<TruncatedVarianceReport> {
    if samples < 10_000 {
        return Err(Error::invalid(format!(
            "need at least 10^4 samples, got {samples}"
        )));
    }
    if !(y >= 0.0) {
        return Err(Error::invalid(format!(
            "truncation level must be >= 0, got {y}"
        )));
    }
    let sampler = noise.sampler();
    let mut rng = rng_from_seed(seed);
    // Welford
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for i in 0..samples {
        let x = sampler.draw(&mut rng).clamp(-y, y);
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let empirical_var = m2 / (samples - 1) as f64;
    let bound = noise.variance();
    Ok(TruncatedVarianceReport {
        empirical_var,
        bound,
        samples,
        pass: empirical_var <= bound * (1.0 + 5.0 / (samples as f64).sqrt()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamsJson {
    pub gamma: f64,
    pub gamma_star: f64,
    pub g: f64,
    /// `null` when unbounded.
    #[serde(rename = "R")]
    pub r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundsJson {
    pub sharp_tail: Option<f64>,
    pub sharp_expectation: Option<f64>,
    pub bernstein: Option<f64>,
}

/// Serializable concentration report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub params: ParamsJson,
    pub bounds: BoundsJson,
    pub empirical: SpectralSummary,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Closed-form parameters, the three bounds at `(t, C)`, and a Monte Carlo summary.
pub fn concentration_report(
    p: &SamplingDistribution,
    family: &MultiplierFamily,
    n: usize,
    reps: usize,
    seed: u64,
    t: f64,
    c: f64,
) -> Result<ConcentrationReport> {
    let params = closed_form_params(p, family, n)?;
    let d = p.dims().sum_dim();
    Ok(ConcentrationReport {
        params: ParamsJson {
            gamma: params.gamma,
            gamma_star: params.gamma_star,
            g: params.g,
            r: finite(params.r),
        },
        bounds: BoundsJson {
            sharp_tail: finite(sharp_tail_threshold(&params, d, t, c)),
            sharp_expectation: finite(sharp_expectation_bound(&params, d, c)),
            bernstein: finite(bernstein_expectation_bound(&params, d)),
        },
        empirical: empirical_spectral_norm(p, family, n, reps, seed)?,
    })
}
