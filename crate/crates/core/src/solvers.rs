//! The three nuclear-norm penalized estimators over the box `‖A‖∞ <= a`:
//! least squares and Huber by accelerated proximal gradient with backtracking
//! and restart, and the square-root estimator through its concomitant
//! (variational) form, which reduces every outer step to a least-squares solve.

use serde::{Deserialize, Serialize};

use crate::concentration::{multiplier_norm_samples, quantile, Multipliers};
use crate::error::{check_dims, Error, Result};
use crate::matrix::{DenseMatrix, Dims};
use crate::prox::{empirical_gradient, empirical_loss, prox_nuclear_inf, LossKind, ProxParams};
use crate::sampling::{NoiseModel, ObservationSet, SamplingDistribution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Estimator {
    #[serde(alias = "ls")]
    LeastSquares,
    Huber,
    #[serde(alias = "sqrt")]
    SquareRoot,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::LeastSquares => "leastSquares",
            Estimator::Huber => "huber",
            Estimator::SquareRoot => "squareRoot",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" | "leastSquares" => Ok(Estimator::LeastSquares),
            "huber" => Ok(Estimator::Huber),
            "sqrt" | "squareRoot" => Ok(Estimator::SquareRoot),
            other => Err(Error::invalid(format!("unknown estimator {other:?}"))),
        }
    }
}

/// How λ (and τ for Huber) are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "camelCase", deny_unknown_fields)]
pub enum Tuning {
    Explicit,
    /// Order-optimal rules with the unspecified universal constant set to `c`.
    TheoremRule {
        c: f64,
    },
    /// Three times a simulated quantile of the loss gradient's spectral norm at the truth.
    Pilot {
        reps: usize,
        quantile: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorSpec {
    pub estimator: Estimator,
    pub lambda: Option<f64>,
    /// Huber threshold; ignored by the other estimators.
    pub tau: Option<f64>,
    pub a: f64,
    pub tuning: Tuning,
}

impl EstimatorSpec {
    pub fn explicit(estimator: Estimator, lambda: f64, tau: Option<f64>, a: f64) -> Self {
        Self {
            estimator,
            lambda: Some(lambda),
            tau,
            a,
            tuning: Tuning::Explicit,
        }
    }

    fn resolved(&self) -> Result<(f64, Option<f64>)> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!(
                "box radius a must be positive, got {}",
                self.a
            )));
        }
        let lambda = self
            .lambda
            .ok_or_else(|| Error::invalid("lambda has not been resolved"))?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let tau = match self.estimator {
            Estimator::Huber => {
                let tau = self
                    .tau
                    .ok_or_else(|| Error::invalid("Huber threshold tau has not been resolved"))?;
                if !(tau > 0.0) {
                    return Err(Error::invalid(format!("tau must be positive, got {tau}")));
                }
                Some(tau)
            }
            _ => None,
        };
        Ok((lambda, tau))
    }

    fn loss(&self) -> Result<LossKind> {
        let (_, tau) = self.resolved()?;
        Ok(match self.estimator {
            Estimator::LeastSquares => LossKind::Squared,
            Estimator::Huber => LossKind::Huber {
                tau: tau.unwrap_or(f64::INFINITY),
            },
            Estimator::SquareRoot => LossKind::SquareRoot,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol_rel_objective: f64,
    pub tol_kkt: f64,
    /// Initial step; `None` uses `n / (2 · max entry multiplicity)`.
    pub step_init: Option<f64>,
    pub backtrack_factor: f64,
    /// Lower bound on σ̂; `None` uses `1e-8 · a`.
    pub sqrt_sigma_floor: Option<f64>,
    pub sqrt_outer_iters: usize,
    pub dykstra_iters: usize,
    pub dykstra_tol: f64,
    /// The KKT residual is evaluated every this many iterations.
    pub kkt_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol_rel_objective: 1e-13,
            tol_kkt: 1e-7,
            step_init: None,
            backtrack_factor: 0.5,
            sqrt_sigma_floor: None,
            sqrt_outer_iters: 100,
            dykstra_iters: ProxParams::DEFAULT_ITERS,
            dykstra_tol: ProxParams::DEFAULT_TOL,
            kkt_every: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.max_iters == 0
            || self.sqrt_outer_iters == 0
            || self.dykstra_iters == 0
            || self.kkt_every == 0
        {
            return Err(Error::invalid("iteration counts must be positive"));
        }
        if !positive(self.tol_rel_objective)
            || !positive(self.tol_kkt)
            || !positive(self.dykstra_tol)
        {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::invalid("backtrack factor must lie in (0, 1)"));
        }
        if self.step_init.is_some_and(|s| !positive(s)) {
            return Err(Error::invalid("initial step must be positive"));
        }
        if self.sqrt_sigma_floor.is_some_and(|s| !positive(s)) {
            return Err(Error::invalid("sigma floor must be positive"));
        }
        Ok(())
    }

    fn prox(&self, lambda: f64, a: f64) -> ProxParams {
        ProxParams {
            lambda,
            a,
            dykstra_iters: self.dykstra_iters,
            dykstra_tol: self.dykstra_tol,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub estimate: DenseMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub kkt_residual: f64,
    /// Noise level used in the final inner problem (square-root only).
    pub sigma_hat: Option<f64>,
    /// Set when σ̂ was held at its floor.
    pub sigma_at_floor: bool,
    pub restarts: usize,
}

/// λ and τ from the order-optimal tuning rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TunedParams {
    pub lambda: f64,
    pub tau: Option<f64>,
}

/// Theorem tuning with natural logarithms and `c` standing in for the
/// unspecified universal constants:
///
/// * Huber: `λ = c·max(σ,a)/√(nm)`, `τ = max(σ,a)/(ln d)² · √(n/m)`
/// * least squares: `λ = c·σ/√(nm)`
/// * square root: `λ = c/√(nm)` (σ-free)
pub fn tune_from_theorem(
    estimator: Estimator,
    c: f64,
    dims: Dims,
    n: usize,
    sigma: Option<f64>,
    a: f64,
) -> Result<TunedParams> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!(
            "rule constant must be positive, got {c}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let m = dims.min_dim() as f64;
    let nf = n as f64;
    let ln_d = (dims.sum_dim() as f64).ln();
    let base = (1.0 / (nf * m)).sqrt();
    match estimator {
        Estimator::Huber => {
            let sigma = sigma.ok_or_else(|| {
                Error::invalid("the Huber rule scales with max(sigma, a) and needs sigma")
            })?;
            let scale = sigma.max(a);
            Ok(TunedParams {
                lambda: c * scale * base,
                tau: Some(scale / (ln_d * ln_d) * (nf / m).sqrt()),
            })
        }
        Estimator::LeastSquares => {
            let sigma = sigma.ok_or_else(|| {
                Error::invalid("the least-squares rule needs the noise level sigma")
            })?;
            Ok(TunedParams {
                lambda: c * sigma * base,
                tau: None,
            })
        }
        Estimator::SquareRoot => Ok(TunedParams {
            lambda: c * base,
            tau: None,
        }),
    }
}

/// Three times the `quantile` of `‖(1/n) Σ ζ_i X_i‖` over `reps` simulations,
/// with `ζ_i = φ_τ(ξ_i)` when `tau` is given and `ζ_i = ξ_i` otherwise.
pub fn pilot_lambda(
    p: &SamplingDistribution,
    noise: &NoiseModel,
    n: usize,
    tau: Option<f64>,
    reps: usize,
    quantile_level: f64,
    seed: u64,
) -> Result<f64> {
    if reps < 100 {
        return Err(Error::invalid(format!(
            "pilot calibration needs at least 100 reps, got {reps}"
        )));
    }
    if !(quantile_level > 0.0 && quantile_level < 1.0) {
        return Err(Error::invalid(format!(
            "quantile must lie in (0, 1), got {quantile_level}"
        )));
    }
    let mult = match tau {
        Some(tau) => Multipliers::Truncated { noise: *noise, tau },
        None => Multipliers::Noise(*noise),
    };
    let mut norms = multiplier_norm_samples(p, &mult, n, reps, seed)?;
    Ok(3.0 * quantile(&mut norms, quantile_level))
}

/// Inputs needed to resolve a non-explicit tuning mode.
#[derive(Clone, Copy, Debug)]
pub struct TuningContext<'a> {
    /// Noise level known to the analyst, if any.
    pub sigma: Option<f64>,
    /// Noise law used for pilot simulation.
    pub noise: Option<&'a NoiseModel>,
    pub sampling: Option<&'a SamplingDistribution>,
    pub seed: u64,
}

/// Fills in λ (and τ) according to `spec.tuning`. Explicit values already in
/// `spec` take precedence.
///
/// Pilot mode applies `λ >= 3‖S‖` with `S = (1/n) Σ ζ_i X_i`, where `ζ_i` is
/// the noise for least squares and its `φ_τ` clipping for Huber (τ from the
/// theorem rule). The square-root condition `λ >= 3‖S‖ / ‖ξ‖₂` is scale free,
/// so it is simulated with unit-σ noise and `‖ξ‖₂ ≈ 1`.
pub fn resolve_tuning(
    spec: &EstimatorSpec,
    dims: Dims,
    n: usize,
    ctx: &TuningContext<'_>,
) -> Result<EstimatorSpec> {
    let mut out = *spec;
    match spec.tuning {
        Tuning::Explicit => {}
        Tuning::TheoremRule { c } => {
            let t = tune_from_theorem(spec.estimator, c, dims, n, ctx.sigma, spec.a)?;
            out.lambda = out.lambda.or(Some(t.lambda));
            out.tau = out.tau.or(t.tau);
        }
        Tuning::Pilot { reps, quantile } => {
            let noise = ctx
                .noise
                .ok_or_else(|| Error::invalid("pilot tuning needs a noise model"))?;
            let uniform;
            let p = match ctx.sampling {
                Some(p) => p,
                None => {
                    uniform = SamplingDistribution::uniform(dims);
                    &uniform
                }
            };
            let sigma = ctx.sigma.unwrap_or(noise.sigma());
            let tau = match spec.estimator {
                Estimator::Huber => out.tau.or(tune_from_theorem(
                    Estimator::Huber,
                    1.0,
                    dims,
                    n,
                    Some(sigma),
                    spec.a,
                )?
                .tau),
                _ => None,
            };
            let lambda = match spec.estimator {
                Estimator::Huber => pilot_lambda(p, noise, n, tau, reps, quantile, ctx.seed)?,
                Estimator::LeastSquares => {
                    pilot_lambda(p, noise, n, None, reps, quantile, ctx.seed)?
                }
                Estimator::SquareRoot => {
                    if noise.sigma() == 0.0 {
                        return Err(Error::invalid(
                            "square-root pilot tuning needs a nondegenerate noise law",
                        ));
                    }
                    let unit = NoiseModel::new(noise.kind(), 1.0)?;
                    pilot_lambda(p, &unit, n, None, reps, quantile, ctx.seed)?
                }
            };
            out.lambda = out.lambda.or(Some(lambda));
            out.tau = tau;
        }
    }
    Ok(out)
}

fn auto_step(obs: &ObservationSet) -> f64 {
    obs.len() as f64 / (2.0 * obs.max_multiplicity().max(1) as f64)
}

/// Fixed-point residual `‖Â − prox(Â − s∇L(Â))‖_F / (1 + ‖Â‖_F)` at step `s`.
fn fixed_point_residual(
    estimate: &DenseMatrix,
    obs: &ObservationSet,
    loss: LossKind,
    lambda: f64,
    a: f64,
    step: f64,
    config: &SolverConfig,
) -> Result<f64> {
    let g = empirical_gradient(estimate, obs, loss)?;
    let target = estimate.add_scaled(-step, &g);
    let p = prox_nuclear_inf(&target, &config.prox(step * lambda, a))?;
    Ok((estimate - &p.matrix).norm_frobenius() / (1.0 + estimate.norm_frobenius()))
}

/// Optimality certificate at the reference step `n / (2 · max multiplicity)`.
/// The square-root estimator is certified on its final least-squares problem
/// (weight `2 σ̂ λ`).
pub fn kkt_residual(
    result: &SolveResult,
    obs: &ObservationSet,
    spec: &EstimatorSpec,
) -> Result<f64> {
    kkt_residual_with(result, obs, spec, &SolverConfig::default())
}

pub fn kkt_residual_with(
    result: &SolveResult,
    obs: &ObservationSet,
    spec: &EstimatorSpec,
    config: &SolverConfig,
) -> Result<f64> {
    check_dims(obs.dims(), result.estimate.dims())?;
    let (lambda, _) = spec.resolved()?;
    let (loss, lambda) = match spec.estimator {
        Estimator::SquareRoot => {
            let s = result
                .sigma_hat
                .ok_or_else(|| Error::invalid("square-root result carries no sigma_hat"))?;
            (LossKind::Squared, 2.0 * s * lambda)
        }
        _ => (spec.loss()?, lambda),
    };
    let step = config.step_init.unwrap_or_else(|| auto_step(obs));
    fixed_point_residual(&result.estimate, obs, loss, lambda, spec.a, step, config)
}

fn objective(
    x: &DenseMatrix,
    obs: &ObservationSet,
    loss: LossKind,
    lambda: f64,
) -> Result<(f64, f64)> {
    let l = empirical_loss(x, obs, loss)?;
    let nuc = if lambda == 0.0 {
        0.0
    } else {
        x.norm_nuclear()?
    };
    Ok((l, l + lambda * nuc))
}

/// Accelerated proximal gradient on `L(A) + λ‖A‖_*` over the box, with
/// backtracking and a restart whenever the objective would increase.
fn fista(
    obs: &ObservationSet,
    loss: LossKind,
    lambda: f64,
    a: f64,
    config: &SolverConfig,
    init: DenseMatrix,
) -> Result<SolveResult> {
    let ref_step = config.step_init.unwrap_or_else(|| auto_step(obs));
    let mut step = ref_step;
    let mut x = crate::prox::project_inf_ball(&init, a);
    let (_, mut fx) = objective(&x, obs, loss, lambda)?;
    let mut y = x.clone();
    let mut momentum_on = false;
    let mut t = 1.0f64;
    let mut trace = vec![fx];
    let mut converged = false;
    let mut restarts = 0;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;

    while iterations < config.max_iters {
        iterations += 1;
        let gy = empirical_gradient(&y, obs, loss)?;
        let ly = empirical_loss(&y, obs, loss)?;
        let z = loop {
            let target = y.add_scaled(-step, &gy);
            let z = prox_nuclear_inf(&target, &config.prox(step * lambda, a))?.matrix;
            let lz = empirical_loss(&z, obs, loss)?;
            let d = &z - &y;
            let model = ly + gy.dot(&d) + d.dot(&d) / (2.0 * step);
            if lz <= model + 1e-14 * ly.abs().max(1e-300) || step < 1e-12 * ref_step {
                break z;
            }
            step *= config.backtrack_factor;
        };
        let (_, fz) = objective(&z, obs, loss, lambda)?;

        if fz > fx && momentum_on {
            // drop momentum and take a plain proximal step from x next
            restarts += 1;
            momentum_on = false;
            t = 1.0;
            y = x.clone();
            continue;
        }
        // A plain proximal step descends in exact arithmetic, so when fz > fx
        // here the increase is objective round-off and the step is kept.
        let stalled = fz >= fx;

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = z.add_scaled(beta, &(&z - &x));
        momentum_on = true;
        let rel = (fx - fz) / fx.abs().max(1e-300);
        x = z;
        fx = fz;
        t = t_next;
        trace.push(fx);

        if stalled || rel <= config.tol_rel_objective || iterations % config.kkt_every == 0 {
            kkt = fixed_point_residual(&x, obs, loss, lambda, a, ref_step, config)?;
            if kkt <= config.tol_kkt {
                converged = true;
                break;
            }
        }
    }
    if !kkt.is_finite() || !converged {
        kkt = fixed_point_residual(&x, obs, loss, lambda, a, ref_step, config)?;
    }
    Ok(SolveResult {
        estimate: x,
        iterations,
        converged,
        objective_trace: trace,
        kkt_residual: kkt,
        sigma_hat: None,
        sigma_at_floor: false,
        restarts,
    })
}

/// Solves the estimator described by `spec`, whose λ (and τ) must already be set.
pub fn fit(
    obs: &ObservationSet,
    spec: &EstimatorSpec,
    config: &SolverConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let (lambda, _) = spec.resolved()?;
    let zero = DenseMatrix::zeros(obs.dims());
    match spec.estimator {
        Estimator::LeastSquares | Estimator::Huber => {
            fista(obs, spec.loss()?, lambda, spec.a, config, zero)
        }
        Estimator::SquareRoot => fit_square_root(obs, lambda, spec.a, config, zero),
    }
}

/// As [`fit`], starting from `init` instead of zero.
pub fn fit_from(
    obs: &ObservationSet,
    spec: &EstimatorSpec,
    config: &SolverConfig,
    init: DenseMatrix,
) -> Result<SolveResult> {
    config.validate()?;
    check_dims(obs.dims(), init.dims())?;
    let (lambda, _) = spec.resolved()?;
    match spec.estimator {
        Estimator::LeastSquares | Estimator::Huber => {
            fista(obs, spec.loss()?, lambda, spec.a, config, init)
        }
        Estimator::SquareRoot => fit_square_root(obs, lambda, spec.a, config, init),
    }
}

/// Alternates `σ̂ = max(√q(A), floor)` with the least-squares problem at
/// weight `2 σ̂ λ`, using `√q = min_s q/(2s) + s/2`.
fn fit_square_root(
    obs: &ObservationSet,
    lambda: f64,
    a: f64,
    config: &SolverConfig,
    init: DenseMatrix,
) -> Result<SolveResult> {
    let floor = config.sqrt_sigma_floor.unwrap_or(1e-8 * a);
    let sqrt_objective = |x: &DenseMatrix| -> Result<f64> {
        let (_, f) = objective(x, obs, LossKind::SquareRoot, lambda)?;
        Ok(f)
    };
    let mut estimate = crate::prox::project_inf_ball(&init, a);
    let raw = empirical_loss(&estimate, obs, LossKind::SquareRoot)?;
    let mut sigma = raw.max(floor);
    let mut trace = vec![sqrt_objective(&estimate)?];
    let mut iterations = 0;
    let mut restarts = 0;
    let mut converged = false;
    let mut inner_kkt = f64::INFINITY;
    let mut at_floor = raw < floor;

    for _ in 0..config.sqrt_outer_iters {
        let inner = fista(
            obs,
            LossKind::Squared,
            2.0 * sigma * lambda,
            a,
            config,
            estimate,
        )?;
        iterations += inner.iterations;
        restarts += inner.restarts;
        inner_kkt = inner.kkt_residual;
        estimate = inner.estimate;
        trace.push(sqrt_objective(&estimate)?);
        let raw = empirical_loss(&estimate, obs, LossKind::SquareRoot)?;
        at_floor = raw < floor;
        let next = raw.max(floor);
        if (next - sigma).abs() <= config.tol_rel_objective.max(1e-10) * sigma && inner.converged {
            converged = true;
            break;
        }
        sigma = next;
    }
    Ok(SolveResult {
        estimate,
        iterations,
        converged,
        objective_trace: trace,
        kkt_residual: inner_kkt,
        sigma_hat: Some(sigma),
        sigma_at_floor: at_floor,
        restarts,
    })
}
