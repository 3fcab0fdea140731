//! Browser bindings for three interactive views: the spectrum of the
//! combined nuclear/box prox, a spectral-norm concentration sweep, and a
//! small completion run. Results cross the boundary as flat `Float64Array`s
//! whose layouts are documented on each export.

use mclab::concentration::{
    bernstein_expectation_bound, closed_form_params, empirical_spectral_norm,
    sharp_expectation_bound, MultiplierFamily,
};
use mclab::prox::{prox_nuclear_inf, ProxParams};
use mclab::rng::derive_seed;
use mclab::solvers::{resolve_tuning, TuningContext};
use mclab::{
    fit, generate_low_rank, sample_observations, Dims, Estimator, EstimatorSpec, NoiseModel,
    SamplingDistribution, SolverConfig, Tuning,
};
use wasm_bindgen::prelude::*;

/// Larger sizes freeze the page.
pub const MAX_DIM: usize = 40;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn dims(m: usize) -> Result<Dims, String> {
    if m > MAX_DIM {
        return Err(format!(
            "dimension is capped at {MAX_DIM} in the demo, got {m}"
        ));
    }
    Dims::square(m).map_err(err)
}

/// Singular values before and after the prox of a random rank-`rank`
/// matrix scaled to `‖A‖∞ = 2·box_radius`, followed by the output's
/// entrywise max. Layout: `[σ_in (m), σ_out (m), ‖X‖∞]`.
pub fn prox_spectrum_values(
    m: usize,
    rank: usize,
    lambda: f64,
    box_radius: f64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let d = dims(m)?;
    let a = generate_low_rank(d, rank, 2.0 * box_radius, seed).map_err(err)?;
    let out = prox_nuclear_inf(a.matrix(), &ProxParams::new(lambda, box_radius)).map_err(err)?;
    let mut v = a.matrix().singular_values().map_err(err)?;
    v.extend(out.matrix.singular_values().map_err(err)?);
    v.push(out.matrix.norm_inf());
    Ok(v)
}

/// Rademacher multiplier sums under uniform sampling, for `points` sample
/// sizes doubling from `n0`. Each row is
/// `[n, empirical mean ‖S‖, sharp expectation bound, Bernstein bound]`.
pub fn concentration_sweep_values(
    m: usize,
    n0: usize,
    points: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let d = dims(m)?;
    if n0 == 0 || points == 0 || reps == 0 || points > 12 {
        return Err("need n0 > 0, reps > 0 and 1..=12 points".into());
    }
    let p = SamplingDistribution::uniform(d);
    let fam = MultiplierFamily::rademacher();
    let mut out = Vec::with_capacity(4 * points);
    for i in 0..points {
        let n = n0 << i;
        let params = closed_form_params(&p, &fam, n).map_err(err)?;
        let emp = empirical_spectral_norm(&p, &fam, n, reps, derive_seed(seed, &[i as u64]))
            .map_err(err)?;
        out.extend([
            n as f64,
            emp.mean,
            sharp_expectation_bound(&params, d.sum_dim(), 1.0),
            bernstein_expectation_bound(&params, d.sum_dim()),
        ]);
    }
    Ok(out)
}

/// Estimator codes used by the page: 0 least squares, 1 Huber, 2 square root.
fn estimator(code: u32) -> Result<Estimator, String> {
    match code {
        0 => Ok(Estimator::LeastSquares),
        1 => Ok(Estimator::Huber),
        2 => Ok(Estimator::SquareRoot),
        c => Err(format!("unknown estimator code {c}")),
    }
}

/// Completes an `m×m` rank-`rank` matrix from `n` Student-t corrupted
/// entries with the theorem rule at constant `c`. Layout:
/// `[truth (m²), estimate (m²), relative Frobenius error, λ, iterations, converged]`,
/// matrices row-major.
pub fn complete_values(
    m: usize,
    rank: usize,
    n: usize,
    sigma: f64,
    estimator_code: u32,
    c: f64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let d = dims(m)?;
    if n > 20_000 {
        return Err("sample size is capped at 20000 in the demo".into());
    }
    let truth = generate_low_rank(d, rank, 1.0, derive_seed(seed, &[0])).map_err(err)?;
    let p = SamplingDistribution::uniform(d);
    let noise = NoiseModel::student_t(mclab::sampling::DEFAULT_STUDENT_DF, sigma).map_err(err)?;
    let obs = sample_observations(&truth, &p, &noise, n, derive_seed(seed, &[1])).map_err(err)?;
    let spec = EstimatorSpec {
        estimator: estimator(estimator_code)?,
        lambda: None,
        tau: None,
        a: 1.0,
        tuning: Tuning::TheoremRule { c },
    };
    let ctx = TuningContext {
        sigma: Some(sigma),
        noise: Some(&noise),
        sampling: Some(&p),
        seed: derive_seed(seed, &[2]),
    };
    let spec = resolve_tuning(&spec, d, n, &ctx).map_err(err)?;
    let res = fit(&obs, &spec, &SolverConfig::default()).map_err(err)?;
    let rel = (&res.estimate - truth.matrix()).norm_frobenius() / truth.matrix().norm_frobenius();
    let mut v = truth.matrix().as_slice().to_vec();
    v.extend_from_slice(res.estimate.as_slice());
    v.extend([
        rel,
        spec.lambda.unwrap_or(f64::NAN),
        res.iterations as f64,
        f64::from(u8::from(res.converged)),
    ]);
    Ok(v)
}

#[wasm_bindgen]
pub fn prox_spectrum(
    m: usize,
    rank: usize,
    lambda: f64,
    box_radius: f64,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    prox_spectrum_values(m, rank, lambda, box_radius, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn concentration_sweep(
    m: usize,
    n0: usize,
    points: usize,
    reps: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    concentration_sweep_values(m, n0, points, reps, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn complete(
    m: usize,
    rank: usize,
    n: usize,
    sigma: f64,
    estimator_code: u32,
    c: f64,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    complete_values(m, rank, n, sigma, estimator_code, c, seed.into()).map_err(|e| JsError::new(&e))
}
