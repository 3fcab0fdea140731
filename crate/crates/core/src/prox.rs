//! Empirical losses over observation sets and the proximal operators of the
//! nuclear norm, the entrywise box `‖X‖∞ <= a`, and their sum.

use crate::error::{check_dims, Error, Result};
use crate::matrix::{svd, DenseMatrix};
use crate::sampling::ObservationSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    /// `(1/n) Σ r_i²`
    Squared,
    /// `(1/n) Σ l_τ(r_i)`; `tau = ∞` is allowed and gives `(1/n) Σ r_i² / 2`.
    Huber { tau: f64 },
    /// `√((1/n) Σ r_i²)`
    SquareRoot,
}

impl LossKind {
    pub fn huber(tau: f64) -> Result<Self> {
        if tau > 0.0 {
            Ok(LossKind::Huber { tau })
        } else {
            Err(Error::invalid(format!(
                "Huber threshold must be positive, got {tau}"
            )))
        }
    }
}

/// `l_τ(x)`: quadratic on `[-τ, τ]`, linear outside.
#[inline]
pub fn huber_value(x: f64, tau: f64) -> f64 {
    let ax = x.abs();
    if ax <= tau {
        0.5 * x * x
    } else {
        tau * ax - 0.5 * tau * tau
    }
}

/// `φ_τ(x) = l_τ'(x)`, the residual clipped to `[-τ, τ]`.
#[inline]
pub fn huber_grad(x: f64, tau: f64) -> f64 {
    x.clamp(-tau, tau)
}

#[inline]
fn residual(a: &DenseMatrix, row: usize, col: usize, y: f64) -> f64 {
    y - a.get(row, col)
}

pub fn empirical_loss(a: &DenseMatrix, obs: &ObservationSet, loss: LossKind) -> Result<f64> {
    check_dims(obs.dims(), a.dims())?;
    let n = obs.len() as f64;
    let recs = obs.records();
    Ok(match loss {
        LossKind::Squared => {
            recs.iter()
                .map(|o| residual(a, o.row, o.col, o.y).powi(2))
                .sum::<f64>()
                / n
        }
        LossKind::Huber { tau } => {
            recs.iter()
                .map(|o| huber_value(residual(a, o.row, o.col, o.y), tau))
                .sum::<f64>()
                / n
        }
        LossKind::SquareRoot => empirical_loss(a, obs, LossKind::Squared)?.sqrt(),
    })
}

/// Gradient of the smooth empirical loss, `-(1/n) Σ ψ(r_i) e_j e_kᵀ` with
/// `ψ(x) = 2x` (squared) or `φ_τ(x)` (Huber). Repeated entries accumulate.
pub fn empirical_gradient(
    a: &DenseMatrix,
    obs: &ObservationSet,
    loss: LossKind,
) -> Result<DenseMatrix> {
    check_dims(obs.dims(), a.dims())?;
    let n = obs.len() as f64;
    let mut g = DenseMatrix::zeros(a.dims());
    match loss {
        LossKind::Squared => {
            for o in obs.records() {
                g.add_at(o.row, o.col, -2.0 * residual(a, o.row, o.col, o.y) / n);
            }
        }
        LossKind::Huber { tau } => {
            for o in obs.records() {
                g.add_at(
                    o.row,
                    o.col,
                    -huber_grad(residual(a, o.row, o.col, o.y), tau) / n,
                );
            }
        }
        LossKind::SquareRoot => {
            return Err(Error::invalid(
                "the square-root loss has no gradient here; solve it through its variational form",
            ))
        }
    }
    Ok(g)
}

/// Singular value soft-thresholding, the prox of `θ‖·‖_*`.
pub fn svt(a: &DenseMatrix, theta: f64) -> Result<DenseMatrix> {
    if !(theta >= 0.0) {
        return Err(Error::invalid(format!(
            "threshold must be >= 0, got {theta}"
        )));
    }
    if theta == 0.0 {
        return Ok(a.clone());
    }
    let dec = svd(a)?;
    Ok(dec.recompose_with(|s| (s - theta).max(0.0)))
}

/// Entrywise clamp to `[-a, a]`.
pub fn project_inf_ball(a: &DenseMatrix, radius: f64) -> DenseMatrix {
    a.map(|x| x.clamp(-radius, radius))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxParams {
    /// Nuclear-norm weight.
    pub lambda: f64,
    /// Radius of the entrywise box.
    pub a: f64,
    pub dykstra_iters: usize,
    pub dykstra_tol: f64,
}

impl ProxParams {
    pub const DEFAULT_ITERS: usize = 200;
    pub const DEFAULT_TOL: f64 = 1e-10;

    pub fn new(lambda: f64, a: f64) -> Self {
        Self {
            lambda,
            a,
            dykstra_iters: Self::DEFAULT_ITERS,
            dykstra_tol: Self::DEFAULT_TOL,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.a > 0.0) {
            return Err(Error::invalid(format!(
                "prox needs lambda >= 0 and a > 0, got lambda = {}, a = {}",
                self.lambda, self.a
            )));
        }
        if self.dykstra_iters == 0 || !(self.dykstra_tol > 0.0) {
            return Err(Error::invalid(
                "Dykstra needs a positive iteration cap and tolerance",
            ));
        }
        Ok(())
    }
}

/// Result of the combined prox; `converged == false` is not an error.
#[derive(Clone, Debug)]
pub struct ProxOutcome {
    pub matrix: DenseMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// Larger of the last change in the feasible iterate and its distance
    /// to the matching nuclear-prox iterate.
    pub residual: f64,
}

/// `½‖X - A‖_F² + λ‖X‖_*`, the objective minimized by the nuclear prox.
pub fn prox_objective(x: &DenseMatrix, a: &DenseMatrix, lambda: f64) -> Result<f64> {
    Ok(0.5 * (x - a).norm_frobenius().powi(2) + lambda * x.norm_nuclear()?)
}

/// Prox of `λ‖·‖_* + ι{‖·‖∞ <= a}` by Dykstra's alternating scheme. Each round
/// ends on the box projection, so the returned matrix is always feasible.
pub fn prox_nuclear_inf(a: &DenseMatrix, params: &ProxParams) -> Result<ProxOutcome> {
    params.validate()?;
    if params.lambda == 0.0 {
        return Ok(ProxOutcome {
            matrix: project_inf_ball(a, params.a),
            iterations: 1,
            converged: true,
            residual: 0.0,
        });
    }
    let mut x = a.clone();
    let mut p = DenseMatrix::zeros(a.dims());
    let mut q = DenseMatrix::zeros(a.dims());
    let mut residual = f64::INFINITY;
    for it in 1..=params.dykstra_iters {
        let y = svt(&(&x + &p), params.lambda)?;
        // the nuclear prox already lies in the box: it is the exact answer
        if it == 1 && y.norm_inf() <= params.a {
            return Ok(ProxOutcome {
                matrix: y,
                iterations: 1,
                converged: true,
                residual: 0.0,
            });
        }
        p = &(&x + &p) - &y;
        let yq = &y + &q;
        let x_next = project_inf_ball(&yq, params.a);
        q = &yq - &x_next;
        // x alone can stall for a few rounds while p and q still move
        residual = (&x_next - &x)
            .norm_frobenius()
            .max((&y - &x_next).norm_frobenius());
        x = x_next;
        if residual <= params.dykstra_tol {
            return Ok(ProxOutcome {
                matrix: x,
                iterations: it,
                converged: true,
                residual,
            });
        }
    }
    Ok(ProxOutcome {
        matrix: x,
        iterations: params.dykstra_iters,
        converged: false,
        residual,
    })
}
