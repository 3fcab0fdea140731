//! Reference computations that share no code with the library beyond its
//! data types. Everything here is deliberately slow and generic.

#![allow(dead_code)]

use mclab::{DenseMatrix, Dims, ObservationSet, SamplingDistribution};
use nalgebra::DMatrix;

pub fn to_na(a: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.dims().rows(), a.dims().cols(), a.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(Dims::new(m.nrows(), m.ncols()).unwrap(), |j, k| m[(j, k)])
}

pub fn nuclear(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().sum()
}

/// `½‖X − A‖² + λ‖X‖_*`.
pub fn prox_primal(x: &DMatrix<f64>, a: &DMatrix<f64>, lambda: f64) -> f64 {
    0.5 * (x - a).norm_squared() + lambda * nuclear(x)
}

/// Euclidean projection onto `{W : ‖W‖ <= λ}` by clipping singular values.
fn project_spectral_ball(w: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut svd = w.clone().svd(true, true);
    for s in svd.singular_values.iter_mut() {
        *s = s.min(lambda);
    }
    svd.recompose().unwrap()
}

/// Bounds on `min_{‖X‖∞ <= r} ½‖X − A‖² + λ‖X‖_*` from projected gradient
/// ascent on the dual `max_{‖W‖ <= λ} min_{‖X‖∞ <= r} ½‖X − A‖² + ⟨W, X⟩`.
///
/// The inner minimizer is `X(W) = clamp(A − W)`, the dual gradient is `X(W)`
/// with Lipschitz constant 1, and `X(W)` is primal feasible, so each iterate
/// yields a certified `(lower, upper)` pair. `radius = ∞` gives plain SVT.
pub fn prox_bounds(a: &DenseMatrix, lambda: f64, radius: f64, gap_tol: f64) -> (f64, f64) {
    let a = to_na(a);
    let clamp = |m: DMatrix<f64>| m.map(|v| v.clamp(-radius, radius));
    let dual = |w: &DMatrix<f64>| {
        let x = clamp(&a - w);
        (0.5 * (&x - &a).norm_squared() + w.dot(&x), x)
    };
    let mut w = DMatrix::zeros(a.nrows(), a.ncols());
    let mut v = w.clone();
    let mut t = 1.0f64;
    let (mut lower, mut upper) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..200_000 {
        // only points of the spectral ball give valid lower bounds
        let (dw, xw) = dual(&w);
        lower = lower.max(dw);
        upper = upper.min(prox_primal(&xw, &a, lambda));
        if upper - lower <= gap_tol {
            break;
        }
        let (_, xv) = dual(&v);
        let w_next = project_spectral_ball(&(&v + &xv), lambda);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = &w_next + (&w_next - &w) * ((t - 1.0) / t_next);
        w = w_next;
        t = t_next;
    }
    (lower, upper)
}

/// Central differences of `f` at every entry of `x`.
pub fn finite_difference_gradient(
    x: &DenseMatrix,
    h: f64,
    f: impl Fn(&DenseMatrix) -> f64,
) -> DenseMatrix {
    let dims = x.dims();
    DenseMatrix::from_fn(dims, |j, k| {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus.set(j, k, x.get(j, k) + h);
        minus.set(j, k, x.get(j, k) - h);
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// `(1/n) Σ ρ(y_i − A[j_i, k_i])` computed record by record.
pub fn direct_loss(a: &DenseMatrix, obs: &ObservationSet, rho: impl Fn(f64) -> f64) -> f64 {
    let recs = obs.records();
    recs.iter()
        .map(|o| rho(o.y - a.get(o.row, o.col)))
        .sum::<f64>()
        / recs.len() as f64
}

fn unit(len: usize, i: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(len, 1);
    e[(i, 0)] = 1.0;
    e
}

/// `(γ, γ*, g, R)` by enumerating every location `X = e_j e_kᵀ` with its mass,
/// building `E[QQᵀ]`, `E[QᵀQ]` and `Cov(vec Q)` densely, and maximizing the
/// bilinear variance by alternating eigen-steps from every coordinate start.
pub fn brute_force_params(
    p: &SamplingDistribution,
    second_moment: f64,
    abs_bound: Option<f64>,
    n: usize,
) -> (f64, f64, f64, f64) {
    let dims = p.dims();
    let (m1, m2) = (dims.rows(), dims.cols());
    let nf = n as f64;
    let mut qqt = DMatrix::zeros(m1, m1);
    let mut qtq = DMatrix::zeros(m2, m2);
    let mut cov = DMatrix::zeros(m1 * m2, m1 * m2);
    let mut r: f64 = 0.0;
    for j in 0..m1 {
        for k in 0..m2 {
            let pjk = p.prob(j, k);
            let x = unit(m1, j) * unit(m2, k).transpose();
            let w = second_moment * pjk / nf;
            qqt += &x * x.transpose() * w;
            qtq += x.transpose() * &x * w;
            let vx = DMatrix::from_column_slice(m1 * m2, 1, x.transpose().as_slice());
            cov += &vx * vx.transpose() * w;
            if pjk > 0.0 {
                let spec = x.singular_values().max();
                r = r.max(abs_bound.map_or(f64::INFINITY, |b| b * spec / nf));
            }
        }
    }
    let top = |m: DMatrix<f64>| m.symmetric_eigen().eigenvalues.max();
    let gamma = top(qqt).max(top(qtq)).sqrt();
    let g = top(cov.clone()).sqrt();

    // E|yᵀ Q z|² = (y ⊗ z)ᵀ Cov (y ⊗ z) with vec in row-major order
    let quad = |y: &DMatrix<f64>, z: &DMatrix<f64>| {
        let v = y.kronecker(z);
        (v.transpose() * &cov * &v)[(0, 0)]
    };
    let best_partner = |fixed: &DMatrix<f64>, fixed_is_left: bool| {
        let len = if fixed_is_left { m2 } else { m1 };
        let mut form = DMatrix::zeros(len, len);
        for a in 0..len {
            for b in 0..len {
                let (ea, eb) = (unit(len, a), unit(len, b));
                let (va, vb) = if fixed_is_left {
                    (fixed.kronecker(&ea), fixed.kronecker(&eb))
                } else {
                    (ea.kronecker(fixed), eb.kronecker(fixed))
                };
                form[(a, b)] = (va.transpose() * &cov * vb)[(0, 0)];
            }
        }
        let eig = form.symmetric_eigen();
        let i = eig.eigenvalues.imax();
        DMatrix::from_column_slice(len, 1, eig.eigenvectors.column(i).as_slice())
    };
    let mut gamma_star2: f64 = 0.0;
    for j in 0..m1 {
        let mut y = unit(m1, j);
        let mut z = best_partner(&y, true);
        for _ in 0..5 {
            y = best_partner(&z, false);
            z = best_partner(&y, true);
        }
        gamma_star2 = gamma_star2.max(quad(&y, &z));
    }
    (gamma, gamma_star2.sqrt(), g, r)
}

/// Spectral norm through a full SVD.
pub fn spectral(a: &DenseMatrix) -> f64 {
    to_na(a).singular_values().max()
}
