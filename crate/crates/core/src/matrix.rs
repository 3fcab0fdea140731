//! Dense matrices, problem dimensions, norms and the SVD used throughout the lab.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::ops::{Add, Sub};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{check_dims, Error, Result};
use crate::rng::rng_from_seed;
use crate::sampling::SamplingDistribution;

/// Shape of an `m1 x m2` matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    m1: usize,
    m2: usize,
}

impl Dims {
    pub fn new(m1: usize, m2: usize) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::invalid(format!(
                "matrix dimensions must be positive, got {m1}x{m2}"
            )));
        }
        Ok(Self { m1, m2 })
    }

    /// Square shape, `m x m`.
    pub fn square(m: usize) -> Result<Self> {
        Self::new(m, m)
    }

    pub fn rows(&self) -> usize {
        self.m1
    }

    pub fn cols(&self) -> usize {
        self.m2
    }

    /// `M = max(m1, m2)`.
    pub fn max_dim(&self) -> usize {
        self.m1.max(self.m2)
    }

    /// `m = min(m1, m2)`.
    pub fn min_dim(&self) -> usize {
        self.m1.min(self.m2)
    }

    /// `d = m1 + m2`.
    pub fn sum_dim(&self) -> usize {
        self.m1 + self.m2
    }

    /// Number of entries, `m1 * m2`.
    pub fn len(&self) -> usize {
        self.m1 * self.m2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.m2 + col
    }

    pub fn transposed(&self) -> Self {
        Self {
            m1: self.m2,
            m2: self.m1,
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.m1, self.m2)
    }
}

/// Row-major dense real matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    dims: Dims,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn identity(m: usize) -> Result<Self> {
        let dims = Dims::square(m)?;
        Ok(Self::from_fn(dims, |j, k| if j == k { 1.0 } else { 0.0 }))
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for j in 0..dims.rows() {
            for k in 0..dims.cols() {
                data.push(f(j, k));
            }
        }
        Self { dims, data }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dims} matrix, got {}",
                dims.len(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at ({}, {})",
                pos / dims.cols(),
                pos % dims.cols()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m1 = rows.len();
        let m2 = rows.first().map_or(0, Vec::len);
        let dims = Dims::new(m1, m2)?;
        if rows.iter().any(|r| r.len() != m2) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::from_vec(dims, rows.concat())
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let dims = Dims::square(values.len())?;
        Ok(Self::from_fn(
            dims,
            |j, k| if j == k { values[j] } else { 0.0 },
        ))
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[self.dims.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.dims.index(row, col);
        self.data[i] = value;
    }

    #[inline]
    pub(crate) fn add_at(&mut self, row: usize, col: usize, value: f64) {
        let i = self.dims.index(row, col);
        self.data[i] += value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let m2 = self.dims.cols();
        &self.data[j * m2..(j + 1) * m2]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &DenseMatrix) -> Self {
        assert_eq!(self.dims, other.dims, "add_scaled: dimension mismatch");
        Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| x + c * y)
                .collect(),
        }
    }

    pub fn dot(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.dims, other.dims, "dot: dimension mismatch");
        self.data.iter().zip(&other.data).map(|(x, y)| x * y).sum()
    }

    pub fn transpose(&self) -> Self {
        let dims = self.dims.transposed();
        Self::from_fn(dims, |j, k| self.get(k, j))
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<Self> {
        if self.dims.cols() != other.dims.rows() {
            return Err(Error::invalid(format!(
                "cannot multiply {} by {}",
                self.dims, other.dims
            )));
        }
        let dims = Dims::new(self.dims.rows(), other.dims.cols())?;
        let mut out = Self::zeros(dims);
        for j in 0..self.dims.rows() {
            for p in 0..self.dims.cols() {
                let x = self.get(j, p);
                if x == 0.0 {
                    continue;
                }
                for k in 0..dims.cols() {
                    out.add_at(j, k, x * other.get(p, k));
                }
            }
        }
        Ok(out)
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Entrywise maximum norm.
    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    /// Frobenius norm with entry `(j, k)` weighted by the sampling probability `P_jk`.
    pub fn norm_weighted_frobenius(&self, p: &SamplingDistribution) -> Result<f64> {
        check_dims(self.dims, p.dims())?;
        Ok(self
            .data
            .iter()
            .zip(p.probs())
            .map(|(x, w)| x * x * w)
            .sum::<f64>()
            .sqrt())
    }

    pub fn singular_values(&self) -> Result<Vec<f64>> {
        let m = self.to_nalgebra();
        let mut sv: Vec<f64> = m
            .try_svd(false, false, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?
            .singular_values
            .iter()
            .copied()
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        Ok(sv)
    }

    pub fn norm_nuclear(&self) -> Result<f64> {
        Ok(self.singular_values()?.iter().sum())
    }

    pub fn norm_spectral(&self) -> Result<f64> {
        Ok(self.singular_values()?.first().copied().unwrap_or(0.0))
    }

    /// Largest singular value by power iteration on `AᵀA`; stops when the
    /// relative change of the estimate drops below `tol`.
    pub fn top_singular_value(&self, tol: f64, max_iter: usize) -> f64 {
        let (m1, m2) = (self.dims.rows(), self.dims.cols());
        // deterministic, generic start vector
        let mut v: Vec<f64> = (0..m2)
            .map(|k| 1.0 + 0.1 * ((k as f64 + 1.0) * 0.618_033_988_75).fract())
            .collect();
        let mut u = vec![0.0; m1];
        let mut prev = 0.0;
        let mut sigma = 0.0;
        for _ in 0..max_iter {
            let nv = norm2(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            for (j, uj) in u.iter_mut().enumerate() {
                *uj = self.row(j).iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            sigma = norm2(&u);
            if sigma == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x = 0.0);
            for (j, &uj) in u.iter().enumerate() {
                if uj != 0.0 {
                    for (vk, a) in v.iter_mut().zip(self.row(j)) {
                        *vk += a * uj;
                    }
                }
            }
            if (sigma - prev).abs() <= tol * sigma {
                break;
            }
            prev = sigma;
        }
        sigma
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dims.rows(), self.dims.cols(), &self.data)
    }

    /// Writes the matrix as headerless CSV, one line per row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = String::new();
        for j in 0..self.dims.rows() {
            let line: Vec<String> = self.row(j).iter().map(|x| x.to_string()).collect();
            buf.push_str(&line.join(","));
            buf.push('\n');
        }
        write_atomic(path, buf.as_bytes())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        Self::from_rows(&rows).map_err(|e| Error::format(path, e))
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Add for &DenseMatrix {
    type Output = DenseMatrix;

    fn add(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.add_scaled(1.0, rhs)
    }
}

impl Sub for &DenseMatrix {
    type Output = DenseMatrix;

    fn sub(self, rhs: &DenseMatrix) -> DenseMatrix {
        self.add_scaled(-1.0, rhs)
    }
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ` with `s` nonincreasing.
#[derive(Clone, Debug)]
pub struct Svd {
    /// `m1 x m`, orthonormal columns.
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    /// `m2 x m`, orthonormal columns.
    pub v: DenseMatrix,
}

impl Svd {
    /// `U diag(f(s)) Vᵀ`.
    pub fn recompose_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let m1 = self.u.dims().rows();
        let m2 = self.v.dims().rows();
        let dims = Dims { m1, m2 };
        let mut out = DenseMatrix::zeros(dims);
        for (l, &s) in self.singular_values.iter().enumerate() {
            let w = f(s);
            if w == 0.0 {
                continue;
            }
            for j in 0..m1 {
                let uj = w * self.u.get(j, l);
                if uj == 0.0 {
                    continue;
                }
                for k in 0..m2 {
                    out.add_at(j, k, uj * self.v.get(k, l));
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.recompose_with(|s| s)
    }
}

pub fn svd(a: &DenseMatrix) -> Result<Svd> {
    let na = a.to_nalgebra();
    let dec = na
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let (u, vt) = match (dec.u, dec.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Numerical("SVD factors missing".into())),
    };
    let s = dec.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
    let m1 = a.dims().rows();
    let m2 = a.dims().cols();
    let k = order.len();
    let dims_u = Dims::new(m1, k)?;
    let dims_v = Dims::new(m2, k)?;
    Ok(Svd {
        u: DenseMatrix::from_fn(dims_u, |j, l| u[(j, order[l])]),
        singular_values: order.iter().map(|&l| s[l]).collect(),
        v: DenseMatrix::from_fn(dims_v, |kk, l| vt[(order[l], kk)]),
    })
}

/// A planted low-rank matrix `A0 = L Rᵀ` with `‖A0‖∞ = a`.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub left: DenseMatrix,
    pub right: DenseMatrix,
    pub inf_bound: f64,
    pub rank: usize,
    matrix: DenseMatrix,
}

impl GroundTruth {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn dims(&self) -> Dims {
        self.matrix.dims()
    }
}

/// Draws factors with independent uniform(-1, 1) entries and rescales the
/// left factor so the product has entrywise maximum exactly `a` (up to the
/// last ulp, never above).
pub fn generate_low_rank(dims: Dims, rank: usize, a: f64, seed: u64) -> Result<GroundTruth> {
    if rank == 0 || rank > dims.min_dim() {
        return Err(Error::invalid(format!(
            "rank must lie in 1..={} for a {dims} matrix, got {rank}",
            dims.min_dim()
        )));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!(
            "inf-norm bound must be positive, got {a}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    loop {
        let mut draw = |m: usize| {
            let d = Dims::new(m, rank).expect("positive dims");
            DenseMatrix::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
        };
        let left = draw(dims.rows());
        let right = draw(dims.cols());
        let raw = left.matmul(&right.transpose())?;
        let peak = raw.norm_inf();
        if peak == 0.0 {
            continue;
        }
        let mut scale = a / peak;
        loop {
            let left_scaled = left.scaled(scale);
            let matrix = left_scaled.matmul(&right.transpose())?;
            if matrix.norm_inf() <= a {
                return Ok(GroundTruth {
                    left: left_scaled,
                    right,
                    inf_bound: a,
                    rank,
                    matrix,
                });
            }
            scale *= 1.0 - f64::EPSILON;
        }
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy()
        .into_owned();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
