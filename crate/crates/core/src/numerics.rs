//! Seeded sampling and the small dense linear-algebra kernel used by the
//! generators and learners.
//!
//! The generator is ChaCha8 seeded from a single `u64`. Child generators are
//! derived with [`Rng::split`], which hashes the parent *seed* (not its current
//! stream position) together with a label, so the derivation tree is stable no
//! matter how many draws a parent has already made. Normal draws use the
//! ziggurat sampler from `rand_distr`; changing it would change every pinned
//! seed in the test suite.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Pivots in `(-PSD_TOLERANCE, 0]` are treated as rounding noise.
pub const PSD_TOLERANCE: f64 = 1e-10;
const CHOLESKY_JITTER: f64 = 1e-12;
const ORTHONORMAL_RETRIES: usize = 16;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seedable random stream with deterministic labelled children.
#[derive(Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl fmt::Debug for Rng {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Rng").field("seed", &self.seed).finish()
    }
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator whose seed is a function of `(self.seed, label)` only.
    pub fn split(&self, label: &str) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(fnv1a(label))))
    }

    /// Shorthand for `split("{label}/{index}")`.
    pub fn split_indexed(&self, label: &str, index: usize) -> Rng {
        self.split(&format!("{label}/{index}"))
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn next_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn next_below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

/// `n` draws from the half-open interval `[lo, hi)`.
pub fn sample_uniform(rng: &mut Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo < hi, "sample_uniform: lo must be below hi");
    (0..n)
        .map(|_| {
            let v = lo + (hi - lo) * rng.next_f64();
            if v >= hi {
                hi.next_down()
            } else {
                v
            }
        })
        .collect()
}

/// `n` i.i.d. standard normal draws.
pub fn sample_normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    assert!(n >= 1, "sample_normal: n must be at least 1");
    (0..n).map(|_| rng.next_normal()).collect()
}

/// `n` Bernoulli(p) draws encoded as 0/1.
pub fn sample_bernoulli(rng: &mut Rng, p: f64, n: usize) -> Vec<u8> {
    assert!(
        (0.0..=1.0).contains(&p),
        "sample_bernoulli: p outside [0, 1]"
    );
    (0..n).map(|_| u8::from(rng.next_f64() < p)).collect()
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice yields `0 x 0`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `(self + selfᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self[(i, j)] + self[(j, i)])
        })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.max_abs_diff(&self.transpose())
    }

    /// New matrix made of the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Q factor of a Householder QR of a square matrix, with column signs fixed
/// so that `diag(R) >= 0`. The identity maps to itself.
pub fn qr_orthonormal(g: &Matrix) -> Result<Matrix> {
    let n = g.rows();
    if g.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: g.cols(),
        });
    }
    let scale = (0..n)
        .map(|j| g.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if scale == 0.0 || !g.is_finite() {
        return Err(Error::SingularInput);
    }

    let mut r = g.clone();
    let mut q = Matrix::identity(n);
    let mut v = vec![0.0; n];
    for k in 0..n {
        let norm = (k..n).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale {
            return Err(Error::SingularInput);
        }
        let x0 = r[(k, k)];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        for i in k..n {
            v[i] = r[(i, k)];
        }
        v[k] -= alpha;
        let vv: f64 = (k..n).map(|i| v[i] * v[i]).sum();

        // R <- H R on rows k.., H = I - 2 v vᵀ / vᵀv
        for j in k..n {
            let s: f64 = (k..n).map(|i| v[i] * r[(i, j)]).sum::<f64>() * 2.0 / vv;
            for i in k..n {
                r[(i, j)] -= s * v[i];
            }
        }
        // Q <- Q H on columns k..
        for i in 0..n {
            let s: f64 = (k..n).map(|l| q[(i, l)] * v[l]).sum::<f64>() * 2.0 / vv;
            for l in k..n {
                q[(i, l)] -= s * v[l];
            }
        }
    }
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            for i in 0..n {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }
    Ok(q)
}

/// Random orthonormal matrix: Q factor of a matrix of N(0, 1) entries.
/// Singular draws are regenerated from the same stream.
pub fn random_orthonormal(rng: &mut Rng, d: usize) -> Result<Matrix> {
    for _ in 0..ORTHONORMAL_RETRIES {
        let g = Matrix::from_vec(d, d, sample_normal(rng, d * d))?;
        match qr_orthonormal(&g) {
            Err(Error::SingularInput) => continue,
            other => return other,
        }
    }
    Err(Error::SingularInput)
}

fn factor(a: &Matrix, jitter: f64, clamp: bool) -> std::result::Result<Matrix, (usize, f64)> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)] + jitter;
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot <= 0.0 || !pivot.is_finite() {
            if clamp && pivot > -PSD_TOLERANCE {
                // Zero pivot of a PSD matrix: the rest of the column is zero too.
                continue;
            }
            return Err((j, pivot));
        }
        let root = pivot.sqrt();
        l[(j, j)] = root;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

fn check_square(a: &Matrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            actual: a.cols(),
        });
    }
    Ok(())
}

/// Lower-triangular `L` with `L Lᵀ = sigma` for a symmetric PSD matrix.
///
/// A pivot in `(-1e-10, 0]` triggers one retry with `1e-12` added to the
/// diagonal; pivots that are still non-positive are clamped to zero. Anything
/// more negative is [`Error::NotPsd`].
pub fn cholesky(sigma: &Matrix) -> Result<Matrix> {
    check_square(sigma)?;
    match factor(sigma, 0.0, false) {
        Ok(l) => Ok(l),
        Err((_, pivot)) if pivot > -PSD_TOLERANCE => factor(sigma, CHOLESKY_JITTER, true)
            .map_err(|(index, pivot)| Error::NotPsd { index, pivot }),
        Err((index, pivot)) => Err(Error::NotPsd { index, pivot }),
    }
}

/// Solves `L Lᵀ x = b` given the lower Cholesky factor.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - (0..i).map(|k| l[(i, k)] * z[k]).sum::<f64>();
        z[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s = z[i] - (i + 1..n).map(|k| l[(k, i)] * x[k]).sum::<f64>();
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_square(a)?;
    let l = factor(a, 0.0, false).map_err(|(index, pivot)| Error::NotPd { index, pivot })?;
    cholesky_solve(&l, b)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}
