//! Dense row-major tensors and the small set of matrix routines the GP
//! stack needs: products, Cholesky factorization with a jitter ladder,
//! and triangular solves.
//!
//! Everything is `f64`; GP covariance algebra is too ill-conditioned for
//! single precision.

use crate::error::{contract, CoreError, Result};
use serde::{Deserialize, Serialize};

/// Maximum jitter, as a multiple of the mean diagonal, that the Cholesky
/// ladder will try before giving up.
pub const MAX_JITTER_FACTOR: f64 = 1e-3;

/// Dense row-major tensor. Vectors are `[n, 1]` columns, scalars `[1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {shape:?} does not match {} values", data.len());
        Tensor { shape, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: vec![rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { shape: vec![rows, cols], data: vec![value; rows * cols] }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![x] }
    }

    /// Column vector `[n, 1]`.
    pub fn col(values: &[f64]) -> Self {
        Tensor { shape: vec![values.len(), 1], data: values.to_vec() }
    }

    /// Row vector `[1, n]`.
    pub fn row(values: &[f64]) -> Self {
        Tensor { shape: vec![1, values.len()], data: values.to_vec() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor { shape: vec![r, c], data }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a `[1, 1]` tensor.
    pub fn scalar_value(&self) -> f64 {
        assert!(self.is_scalar(), "expected scalar, got shape {:?}", self.shape);
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "shape mismatch {:?} vs {:?}", self.shape, other.shape);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul_elem(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|x| x * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.len(), other.len());
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (r, k) = (self.rows(), self.cols());
        let (k2, c) = (other.rows(), other.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out.data[i * c..(i + 1) * c];
            for (p, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * c..(p + 1) * c];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn diag(&self) -> Vec<f64> {
        let n = self.rows().min(self.cols());
        (0..n).map(|i| self.at(i, i)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Outcome of the jittered factorization: the factor and the jitter that
/// was actually added to the diagonal.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub lower: Tensor,
    pub jitter: f64,
}

fn cholesky_attempt(a: &Tensor, jitter: f64) -> Option<Tensor> {
    let n = a.rows();
    let mut l = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.at(i, j);
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.at(j, j));
            }
        }
    }
    Some(l)
}

/// Lower Cholesky factor of a symmetric matrix, retrying with diagonal
/// jitter when the bare factorization fails.
///
/// The ladder starts at zero, then `1e-8 * mean(diag)` growing by 10x per
/// retry up to `1e-3 * mean(diag)`.
pub fn cholesky(a: &Tensor) -> Result<CholeskyFactor> {
    let n = a.rows();
    if n != a.cols() {
        return Err(contract(format!("cholesky needs a square matrix, got {:?}", a.shape())));
    }
    let mean_diag = a.diag().iter().sum::<f64>() / n.max(1) as f64;
    let base = mean_diag.abs().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    let mut factor = 1e-8;
    loop {
        if let Some(l) = cholesky_attempt(a, jitter) {
            return Ok(CholeskyFactor { lower: l, jitter });
        }
        if factor > MAX_JITTER_FACTOR {
            return Err(CoreError::NotPositiveDefinite {
                size: n,
                max_jitter: MAX_JITTER_FACTOR * base,
            });
        }
        jitter = factor * base;
        factor *= 10.0;
    }
}

/// Solve `L x = b` (or `L^T x = b` with `transpose`) for lower-triangular `L`.
/// `b` may have multiple columns.
pub fn solve_lower(l: &Tensor, b: &Tensor, transpose: bool) -> Tensor {
    let n = l.rows();
    assert_eq!(n, l.cols(), "triangular solve needs square L");
    assert_eq!(n, b.rows(), "rhs rows {} vs L size {n}", b.rows());
    let k = b.cols();
    let mut x = b.clone();
    if !transpose {
        for i in 0..n {
            for c in 0..k {
                let mut s = x.at(i, c);
                for j in 0..i {
                    s -= l.at(i, j) * x.at(j, c);
                }
                x.set(i, c, s / l.at(i, i));
            }
        }
    } else {
        for i in (0..n).rev() {
            for c in 0..k {
                let mut s = x.at(i, c);
                for j in (i + 1)..n {
                    s -= l.at(j, i) * x.at(j, c);
                }
                x.set(i, c, s / l.at(i, i));
            }
        }
    }
    x
}

/// `A^-1 b` for symmetric positive definite `A` given its lower factor.
pub fn cholesky_solve(l: &Tensor, b: &Tensor) -> Tensor {
    solve_lower(l, &solve_lower(l, b, false), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Tensor::zeros(n, n);
        for v in b.data_mut() {
            *v = rng.random::<f64>() * 2.0 - 1.0;
        }
        let bt = b.transpose();
        b.matmul(&bt).add(&Tensor::eye(n))
    }

    #[test]
    fn cholesky_identity() {
        let f = cholesky(&Tensor::eye(3)).unwrap();
        assert_eq!(f.lower, Tensor::eye(3));
        assert_eq!(f.jitter, 0.0);
    }

    #[test]
    fn cholesky_diagonal_roots() {
        let a = Tensor::from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]);
        let f = cholesky(&a).unwrap();
        assert_eq!(f.lower.at(0, 0), 2.0);
        assert_eq!(f.lower.at(1, 1), 3.0);
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let a = random_spd(5, 7);
        let f = cholesky(&a).unwrap();
        let rec = f.lower.matmul(&f.lower.transpose());
        assert!(rec.max_abs_diff(&a) <= 1e-10, "reconstruction error {}", rec.max_abs_diff(&a));
    }

    #[test]
    fn cholesky_output_is_exactly_lower_triangular() {
        let a = random_spd(6, 3);
        let f = cholesky(&a).unwrap();
        for i in 0..6 {
            assert!(f.lower.at(i, i) > 0.0);
            for j in (i + 1)..6 {
                assert_eq!(f.lower.at(i, j).to_bits(), 0u64);
            }
        }
    }

    #[test]
    fn cholesky_rejects_negative_definite() {
        let a = Tensor::from_rows(&[vec![-1.0, 0.0], vec![0.0, -2.0]]);
        match cholesky(&a) {
            Err(CoreError::NotPositiveDefinite { size: 2, .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn jitter_ladder_rescues_rank_deficient() {
        // rank-1 PSD matrix, singular without jitter
        let v = Tensor::col(&[1.0, 2.0, 3.0]);
        let a = v.matmul(&v.transpose());
        let f = cholesky(&a).unwrap();
        assert!(f.jitter > 0.0);
        let rec = f.lower.matmul(&f.lower.transpose());
        assert!(rec.max_abs_diff(&a) <= 1e-2 * 14.0);
    }

    #[test]
    fn triangular_solves_roundtrip() {
        let a = random_spd(4, 11);
        let l = cholesky(&a).unwrap().lower;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b = Tensor::zeros(4, 2);
        for v in b.data_mut() {
            *v = rng.random::<f64>();
        }
        let x = cholesky_solve(&l, &b);
        let back = a.matmul(&x);
        assert!(back.max_abs_diff(&b) <= 1e-9);

        let y = solve_lower(&l, &b, false);
        assert!(l.matmul(&y).max_abs_diff(&b) <= 1e-10);
        let z = solve_lower(&l, &b, true);
        assert!(l.transpose().matmul(&z).max_abs_diff(&b) <= 1e-10);
    }

    #[test]
    fn matmul_matches_manual() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let c = a.matmul(&b);
        assert_eq!(c, Tensor::from_rows(&[vec![19.0, 22.0], vec![43.0, 50.0]]));
    }
}
