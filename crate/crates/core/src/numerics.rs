//! Dense linear algebra and seeded randomness shared by the rest of the crate.
//!
//! All routines are deterministic for a fixed input and seed. Transcendental
//! functions go through `libm` so results do not depend on the platform's
//! math library.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(alloc::format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(alloc::format!(
                "matrix entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(alloc::format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Matrix with the given rows of `self`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (l, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(l)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`; both operands are walked row by row.
    pub fn matmul_transpose(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_transpose dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let k = self.cols;
        let mut g = Matrix::zeros(k, k);
        for r in self.row_iter() {
            for a in 0..k {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let grow = &mut g.data[a * k..(a + 1) * k];
                for b in a..k {
                    grow[b] += ra * r[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                g.data[a * k + b] = g.data[b * k + a];
            }
        }
        g
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        self.row_iter().map(|r| dot(r, v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for (r, &s) in self.row_iter().zip(v) {
            axpy(s, r, &mut out);
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for r in self.row_iter() {
            axpy(1.0, r, &mut mean);
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn scale_row(&mut self, i: usize, s: f64) {
        self.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a·x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Seeded ChaCha20 stream. Identical seeds give identical streams on every
/// platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for `(seed, stream)`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Rng::new(derive_seed(seed, stream))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..n`, sorted ascending.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        let mut idx = rand::seq::index::sample(&mut self.inner, n, amount).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Mixes `(seed, stream)` into a new seed (SplitMix64 finalizer over both
/// words). Used to give every trial, retrain and sweep cell its own stream
/// without disturbing the others when counts change.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// `p × k` matrix of i.i.d. N(0, 1/k) entries.
pub fn gaussian_projection(p: usize, k: usize, rng: &mut Rng) -> Result<Matrix> {
    if p == 0 || k == 0 {
        return Err(Error::invalid(alloc::format!(
            "projection needs p >= 1 and k >= 1, got p = {p}, k = {k}"
        )));
    }
    let scale = 1.0 / libm::sqrt(k as f64);
    let data = (0..p * k).map(|_| rng.standard_normal() * scale).collect();
    Ok(Matrix { rows: p, cols: k, data })
}

/// Default ridge for [`regularized_gram_inverse`]: `1e-6 · trace(GᵀG) / k`.
pub fn default_lambda(gram: &Matrix) -> f64 {
    1e-6 * gram.trace() / gram.rows().max(1) as f64
}

/// Cholesky factor `L` of a symmetric positive definite matrix (`A = L·Lᵀ`).
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factors `a`. A pivot at or below `1e-12 · max diag` is treated as
    /// singular and reported with its index.
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::invalid("cholesky needs a square matrix"));
        }
        let scale = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let d = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
            if !(d > tol) {
                return Err(Error::SingularMatrix { index: j, pivot: d });
            }
            let ljj = libm::sqrt(d);
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    /// Solves `A·x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.rows();
        for i in 0..n {
            let s = b[i] - dot(&self.l.row(i)[..i], &b[..i]);
            b[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..n {
                s -= self.l[(j, i)] * b[j];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.l.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // symmetrize away round-off
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = m;
                inv[(j, i)] = m;
            }
        }
        inv
    }
}

/// `(GᵀG + λ·I)⁻¹` for an `n × k` matrix `G` of stacked row vectors.
pub fn regularized_gram_inverse(g: &Matrix, lambda_reg: f64) -> Result<Matrix> {
    if !(lambda_reg >= 0.0) || !lambda_reg.is_finite() {
        return Err(Error::invalid(alloc::format!(
            "lambda_reg must be finite and >= 0, got {lambda_reg}"
        )));
    }
    let mut m = g.gram();
    for i in 0..m.rows() {
        m[(i, i)] += lambda_reg;
    }
    Ok(Cholesky::new(&m)?.inverse())
}

pub const PCA_TOLERANCE: f64 = 1e-8;
pub const PCA_MAX_ITERATIONS: usize = 1000;

/// Unit-norm top right singular vector of the row-centered `t`.
///
/// Power iteration on `TcᵀTc` without forming it, started from the centered
/// row of largest norm. Stops when successive iterates differ by less than
/// [`PCA_TOLERANCE`] or after [`PCA_MAX_ITERATIONS`]. The sign is chosen so the
/// entry of largest magnitude is positive.
pub fn top_principal_component(t: &Matrix) -> Result<Vec<f64>> {
    if t.rows() < 2 {
        return Err(Error::invalid("principal component needs at least 2 rows"));
    }
    let mean = t.column_means();
    let mut centered = t.clone();
    for i in 0..centered.rows() {
        axpy(-1.0, &mean, centered.row_mut(i));
    }
    if centered.max_abs() <= 1e-12 * t.max_abs().max(1.0) {
        return Err(Error::DegenerateSpectrum);
    }

    let start = (0..centered.rows())
        .map(|i| (i, norm(centered.row(i))))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0;
    let mut v = centered.row(start).to_vec();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);

    for _ in 0..PCA_MAX_ITERATIONS {
        let mut w = centered.transpose_mul_vec(&centered.mul_vec(&v));
        let nw = norm(&w);
        if !(nw > 0.0) {
            return Err(Error::DegenerateSpectrum);
        }
        w.iter_mut().for_each(|x| *x /= nw);
        let diff = libm::sqrt(w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        v = w;
        if diff < PCA_TOLERANCE {
            break;
        }
    }

    let pivot = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
        .0;
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(v)
}

/// `w_g = exp(β ℓ_g) / Σ exp(β ℓ_g')`, evaluated after subtracting the max.
pub fn softmax_weights(losses: &[f64], beta: f64) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::invalid("softmax over an empty group list"));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(alloc::format!("beta must be finite and >= 0, got {beta}")));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("group losses must be finite"));
    }
    let max = losses.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(beta * l));
    let mut w: Vec<f64> = losses.iter().map(|&l| libm::exp(beta * l - max)).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    Ok(w)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `log Σ exp(x_i)`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(xs.map(|x| libm::exp(x - max)).sum::<f64>())
}

/// Ranks starting at 1, ties get their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation, `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / libm::sqrt(saa * sbb))
}

/// Spearman rank correlation, `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&ranks(a), &ranks(b))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    libm::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let data = (0..rows * cols).map(|_| rng.standard_normal()).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn projection_is_deterministic() {
        let a = gaussian_projection(3, 2, &mut Rng::new(7)).unwrap();
        let b = gaussian_projection(3, 2, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
        let c = gaussian_projection(3, 2, &mut Rng::new(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn projection_preserves_basis_norms() {
        // ‖Pᵀe_i‖ is the norm of row i; each is sqrt(χ²_k / k).
        let p = gaussian_projection(1000, 64, &mut Rng::new(1)).unwrap();
        let mean_norm = p.row_iter().map(norm).sum::<f64>() / 1000.0;
        assert!((mean_norm - 1.0).abs() < 0.2, "{mean_norm}");
    }

    #[test]
    fn projection_rejects_zero_dims() {
        assert!(matches!(
            gaussian_projection(0, 2, &mut Rng::new(0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(gaussian_projection(2, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn gram_inverse_of_identity_rows() {
        let g = Matrix::identity(4);
        let inv = regularized_gram_inverse(&g, 0.0).unwrap();
        assert_eq!(inv, Matrix::identity(4));
    }

    #[test]
    fn gram_inverse_multiplies_back() {
        let g = random_matrix(8, 3, 11);
        let lambda = 1e-6;
        let inv = regularized_gram_inverse(&g, lambda).unwrap();
        let mut m = g.gram();
        for i in 0..3 {
            m[(i, i)] += lambda;
        }
        let prod = m.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gram_inverse_rank_deficient_is_singular() {
        // second column is twice the first
        let g = Matrix::from_rows(&[[1.0, 2.0], [3.0, 6.0], [-1.0, -2.0]]).unwrap();
        match regularized_gram_inverse(&g, 0.0) {
            Err(Error::SingularMatrix { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected singular, got {other:?}"),
        }
        assert!(regularized_gram_inverse(&g, 1e-3).is_ok());
        assert!(regularized_gram_inverse(&g, -1.0).is_err());
    }

    #[test]
    fn pc_of_axis_aligned_rows() {
        let mut rng = Rng::new(3);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![
                    s + 1e-4 * rng.standard_normal(),
                    1e-4 * rng.standard_normal(),
                    1e-4 * rng.standard_normal(),
                ]
            })
            .collect();
        let v = top_principal_component(&Matrix::from_rows(&rows).unwrap()).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-3 && v[1].abs() < 1e-3 && v[2].abs() < 1e-3, "{v:?}");
    }

    #[test]
    fn pc_rayleigh_matches_dense_eigensolve() {
        let t = random_matrix(50, 10, 5);
        let v = top_principal_component(&t).unwrap();
        assert!((norm(&v) - 1.0).abs() < 1e-12);

        let mean = t.column_means();
        let centered = nalgebra::DMatrix::from_fn(50, 10, |i, j| t[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered;
        let top = cov.clone().symmetric_eigen().eigenvalues.max();
        let vv = nalgebra::DVector::from_column_slice(&v);
        let rayleigh = (vv.transpose() * &cov * &vv)[(0, 0)];
        assert!((rayleigh - top).abs() < 1e-6 * top.max(1.0), "{rayleigh} vs {top}");
    }

    #[test]
    fn pc_of_repeated_row_is_degenerate() {
        let t = Matrix::from_rows(&[[0.1, 0.7, -3.0]; 5]).unwrap();
        assert_eq!(top_principal_component(&t), Err(Error::DegenerateSpectrum));
        assert!(top_principal_component(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).is_err());
    }

    #[test]
    fn pc_sign_convention() {
        let t = Matrix::from_rows(&[[0.0, -3.0], [0.0, 3.0], [0.1, -2.9]]).unwrap();
        let v = top_principal_component(&t).unwrap();
        assert!(v[1] > 0.0);
    }

    #[test]
    fn softmax_limits() {
        let w = softmax_weights(&[0.3, 9.0, -2.0], 0.0).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        let w = softmax_weights(&[0.0, 1000.0], 1.0).unwrap();
        assert!(w[0].abs() < 1e-12 && (w[1] - 1.0).abs() < 1e-12);

        let w = softmax_weights(&[0.2, 0.2, 0.2], 5.0).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        assert!(softmax_weights(&[], 1.0).is_err());
        assert!(softmax_weights(&[1.0], -1.0).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0]), None);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(3.0) - 1.0 / (1.0 + libm::exp(-3.0))).abs() < 1e-16);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use super::Rng;

        proptest! {
            #[test]
            fn softmax_is_a_shift_invariant_distribution(
                losses in prop::collection::vec(-50.0f64..50.0, 1..8),
                beta in 0.0f64..5.0,
                shift in -100.0f64..100.0,
            ) {
                let w = softmax_weights(&losses, beta).unwrap();
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let shifted: Vec<f64> = losses.iter().map(|l| l + shift).collect();
                let w2 = softmax_weights(&shifted, beta).unwrap();
                for (a, b) in w.iter().zip(&w2) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }

            #[test]
            fn pc_is_row_permutation_invariant(seed in 0u64..500, rows in 3usize..20) {
                let t = random_matrix(rows, 6, seed);
                let mut order: Vec<usize> = (0..rows).collect();
                Rng::new(seed ^ 0xABCD).shuffle(&mut order);
                let a = top_principal_component(&t).unwrap();
                let b = top_principal_component(&t.select_rows(&order)).unwrap();
                // well-separated top eigenvalue is needed for the tolerance to mean anything
                let mean = t.column_means();
                let c = nalgebra::DMatrix::from_fn(rows, 6, |i, j| t[(i, j)] - mean[j]);
                let mut ev: Vec<f64> = (c.transpose() * &c).symmetric_eigen().eigenvalues.iter().copied().collect();
                ev.sort_by(|x, y| y.total_cmp(x));
                prop_assume!(ev[1] < 0.8 * ev[0]);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-6, "{a:?} vs {b:?}");
                }
            }

            #[test]
            fn gram_inverse_is_an_inverse(seed in 0u64..500, n in 6usize..30, k in 1usize..6, lambda in 0.0f64..1.0) {
                let g = random_matrix(n, k, seed);
                let inv = regularized_gram_inverse(&g, lambda).unwrap();
                let mut m = g.gram();
                for i in 0..k { m[(i, i)] += lambda; }
                let prod = m.matmul(&inv);
                for i in 0..k {
                    for j in 0..k {
                        let want = if i == j { 1.0 } else { 0.0 };
                        prop_assert!((prod[(i, j)] - want).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
