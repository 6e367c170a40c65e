// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense linear algebra and statistics shared by every analysis.
//!
//! Everything here is computed in `f64`. Vectors are plain slices; the only
//! owned container is [`Matrix`], a row-major dense matrix.

use std::ops::{Index, IndexMut};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
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

    /// Wrap a row-major buffer; fails if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stack equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
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
        assert_eq!(self.cols, other.rows, "matmul inner dimensions");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in o_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Row vector times matrix: `x · self`, with `x.len() == rows`.
    pub fn vec_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "vec_mul length");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w;
            }
        }
        out
    }

    /// Matrix times column vector: `self · x`, with `x.len() == cols`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec length");
        self.iter_rows().map(|r| dot(r, x)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a += scale * b`
#[inline]
pub fn axpy(a: &mut [f64], scale: f64, b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += scale * y;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divisor `n`). Exactly zero for a
/// constant sample, where the two-pass sum would leave rounding noise.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Unit vector along `a`; errors on a zero vector.
pub fn normalized(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateInput("cannot normalise a zero vector".into()));
    }
    Ok(a.iter().map(|x| x / n).collect())
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Layer normalisation `(x - mean) / sqrt(var + eps) * gain + bias`.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let m = mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - m) * inv * g + b)
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Similarity and correlation
// ---------------------------------------------------------------------------

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput(format!(
            "cosine of a zero-norm vector (|a| = {na}, |b| = {nb})"
        )));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    if x.len() < 2 {
        return Err(Error::degenerate_stat(
            "pearson",
            format!("need at least 2 points, got {}", x.len()),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    match (sxx == 0.0, syy == 0.0) {
        (true, true) => Err(Error::degenerate_stat("pearson", "both x and y are constant")),
        (true, false) => Err(Error::degenerate_stat("pearson", "x is constant")),
        (false, true) => Err(Error::degenerate_stat("pearson", "y is constant")),
        // sqrt of the product keeps identical or mirrored inputs at exactly ±1.
        _ => Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)),
    }
}

/// Average (fractional) ranks, 1-based; ties share the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with a two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Spearman {
    pub rho: f64,
    pub p_value: f64,
}

/// Spearman's rho (Pearson of average ranks) and its two-sided p-value
/// from the t approximation with `n - 2` degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    check_len(x, y)?;
    let n = x.len();
    if n < 4 {
        return Err(Error::degenerate_stat(
            "spearman",
            format!("need at least 4 points, got {n}"),
        ));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y)).map_err(|e| match e {
        Error::DegenerateStatistic { detail, .. } => {
            Error::degenerate_stat("spearman", format!("all-tied input: {detail}"))
        }
        other => other,
    })?;
    Ok(Spearman {
        rho,
        p_value: t_test_p_value(rho, n),
    })
}

fn t_test_p_value(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Ordinary least-squares slope of `deltas` on `alphas`.
pub fn regression_slope(alphas: &[f64], deltas: &[f64]) -> Result<f64> {
    check_len(alphas, deltas)?;
    if alphas.len() < 2 {
        return Err(Error::DegenerateInput(
            "regression needs at least 2 points".into(),
        ));
    }
    let (mx, my) = (mean(alphas), mean(deltas));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, d) in alphas.iter().zip(deltas) {
        sxy += (a - mx) * (d - my);
        sxx += (a - mx) * (a - mx);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("regressor values are all equal".into()));
    }
    Ok(sxy / sxx)
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gaussian estimate and Mahalanobis distance
// ---------------------------------------------------------------------------

/// Relative ridge added to the covariance: `lambda = REL * trace / d`.
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-4;
/// Ridge floor so that a zero covariance still factorises.
pub const RIDGE_FLOOR: f64 = 1e-10;

/// Mean and (regularised) covariance of a set of samples.
#[derive(Debug, Clone)]
pub struct GaussianEstimate {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub regularisation: f64,
    pub sample_count: usize,
    // Lower Cholesky factor of covariance + regularisation * I.
    chol: Matrix,
}

impl GaussianEstimate {
    /// Build from explicit parameters; factorises immediately.
    pub fn new(
        mean: Vec<f64>,
        covariance: Matrix,
        regularisation: f64,
        sample_count: usize,
    ) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(Error::ShapeMismatch(format!(
                "covariance {:?} for mean of length {d}",
                covariance.shape()
            )));
        }
        if !(regularisation >= 0.0) {
            return Err(Error::Argument("regularisation must be >= 0".into()));
        }
        let mut m = covariance.clone();
        for i in 0..d {
            m[(i, i)] += regularisation;
        }
        let chol = cholesky(&m)?;
        Ok(Self {
            mean,
            covariance,
            regularisation,
            sample_count,
            chol,
        })
    }

    /// Fit to the rows of `samples` with the default ridge
    /// `max(1e-4 * trace / d, 1e-10)`.
    pub fn fit(samples: &Matrix) -> Result<Self> {
        let (n, d) = samples.shape();
        if n < 2 {
            return Err(Error::CorpusTooSmall { got: n, need: 2 });
        }
        let mut mu = vec![0.0; d];
        for r in samples.iter_rows() {
            axpy(&mut mu, 1.0, r);
        }
        mu.iter_mut().for_each(|v| *v /= n as f64);
        let mut cov = Matrix::zeros(d, d);
        for r in samples.iter_rows() {
            let c = sub(r, &mu);
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
        let lambda = (DEFAULT_RELATIVE_RIDGE * trace / d as f64).max(RIDGE_FLOOR);
        Self::new(mu, cov, lambda, n)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Solve `(Σ + λI) x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        cholesky_solve(&self.chol, b)
    }
}

/// `sqrt((a - μ)ᵀ (Σ + λI)⁻¹ (a - μ))`, computed by a Cholesky solve.
pub fn mahalanobis(a: &[f64], g: &GaussianEstimate) -> Result<f64> {
    if a.len() != g.dim() {
        return Err(Error::ShapeMismatch(format!(
            "activation of length {} against a {}-dim estimate",
            a.len(),
            g.dim()
        )));
    }
    let diff = sub(a, &g.mean);
    // With L Lᵀ = M, (a-μ)ᵀ M⁻¹ (a-μ) = |L⁻¹ (a-μ)|².
    let y = forward_substitute(&g.chol, &diff);
    Ok(dot(&y, &y).sqrt())
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::IllConditioned(format!(
                        "non-positive pivot {s:e} at index {i}"
                    )));
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

fn forward_substitute(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let y = forward_substitute(l, b);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

// ---------------------------------------------------------------------------
// Selection and clustering
// ---------------------------------------------------------------------------

/// Indices of the `k` largest entries, largest first; ties go to the lower
/// index.
pub fn topk_indices(v: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > v.len() {
        return Err(Error::Argument(format!(
            "k = {k} out of range 1..={}",
            v.len()
        )));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    // Stable sort keeps lower indices first among equal values.
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    idx.truncate(k);
    Ok(idx)
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Connected components of the graph on `0..n`, singletons included.
///
/// Each component is sorted ascending and components are ordered by their
/// smallest member.
pub fn union_find_clusters(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    let mut uf = UnionFind::new(n);
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::Argument(format!("edge ({a}, {b}) outside 0..{n}")));
        }
        uf.union(a, b);
    }
    let mut by_root: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let r = uf.find(i);
        match by_root[r] {
            Some(c) => clusters[c].push(i),
            None => {
                by_root[r] = Some(clusters.len());
                clusters.push(vec![i]);
            }
        }
    }
    Ok(clusters)
}
