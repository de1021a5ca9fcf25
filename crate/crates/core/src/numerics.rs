//! Dense linear algebra and Gaussian class statistics shared by the detectors.
//!
//! Everything here is double precision and row-major. Matrices are small
//! (feature dimensions up to a few hundred), so the routines favour
//! straightforward loops over blocking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of cyclic Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm, relative to the full norm, at which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Row-major dense matrix with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { row: pos / cols.max(1), col: pos % cols.max(1) });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Builds a matrix from equally sized rows. An empty slice gives a `0 x cols` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, got: v.len() });
        }
        Ok(self.iter_rows().map(|row| dot(row, v)).collect())
    }

    /// `selfᵀ · v`
    pub fn transpose_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, got: v.len() });
        }
        let mut out = vec![0.0; self.cols];
        for (row, &s) in self.iter_rows().zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * s;
            }
        }
        Ok(out)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Largest `|a_ij - a_ji|`, relative to the largest absolute entry (1 for the zero matrix).
    pub fn max_relative_asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        if worst == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn add_diagonal(&self, lambda: f64) -> Matrix {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += lambda;
        }
        m
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch { expected: self.data.len(), got: other.data.len() });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// Keeps the first `n` columns.
    pub fn leading_columns(&self, n: usize) -> Matrix {
        let n = n.min(self.cols);
        let mut out = Matrix::zeros(self.rows, n);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[..n]);
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Eigenvalues sorted descending with orthonormal eigenvectors as matrix columns.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn symmetric_eig(m: &Matrix) -> Result<SymmetricEigen> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch { expected: m.rows(), got: m.cols() });
    }
    let asym = m.max_relative_asymmetry();
    if asym > 1e-8 {
        return Err(Error::NotSymmetric(asym));
    }
    let n = m.rows();
    // Work on the exactly symmetrised copy.
    let mut a = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = Matrix::identity(n);
    let norm = a.frobenius_norm();

    let off_diagonal = |a: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut converged = norm == 0.0 || off_diagonal(&a) <= JACOBI_TOLERANCE * norm;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // A <- Jᵀ A J, touching rows/columns p and q only.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = off_diagonal(&a) <= JACOBI_TOLERANCE * norm;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Lower-triangular Cholesky factor, or `None` if the matrix is not positive definite.
pub fn cholesky(m: &Matrix) -> Option<Matrix> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &Matrix) -> Option<Matrix> {
    let l = cholesky(m)?;
    let n = m.rows();
    let mut inv = Matrix::zeros(n, n);
    let mut y = vec![0.0; n];
    let mut x = vec![0.0; n];
    for col in 0..n {
        // L y = e_col
        for i in 0..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        // Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        for i in 0..n {
            inv[(i, col)] = x[i];
        }
    }
    // Symmetrise away rounding.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    Some(inv)
}

/// `(cov + lambda·I)⁻¹`, falling back to eigenvalue clamping when the
/// regularised matrix is not numerically positive definite.
pub fn regularized_precision(cov: &Matrix, lambda: f64) -> Result<Matrix> {
    let shifted = cov.add_diagonal(lambda);
    if let Some(p) = spd_inverse(&shifted) {
        return Ok(p);
    }
    let eig = symmetric_eig(cov)?;
    let scale = eig.values.first().map(|v| v.abs()).unwrap_or(0.0).max(1.0);
    let floor = if lambda > 0.0 { lambda } else { scale * 1e-12 };
    let n = cov.rows();
    let mut p = Matrix::zeros(n, n);
    for (idx, &val) in eig.values.iter().enumerate() {
        let inv = 1.0 / (val + lambda).max(floor);
        for i in 0..n {
            let vi = eig.vectors[(i, idx)] * inv;
            for j in 0..n {
                p[(i, j)] += vi * eig.vectors[(j, idx)];
            }
        }
    }
    Ok(p)
}

/// Squared Mahalanobis distance `(x-μ)ᵀ P (x-μ)`.
pub fn mahalanobis_sq(x: &[f64], mean: &[f64], precision: &Matrix) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::DimensionMismatch { expected: mean.len(), got: x.len() });
    }
    if precision.rows() != x.len() || precision.cols() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: precision.rows() });
    }
    let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut acc = 0.0;
    for (i, di) in diff.iter().enumerate() {
        acc += di * dot(precision.row(i), &diff);
    }
    Ok(acc.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    #[default]
    Tied,
    PerClass,
}

impl std::str::FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tied" => Ok(CovarianceMode::Tied),
            "per_class" | "per-class" => Ok(CovarianceMode::PerClass),
            other => Err(Error::invalid(format!("unknown covariance mode '{other}'"))),
        }
    }
}

/// How much `λ·I` to add to each covariance before inversion.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Regularization {
    /// `1e-6 · trace(Σ) / d` of the pooled covariance.
    #[default]
    Auto,
    Fixed(f64),
}

/// Class-conditional Gaussian fit: per-class means with tied or per-class covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianClassModel {
    pub class_ids: Vec<i64>,
    pub means: Vec<Vec<f64>>,
    pub covariance_mode: CovarianceMode,
    pub covariances: Vec<Matrix>,
    pub precisions: Vec<Matrix>,
    pub reg_lambda: f64,
}

impl GaussianClassModel {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn precision_for(&self, class_index: usize) -> &Matrix {
        match self.covariance_mode {
            CovarianceMode::Tied => &self.precisions[0],
            CovarianceMode::PerClass => &self.precisions[class_index],
        }
    }

    /// Minimum squared Mahalanobis distance over classes.
    pub fn min_mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut best = f64::INFINITY;
        for (i, mean) in self.means.iter().enumerate() {
            best = best.min(mahalanobis_sq(x, mean, self.precision_for(i))?);
        }
        Ok(best)
    }
}

/// Fits per-class means and covariances over rows whose label is non-negative.
///
/// The class set is `0..=max_label`; a missing label in that range is an
/// empty class. Rows labelled `-1` are ignored.
pub fn class_statistics(
    features: &Matrix,
    labels: &[i64],
    mode: CovarianceMode,
    regularization: Regularization,
) -> Result<GaussianClassModel> {
    let max_label = labels.iter().copied().filter(|&l| l >= 0).max();
    let Some(max_label) = max_label else {
        return Err(Error::EmptyClass(0));
    };
    let class_ids: Vec<i64> = (0..=max_label).collect();
    class_statistics_for(features, labels, &class_ids, mode, regularization)
}

/// Like [`class_statistics`] with an explicit class list.
pub fn class_statistics_for(
    features: &Matrix,
    labels: &[i64],
    class_ids: &[i64],
    mode: CovarianceMode,
    regularization: Regularization,
) -> Result<GaussianClassModel> {
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch { expected: features.rows(), got: labels.len() });
    }
    if class_ids.is_empty() {
        return Err(Error::invalid("no classes"));
    }
    if let Some(pos) = features.data().iter().position(|v| !v.is_finite()) {
        let cols = features.cols().max(1);
        return Err(Error::NonFiniteFeature { row: pos / cols, col: pos % cols });
    }
    let d = features.cols();
    let index_of = |label: i64| class_ids.iter().position(|&c| c == label);

    let mut counts = vec![0usize; class_ids.len()];
    let mut sums = vec![vec![0.0; d]; class_ids.len()];
    for (row, &label) in features.iter_rows().zip(labels) {
        if label < 0 {
            continue;
        }
        let Some(c) = index_of(label) else {
            return Err(Error::invalid(format!("label {label} not in class set")));
        };
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(row) {
            *s += v;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(class_ids[c]));
    }
    let means: Vec<Vec<f64>> =
        sums.into_iter().zip(&counts).map(|(s, &n)| s.into_iter().map(|v| v / n as f64).collect()).collect();

    let mut scatter = vec![Matrix::zeros(d, d); class_ids.len()];
    let mut diff = vec![0.0; d];
    for (row, &label) in features.iter_rows().zip(labels) {
        if label < 0 {
            continue;
        }
        let c = index_of(label).expect("checked above");
        for (dst, (x, m)) in diff.iter_mut().zip(row.iter().zip(&means[c])) {
            *dst = x - m;
        }
        let s = &mut scatter[c];
        for i in 0..d {
            for j in i..d {
                s[(i, j)] += diff[i] * diff[j];
            }
        }
    }
    for s in scatter.iter_mut() {
        for i in 0..d {
            for j in (i + 1)..d {
                s[(j, i)] = s[(i, j)];
            }
        }
    }

    let total: usize = counts.iter().sum();
    let mut pooled = Matrix::zeros(d, d);
    for s in &scatter {
        for (p, v) in pooled.data.iter_mut().zip(&s.data) {
            *p += v;
        }
    }
    for p in pooled.data.iter_mut() {
        *p /= total as f64;
    }

    let reg_lambda = match regularization {
        Regularization::Auto => {
            if d == 0 {
                0.0
            } else {
                1e-6 * pooled.trace() / d as f64
            }
        }
        Regularization::Fixed(l) => l,
    };
    if !(reg_lambda >= 0.0) || !reg_lambda.is_finite() {
        return Err(Error::invalid(format!("reg_lambda must be finite and >= 0, got {reg_lambda}")));
    }

    let covariances = match mode {
        CovarianceMode::Tied => vec![pooled],
        CovarianceMode::PerClass => scatter
            .into_iter()
            .zip(&counts)
            .map(|(mut s, &n)| {
                for v in s.data.iter_mut() {
                    *v /= n as f64;
                }
                s
            })
            .collect(),
    };
    let precisions = covariances.iter().map(|c| regularized_precision(c, reg_lambda)).collect::<Result<Vec<_>>>()?;

    Ok(GaussianClassModel {
        class_ids: class_ids.to_vec(),
        means,
        covariance_mode: mode,
        covariances,
        precisions,
        reg_lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> (Matrix, Vec<i64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels = (0..n).map(|i| (i % 2) as i64).collect();
        (Matrix::new(n, d, data).unwrap(), labels)
    }

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn reconstruct(e: &SymmetricEigen) -> Matrix {
        let lam = Matrix::diagonal(&e.values);
        e.vectors.matmul(&lam).unwrap().matmul(&e.vectors.transpose()).unwrap()
    }

    #[test]
    fn zero_scatter_gives_regularizer_covariance() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]], 2).unwrap();
        let m = class_statistics(&x, &[0, 1], CovarianceMode::Tied, Regularization::Fixed(1.0)).unwrap();
        assert_eq!(m.means, vec![vec![0.0, 0.0], vec![2.0, 2.0]]);
        let effective = m.covariances[0].add_diagonal(m.reg_lambda);
        assert_eq!(effective, Matrix::identity(2));
        assert_eq!(m.precisions[0], Matrix::identity(2));
    }

    #[test]
    fn pooled_covariance_hand_case() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]], 2).unwrap();
        let m = class_statistics(&x, &[0, 0, 1, 1], CovarianceMode::Tied, Regularization::Fixed(0.0)).unwrap();
        assert_eq!(m.means, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(m.covariances[0], Matrix::diagonal(&[0.5, 2.0]));
        let expected = Matrix::diagonal(&[2.0, 0.5]);
        assert!(m.precisions[0].sub(&expected).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn empty_class_and_non_finite_are_rejected() {
        let x = Matrix::from_rows(&[[0.0], [1.0]], 1).unwrap();
        let err = class_statistics(&x, &[0, 2], CovarianceMode::Tied, Regularization::Auto).unwrap_err();
        assert!(matches!(err, Error::EmptyClass(1)), "{err}");
        assert!(err.to_string().contains("empty class"));

        assert!(Matrix::new(1, 1, vec![f64::NAN]).is_err());
        let err = Matrix::new(1, 2, vec![0.0, f64::INFINITY]).unwrap_err();
        assert!(err.to_string().contains("non-finite feature"));
    }

    #[test]
    fn covariance_matches_two_pass_reference() {
        let (x, labels) = random_points(200, 3, 11);
        for mode in [CovarianceMode::Tied, CovarianceMode::PerClass] {
            let m = class_statistics(&x, &labels, mode, Regularization::Fixed(0.0)).unwrap();
            // Reference: nalgebra vectors, explicit two passes per class.
            let mut pooled = nalgebra::DMatrix::<f64>::zeros(3, 3);
            for c in 0..2i64 {
                let rows: Vec<nalgebra::DVector<f64>> = x
                    .iter_rows()
                    .zip(&labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(r, _)| nalgebra::DVector::from_column_slice(r))
                    .collect();
                let mean = rows.iter().fold(nalgebra::DVector::zeros(3), |a, r| a + r) / rows.len() as f64;
                let scatter = rows.iter().fold(nalgebra::DMatrix::zeros(3, 3), |a, r| {
                    let d = r - &mean;
                    a + &d * d.transpose()
                });
                for j in 0..3 {
                    assert!((mean[j] - m.means[c as usize][j]).abs() < 1e-12);
                }
                if mode == CovarianceMode::PerClass {
                    let cov = &scatter / rows.len() as f64;
                    for i in 0..3 {
                        for j in 0..3 {
                            assert!((cov[(i, j)] - m.covariances[c as usize][(i, j)]).abs() < 1e-10);
                        }
                    }
                }
                pooled += scatter;
            }
            if mode == CovarianceMode::Tied {
                pooled /= 200.0;
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((pooled[(i, j)] - m.covariances[0][(i, j)]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn precision_inverts_regularized_covariance() {
        let (x, labels) = random_points(60, 4, 5);
        let m = class_statistics(&x, &labels, CovarianceMode::PerClass, Regularization::Auto).unwrap();
        for (cov, prec) in m.covariances.iter().zip(&m.precisions) {
            assert!(cov.max_relative_asymmetry() < 1e-9);
            let prod = prec.matmul(&cov.add_diagonal(m.reg_lambda)).unwrap();
            let resid = prod.sub(&Matrix::identity(4)).unwrap();
            assert!(resid.frobenius_norm() < 1e-6);
        }
    }

    #[test]
    fn singular_covariance_falls_back_to_clamping() {
        // Rank-one covariance with zero regularizer.
        let cov = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]], 2).unwrap();
        let p = regularized_precision(&cov, 0.0).unwrap();
        assert!(p.data().iter().all(|v| v.is_finite()));
        // Along (1,1)/√2 eigenvalue 2 → 1/2.
        let u = [std::f64::consts::FRAC_1_SQRT_2; 2];
        let d = mahalanobis_sq(&u, &[0.0, 0.0], &p).unwrap();
        assert!((d - 0.5).abs() < 1e-4, "{d}");
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = symmetric_eig(&Matrix::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);

        let e = symmetric_eig(&Matrix::diagonal(&[1.0, 2.0])).unwrap();
        assert_eq!(e.values, vec![2.0, 1.0]);
        assert_eq!(e.vectors[(1, 0)].abs(), 1.0);
        assert_eq!(e.vectors[(0, 1)].abs(), 1.0);
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]], 2).unwrap();
        assert!(matches!(symmetric_eig(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn eig_random_six_by_six_reconstructs() {
        for seed in 0..10 {
            let m = random_symmetric(6, seed);
            let e = symmetric_eig(&m).unwrap();
            let rel = reconstruct(&e).sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
            assert!(rel < 1e-8, "seed {seed}: residual {rel}");
            let vtv = e.vectors.transpose().matmul(&e.vectors).unwrap();
            assert!(vtv.sub(&Matrix::identity(6)).unwrap().frobenius_norm() < 1e-8);
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));

            let reference = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_row_slice(6, 6, m.data()));
            let mut expected: Vec<f64> = reference.eigenvalues.iter().copied().collect();
            expected.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in e.values.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mahalanobis_hand_cases() {
        let i2 = Matrix::identity(2);
        assert_eq!(mahalanobis_sq(&[1.0, 2.0], &[1.0, 2.0], &i2).unwrap(), 0.0);
        assert_eq!(mahalanobis_sq(&[3.0, 4.0], &[0.0, 0.0], &i2).unwrap(), 25.0);
        let p = spd_inverse(&Matrix::diagonal(&[4.0, 1.0])).unwrap();
        assert!((mahalanobis_sq(&[2.0, 1.0], &[0.0, 0.0], &p).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(mahalanobis_sq(&[1.0], &[0.0, 0.0], &i2), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn eigenvalue_sum_equals_trace(seed in 0u64..1000, n in 1usize..8) {
            let m = random_symmetric(n, seed);
            let e = symmetric_eig(&m).unwrap();
            let sum: f64 = e.values.iter().sum();
            let scale = m.frobenius_norm().max(1.0);
            prop_assert!((sum - m.trace()).abs() <= 1e-8 * scale);
        }

        #[test]
        fn class_statistics_is_permutation_invariant(seed in 0u64..500) {
            let (x, labels) = random_points(40, 3, seed);
            let base = class_statistics(&x, &labels, CovarianceMode::Tied, Regularization::Auto).unwrap();
            let mut order: Vec<usize> = (0..40).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let rows: Vec<&[f64]> = order.iter().map(|&i| x.row(i)).collect();
            let shuffled = Matrix::from_rows(&rows, 3).unwrap();
            let lab: Vec<i64> = order.iter().map(|&i| labels[i]).collect();
            let other = class_statistics(&shuffled, &lab, CovarianceMode::Tied, Regularization::Auto).unwrap();
            for (a, b) in base.covariances[0].data().iter().zip(other.covariances[0].data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (ma, mb) in base.means.iter().zip(&other.means) {
                for (a, b) in ma.iter().zip(mb) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn mahalanobis_nonnegative_and_regularization_monotone(
            seed in 0u64..500,
            l1 in 0.0f64..2.0,
            extra in 0.0f64..2.0,
        ) {
            let (x, labels) = random_points(12, 3, seed);
            let lo = class_statistics(&x, &labels, CovarianceMode::Tied, Regularization::Fixed(l1 + 1e-3)).unwrap();
            let hi = class_statistics(&x, &labels, CovarianceMode::Tied, Regularization::Fixed(l1 + 1e-3 + extra)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..10 {
                let q: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
                let a = mahalanobis_sq(&q, &lo.means[0], &lo.precisions[0]).unwrap();
                let b = mahalanobis_sq(&q, &hi.means[0], &hi.precisions[0]).unwrap();
                prop_assert!(a >= 0.0 && b >= 0.0);
                prop_assert!(b <= a * (1.0 + 1e-9) + 1e-12);
            }
        }
    }
}
