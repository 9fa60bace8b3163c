//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

/// Column means of an `m × n` observation matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let m = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / m))
}

/// Sample covariance with `1/(m-1)` normalization around `mean`.
pub fn sample_covariance(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let m = x.nrows();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = if m > 1 { (m - 1) as f64 } else { 1.0 };
    let mut s = centered.tr_mul(&centered) / denom;
    symmetrize(&mut s);
    s
}

/// Observations restricted to `rows`.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Principal submatrix on `idx` (in the given order).
pub fn principal_submatrix(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Inverse of a symmetric positive definite matrix, `None` if Cholesky fails.
pub fn invert_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// `log|A|` for symmetric positive definite `A`.
pub fn log_det_spd(a: &DMatrix<f64>) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let ld = 2.0 * (0..a.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    ld.is_finite().then_some(ld)
}

/// 2-norm condition number of a symmetric matrix; infinite when singular.
pub fn condition_number_sym(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `(x - mu)^T J (x - mu)` over dense storage.
pub fn quad_form(j: &DMatrix<f64>, x: &[f64], mu: &[f64]) -> f64 {
    let n = x.len();
    let d: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut acc = 0.0;
    for c in 0..n {
        let col = j.column(c);
        let mut s = 0.0;
        for r in 0..n {
            s += col[r] * d[r];
        }
        acc += s * d[c];
    }
    acc
}
