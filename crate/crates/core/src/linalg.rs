//! Dense kernels: symmetric pseudo-inverse, trace of a product, Pearson
//! correlation and simple least squares. Everything accumulates in `f64`.

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts `m` when it is square, finite, and symmetric within
    /// `1e-9 * max|entry|`. The stored matrix is exactly symmetrized.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::OrderMismatch(m.nrows(), m.ncols()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteMatrix);
        }
        let scale = m.amax();
        let mut asym = 0.0f64;
        for i in 0..m.nrows() {
            for j in 0..i {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if asym > 1e-9 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(SymMatrix(symmetrize(m)))
    }

    pub fn zeros(order: usize) -> Self {
        SymMatrix(DMatrix::zeros(order, order))
    }

    pub fn identity(order: usize) -> Self {
        SymMatrix(DMatrix::identity(order, order))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        SymMatrix(DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    m
}

/// Default relative rank cutoff for an order-`d` matrix: `d * eps`.
pub fn default_rtol(order: usize) -> f64 {
    order.max(1) as f64 * f64::EPSILON
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix.
///
/// Eigenvalues with `|lambda| <= rtol * |lambda_max|` are treated as zero.
pub fn pinv(m: &SymMatrix, rtol: f64) -> Result<SymMatrix> {
    let n = m.order();
    if m.is_zero() {
        return Ok(SymMatrix::zeros(n));
    }
    let eig = SymmetricEigen::new(m.0.clone());
    let lmax = eig.eigenvalues.amax();
    let cutoff = rtol * lmax;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            out.ger(1.0 / lambda, &v, &v, 1.0);
        }
    }
    Ok(SymMatrix(symmetrize(out)))
}

fn svd_residual(m: &DMatrix<f64>, svd: &SVD<f64, Dyn, Dyn>) -> Option<f64> {
    let (u, vt) = (svd.u.as_ref()?, svd.v_t.as_ref()?);
    let mut r = m.clone();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        r.ger(-s, &u.column(k), &vt.row(k).transpose(), 1.0);
    }
    Some(r.norm())
}

/// Thin SVD `m = U diag(s) V^T` checked by reconstruction. Returns `(U, s, V)`
/// with singular values in no particular order.
///
/// nalgebra's SVD occasionally returns grossly wrong factors for exactly
/// rank-deficient input, so a failed check retries on the transpose.
pub(crate) fn checked_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let tol = f64::EPSILON.sqrt() * m.norm();
    let svd = SVD::new(m.clone(), true, true);
    if svd_residual(m, &svd).is_some_and(|r| r <= tol) {
        return Ok((svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap().transpose()));
    }
    let t = m.transpose();
    let svd = SVD::new(t.clone(), true, true);
    match svd_residual(&t, &svd) {
        Some(r) if r <= tol => Ok((svd.v_t.unwrap().transpose(), svd.singular_values, svd.u.unwrap())),
        r => Err(Error::Numerical(format!(
            "SVD failed its reconstruction check (residual {:e})",
            r.unwrap_or(f64::NAN)
        ))),
    }
}

/// Orthonormal `k x (k-1)` basis of the complement of a nonzero vector, from
/// the Householder reflector mapping `e_1` onto it.
pub(crate) fn complement_basis(w: &[f64]) -> DMatrix<f64> {
    let k = w.len();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut u = DVector::from_fn(k, |i, _| w[i] / norm);
    u[0] -= 1.0;
    let un = u.norm();
    let mut p = DMatrix::identity(k, k);
    if un > 0.0 {
        u /= un;
        p.ger(-2.0, &u, &u, 1.0);
    }
    p.columns(1, k - 1).into_owned()
}

/// Pseudo-inverse of the Gram matrix `F * F^T` given its factor `F` (order x r).
///
/// Singular values `s` of `F` become eigenvalues `s^2`; the relative cutoff
/// applies to those eigenvalues. Working on the factor keeps roundoff in the
/// null space at `eps^2` scale instead of `eps`.
pub fn pinv_gram(factor: &DMatrix<f64>, rtol: f64) -> Result<SymMatrix> {
    let n = factor.nrows();
    if factor.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    if factor.iter().all(|&v| v == 0.0) || factor.ncols() == 0 {
        return Ok(SymMatrix::zeros(n));
    }
    // a wide factor has the same Gram matrix as the transposed R of its
    // transpose's QR, which is much smaller and decomposes more accurately
    let (u, sv, _) = if factor.ncols() > n {
        checked_svd(&factor.transpose().qr().r().transpose())?
    } else {
        checked_svd(factor)?
    };
    let lmax = sv.iter().fold(0.0f64, |a, &s| a.max(s * s));
    let cutoff = rtol * lmax;
    let mut out = DMatrix::zeros(n, n);
    for (k, &s) in sv.iter().enumerate() {
        let lambda = s * s;
        if lambda > cutoff {
            let v = u.column(k);
            out.ger(1.0 / lambda, &v, &v, 1.0);
        }
    }
    Ok(SymMatrix(symmetrize(out)))
}

/// `trace(a * b)` without forming the product.
pub fn trace_product(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.order() != b.order() {
        return Err(Error::OrderMismatch(a.order(), b.order()));
    }
    let n = a.order();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a.0[(i, j)] * b.0[(j, i)];
        }
    }
    Ok(acc)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    Ok(())
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&v| v == xs[0])
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least 2 points"));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::UndefinedCorrelation("constant sequence"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x` with an intercept.
///
/// A constant `y` gives slope 0 and `r_squared = 1`.
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<RegressionFit> {
    check_pair(x, y)?;
    if x.len() < 2 {
        return Err(Error::UndefinedFit("need at least 2 points"));
    }
    if is_constant(x) {
        return Err(Error::UndefinedFit("constant regressor"));
    }
    if is_constant(y) {
        return Ok(RegressionFit {
            slope: 0.0,
            intercept: y[0],
            r_squared: 1.0,
        });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let r = b - (slope * a + intercept);
        ss_res += r * r;
        ss_tot += (b - my) * (b - my);
    }
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = match checked_svd(m) {
        Ok((_, s, _)) => s.iter().copied().collect(),
        // eigenvalues of the Gram matrix as a last resort
        Err(_) => SymmetricEigen::new(m.transpose() * m)
            .eigenvalues
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .collect(),
    };
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Inverse square root of a symmetric positive definite matrix.
pub(crate) fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.is_nan() || lambda <= 0.0 || lambda.is_infinite() {
            return Err(Error::Numerical(format!(
                "covariance is not positive definite (eigenvalue {lambda:e})"
            )));
        }
        let v = eig.eigenvectors.column(k);
        out.ger(1.0 / lambda.sqrt(), &v, &v, 1.0);
    }
    Ok(symmetrize(out))
}
