use nalgebra::DMatrix;

use crate::error::{CpicError, Result};

/// Ridge added to the diagonal before every positive-definite factorization.
pub const PSD_JITTER: f64 = 1e-6;

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(CpicError::shape(
            what,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn jittered_cholesky(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    check_square(m, "logdet_psd input")?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CpicError::NotPositiveDefinite);
    }
    let mut a = m.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += PSD_JITTER;
    }
    a.cholesky().ok_or(CpicError::NotPositiveDefinite)
}

/// `ln det(M + 1e-6·I)` for a symmetric positive semi-definite `M`.
pub fn logdet_psd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = jittered_cholesky(m)?;
    Ok(2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>())
}

/// [`logdet_psd`] together with its gradient `(M + 1e-6·I)^{-1}`, symmetrized.
pub fn logdet_psd_with_grad(m: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let chol = jittered_cholesky(m)?;
    let value = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let inv = chol.inverse();
    let grad = (&inv + inv.transpose()) * 0.5;
    Ok((value, grad))
}

/// Replaces the columns of `m` by an orthonormal basis of their span (thin QR),
/// with signs fixed so the R factor has a nonnegative diagonal.
pub fn orthonormalize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Row-major slice to a matrix.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Matrix to a row-major vector.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}
