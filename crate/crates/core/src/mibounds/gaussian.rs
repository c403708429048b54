//! Closed-form mutual information under a Gaussian assumption.

use nalgebra::DMatrix;

use crate::error::{CpicError, Result};
use crate::ndmath::{logdet_psd, logdet_psd_with_grad};
use crate::series::LaggedCovariance;

/// `½[ln det Σ₁₁ + ln det Σ₂₂ − ln det Σ]` for a joint covariance split after
/// the first `split` coordinates.
pub fn gaussian_mi(joint_cov: &DMatrix<f64>, split: usize) -> Result<f64> {
    let d = joint_cov.nrows();
    if joint_cov.ncols() != d {
        return Err(CpicError::shape(
            "joint covariance",
            "square",
            format!("{}x{}", d, joint_cov.ncols()),
        ));
    }
    if split == 0 || split >= d {
        return Err(CpicError::Config(format!(
            "split {split} must lie strictly inside 0..{d}"
        )));
    }
    let a = joint_cov.view((0, 0), (split, split)).into_owned();
    let b = joint_cov
        .view((split, split), (d - split, d - split))
        .into_owned();
    Ok(0.5 * (logdet_psd(&a)? + logdet_psd(&b)? - logdet_psd(joint_cov)?))
}

/// Predictive information between consecutive length-`T` windows of the
/// projected process `Uᵀ x_t`, from the data's lagged covariances.
pub fn gaussian_pi(cov: &LaggedCovariance, u: &DMatrix<f64>, window: usize) -> Result<f64> {
    GaussianPi::new(cov, window)?.value(u)
}

/// Gaussian predictive information as a differentiable function of `U`, with
/// the block-Toeplitz data covariances built once.
#[derive(Debug, Clone)]
pub struct GaussianPi {
    window: usize,
    dim: usize,
    cov_t: DMatrix<f64>,
    cov_2t: DMatrix<f64>,
}

impl GaussianPi {
    pub fn new(cov: &LaggedCovariance, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(CpicError::Config("window must be positive".into()));
        }
        if cov.max_lag() + 1 < 2 * window {
            return Err(CpicError::Config(format!(
                "Gaussian predictive information with T={window} needs lags up to {}, have {}",
                2 * window - 1,
                cov.max_lag()
            )));
        }
        Ok(Self {
            window,
            dim: cov.dim(),
            cov_t: cov.block_toeplitz(window)?,
            cov_2t: cov.block_toeplitz(2 * window)?,
        })
    }

    fn lift(&self, u: &DMatrix<f64>, blocks: usize) -> DMatrix<f64> {
        let (n, d) = (u.nrows(), u.ncols());
        let mut p = DMatrix::zeros(blocks * n, blocks * d);
        for b in 0..blocks {
            p.view_mut((b * n, b * d), (n, d)).copy_from(u);
        }
        p
    }

    fn check(&self, u: &DMatrix<f64>) -> Result<()> {
        if u.nrows() != self.dim {
            return Err(CpicError::shape("projection U rows", self.dim, u.nrows()));
        }
        Ok(())
    }

    pub fn value(&self, u: &DMatrix<f64>) -> Result<f64> {
        self.check(u)?;
        let pt = self.lift(u, self.window);
        let p2 = self.lift(u, 2 * self.window);
        let st = pt.transpose() * &self.cov_t * &pt;
        let s2 = p2.transpose() * &self.cov_2t * &p2;
        Ok(logdet_psd(&st)? - 0.5 * logdet_psd(&s2)?)
    }

    /// Value and gradient with respect to `U`.
    pub fn value_and_grad(&self, u: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        self.check(u)?;
        let (n, d) = (u.nrows(), u.ncols());
        let mut grad = DMatrix::zeros(n, d);
        let mut value = 0.0;
        for (blocks, cov, weight) in [
            (self.window, &self.cov_t, 1.0),
            (2 * self.window, &self.cov_2t, -0.5),
        ] {
            let p = self.lift(u, blocks);
            let cp = cov * &p;
            let s = p.transpose() * &cp;
            let (ld, inv) = logdet_psd_with_grad(&s)?;
            value += weight * ld;
            // d ln det(PᵀCP) / dP = 2 C P (PᵀCP)⁻¹; U enters every diagonal block of P
            let g = cp * inv * (2.0 * weight);
            for b in 0..blocks {
                grad += g.view((b * n, b * d), (n, d));
            }
        }
        Ok((value, grad))
    }
}
