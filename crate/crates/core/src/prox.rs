//! Proximal operators of the three penalties: entry-wise soft thresholding
//! (l1), singular value thresholding (nuclear norm) and column-norm block
//! soft thresholding (l1,2).

use crate::error::{Error, Result};
use crate::matcore::{l2, svd, Mat};

/// Name of the column-thresholding rule in use, echoed in reports.
pub const COLUMN_THRESHOLD_RULE: &str = "block_soft";

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Precondition(format!("threshold must be finite and >= 0, got {tau}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn shrink(x: f64, tau: f64) -> f64 {
    let a = x.abs() - tau;
    if a > 0.0 {
        a.copysign(x)
    } else {
        0.0
    }
}

/// `sgn(y) · max(|y| − τ, 0)` entry by entry.
pub fn soft_threshold(y: &Mat, tau: f64) -> Result<Mat> {
    check_tau(tau)?;
    if tau == 0.0 {
        return Ok(y.clone());
    }
    Ok(y.map(|v| shrink(v, tau)))
}

/// Soft-thresholds the singular values: `U · S_τ(Σ) · Vᵀ`.
pub fn svt(y: &Mat, tau: f64) -> Result<Mat> {
    check_tau(tau)?;
    if y.is_empty() {
        return Ok(y.clone());
    }
    Ok(svt_with_nuclear(y, tau)?.0)
}

/// SVT that also returns the nuclear norm of its output, which falls out of the
/// shrunk singular values for free.
pub(crate) fn svt_with_nuclear(y: &Mat, tau: f64) -> Result<(Mat, f64)> {
    let f = svd(y)?;
    let shrunk: Vec<f64> = f.sigma.iter().map(|&s| (s - tau).max(0.0)).collect();
    let nuclear = shrunk.iter().sum();
    Ok((f.recompose_with(&shrunk), nuclear))
}

/// Block soft thresholding of columns: `max(‖y_j‖ − τ, 0) · y_j / ‖y_j‖`.
/// A zero column stays zero.
pub fn column_soft_threshold(y: &Mat, tau: f64) -> Result<Mat> {
    check_tau(tau)?;
    if tau == 0.0 {
        return Ok(y.clone());
    }
    let mut out = y.clone();
    for j in 0..y.cols() {
        let n = l2(y.col(j));
        let c = out.col_mut(j);
        if n <= tau {
            c.iter_mut().for_each(|x| *x = 0.0);
        } else {
            let factor = (n - tau) / n;
            c.iter_mut().for_each(|x| *x *= factor);
        }
    }
    Ok(out)
}
