//! Comparison methods that work on pseudo-inversed data or score voxels by
//! matched filtering.
//!
//! The pseudo-inverse variants map the data through `D†` and then run the
//! same APG solver with the identity as dictionary.

use crate::error::{Error, Result};
use crate::matcore::{l2, pseudo_inverse, Mat};
use crate::solver::{apg_demix, DemixConfig, DemixSolution, SparsityMode};

/// `M̃ = D†M`, the data expressed in dictionary coordinates.
pub fn pinv_transform(m: &Mat, d: &Mat) -> Result<Mat> {
    if d.rows() != m.rows() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows but data has {}",
            d.rows(),
            m.rows()
        )));
    }
    if d.cols() > d.rows() {
        return Err(Error::Precondition("pseudo-inverse baselines need a thin dictionary".into()));
    }
    pseudo_inverse(d)?.matmul(m)
}

fn solve_transformed(m: &Mat, d: &Mat, cfg: &DemixConfig, mode: SparsityMode) -> Result<DemixSolution> {
    if cfg.mode != mode {
        return Err(Error::Precondition(format!("this baseline needs {mode:?} sparsity")));
    }
    let mt = pinv_transform(m, d)?;
    apg_demix(&mt, &Mat::identity(d.cols()), cfg)
}

/// Robust PCA on `D†M`: entry-wise sparse part with the identity dictionary.
pub fn rpca_pinv(m: &Mat, d: &Mat, cfg: &DemixConfig) -> Result<DemixSolution> {
    solve_transformed(m, d, cfg, SparsityMode::EntryWise)
}

/// Outlier pursuit on `D†M`: column-wise sparse part with the identity dictionary.
pub fn op_pinv(m: &Mat, d: &Mat, cfg: &DemixConfig) -> Result<DemixSolution> {
    solve_transformed(m, d, cfg, SparsityMode::ColumnWise)
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = l2(v);
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

/// `score_j = max_i |⟨d_i/‖d_i‖, m_j/‖m_j‖⟩|`; zero data columns score 0.
pub fn matched_filter(m: &Mat, d: &Mat) -> Result<Vec<f64>> {
    if d.rows() != m.rows() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows but data has {}",
            d.rows(),
            m.rows()
        )));
    }
    let atoms: Vec<Vec<f64>> = (0..d.cols())
        .map(|i| unit(d.col(i)).ok_or_else(|| Error::Degenerate(format!("dictionary column {i} is zero"))))
        .collect::<Result<_>>()?;
    Ok((0..m.cols())
        .map(|j| match unit(m.col(j)) {
            None => 0.0,
            Some(x) => atoms
                .iter()
                .map(|a| a.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>().abs())
                .fold(0.0, f64::max)
                .min(1.0),
        })
        .collect())
}

/// `score_j = ‖M̃_j/‖M̃_j‖‖_∞` on `M̃ = D†M`; zero columns score 0.
pub fn matched_filter_pinv(m: &Mat, d: &Mat) -> Result<Vec<f64>> {
    let mt = pinv_transform(m, d)?;
    Ok((0..mt.cols())
        .map(|j| unit(mt.col(j)).map_or(0.0, |x| x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))))
        .collect())
}
