//! Dictionary learning from target-class voxels by alternating a lasso
//! coefficient step (FISTA) with a unit-column dictionary step.
//!
//! Both steps descend the shared objective `‖Y − DA‖²_F + ρ‖A‖₁`, so the
//! recorded trace never increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matcore::{dot, frobenius, l2, norm, singular_values, Mat, NormKind};
use crate::prox::shrink;

const UNIT_TOL: f64 = 1e-10;
const RIDGE: f64 = 1e-10;
const MAX_ATOM_SWEEPS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Learned { rho: f64 },
    SampledVoxels,
    External,
}

/// An `f × d` dictionary; `unit_columns` is recomputed on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    mat: Mat,
    unit_columns: bool,
    provenance: Provenance,
}

impl Dictionary {
    pub fn new(mat: Mat, provenance: Provenance) -> Self {
        let unit_columns = mat.column_norms().iter().all(|n| (n - 1.0).abs() <= UNIT_TOL);
        Dictionary { mat, unit_columns, provenance }
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn into_mat(self) -> Mat {
        self.mat
    }

    pub fn atoms(&self) -> usize {
        self.mat.cols()
    }

    pub fn unit_columns(&self) -> bool {
        self.unit_columns
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DictLearnConfig {
    pub atoms: usize,
    pub rho: f64,
    /// Stop once `‖Y − DA‖_F / ‖Y‖_F < epsilon`.
    pub epsilon: f64,
    pub max_alternations: usize,
    pub fista_iters: usize,
    pub seed: u64,
}

impl DictLearnConfig {
    pub fn new(atoms: usize, rho: f64) -> Self {
        DictLearnConfig {
            atoms,
            rho,
            epsilon: 1e-3,
            max_alternations: 100,
            fista_iters: 200,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms == 0 {
            return Err(Error::Precondition("need at least one atom".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Precondition(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Precondition(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `‖Y − DA‖²_F + ρ‖A‖₁`.
pub fn lasso_objective(y: &Mat, d: &Mat, a: &Mat, rho: f64) -> Result<f64> {
    let fit = frobenius(&y.sub(&d.matmul(a)?)?);
    Ok(fit * fit + rho * norm(a, NormKind::L1)?)
}

fn check_lasso(y: &Mat, d: &Mat, rho: f64) -> Result<()> {
    if y.rows() != d.rows() {
        return Err(Error::Dimension(format!(
            "data has {} rows but dictionary has {}",
            y.rows(),
            d.rows()
        )));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::Precondition(format!("rho must be finite and >= 0, got {rho}")));
    }
    Ok(())
}

/// FISTA on `‖Y − DA‖²_F + ρ‖A‖₁` from `A = 0`.
pub fn fista_lasso(y: &Mat, d: &Mat, rho: f64, iters: usize) -> Result<Mat> {
    fista_lasso_from(y, d, rho, iters, Mat::zeros(d.cols(), y.cols()))
}

/// FISTA from a warm start. Returns the best iterate seen, so the objective
/// never exceeds that of `a0`.
pub fn fista_lasso_from(y: &Mat, d: &Mat, rho: f64, iters: usize, a0: Mat) -> Result<Mat> {
    check_lasso(y, d, rho)?;
    if a0.shape() != (d.cols(), y.cols()) {
        return Err(Error::Dimension(format!(
            "warm start is {:?}, expected {}x{}",
            a0.shape(),
            d.cols(),
            y.cols()
        )));
    }
    let smax = singular_values(d)?.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(Mat::zeros(d.cols(), y.cols()));
    }
    // gradient of the unhalved fit is 2Dᵀ(DA − Y), Lipschitz 2σ_max².
    let eta = 1.0 / (2.0 * smax * smax);
    let tau = rho * eta;

    let mut best_obj = lasso_objective(y, d, &a0, rho)?;
    let mut best = a0.clone();
    let mut a_prev = a0.clone();
    let mut a = a0;
    let (mut t_prev, mut t) = (1.0f64, 1.0f64);
    for _ in 0..iters {
        let beta = (t_prev - 1.0) / t;
        let z = if beta == 0.0 { a.clone() } else { a.zip_map(&a_prev, |c, p| c + beta * (c - p)) };
        let resid = y.sub(&d.matmul(&z)?)?;
        let grad = d.t_matmul(&resid)?;
        let next = z.zip_map(&grad, |zv, g| shrink(zv + (2.0 * g) * eta, tau));
        a_prev = std::mem::replace(&mut a, next);
        t_prev = t;
        t = (1.0 + (4.0 * t * t + 1.0).sqrt()) / 2.0;

        let obj = lasso_objective(y, d, &a, rho)?;
        if !obj.is_finite() {
            return Err(Error::Divergence { iteration: 0 });
        }
        if obj < best_obj {
            best_obj = obj;
            best = a.clone();
        }
    }
    Ok(best)
}

fn unit_column(v: &[f64]) -> Option<Vec<f64>> {
    let n = l2(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

fn random_unit(rng: &mut ChaCha8Rng, f: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = unit_column(&v) {
            return u;
        }
    }
}

/// Standard-normal `f × d` matrix with unit columns.
pub fn random_dictionary(f: usize, d: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..d).map(|_| random_unit(&mut rng, f)).collect();
    Mat::from_raw(f, d, cols.concat())
}

fn fit_sq(y: &Mat, d: &Mat, a: &Mat) -> Result<f64> {
    let r = frobenius(&y.sub(&d.matmul(a)?)?);
    Ok(r * r)
}

/// Ridge-damped least-squares solve `Y Aᵀ (AAᵀ + εI)⁻¹` with columns renormalized.
fn normalized_least_squares(y: &Mat, a: &Mat) -> Option<Mat> {
    let mut gram = a.matmul_t(a).ok()?.to_nalgebra();
    for i in 0..gram.nrows() {
        gram[(i, i)] += RIDGE;
    }
    let rhs = y.matmul_t(a).ok()?.to_nalgebra().transpose();
    let sol = gram.cholesky()?.solve(&rhs).transpose();
    let b = Mat::from_nalgebra(&sol);
    let cols: Option<Vec<Vec<f64>>> = (0..b.cols()).map(|j| unit_column(b.col(j))).collect();
    Some(Mat::from_raw(b.rows(), b.cols(), cols?.concat()))
}

/// Dictionary step: minimizes `‖Y − DA‖_F` over unit-column `D` with `A` fixed.
///
/// Starts from the better of `d_prev` and the normalized least-squares
/// solution, then runs block coordinate descent over atoms, each update being
/// the exact minimizer on the sphere. Atoms unused by `A` are redrawn from the
/// unit sphere with `seed`. The returned fit never exceeds that of `d_prev`.
pub fn dict_update(y: &Mat, a: &Mat, d_prev: &Mat, seed: u64) -> Result<Mat> {
    let (f, k) = d_prev.shape();
    if y.rows() != f || a.rows() != k || a.cols() != y.cols() {
        return Err(Error::Dimension(format!(
            "Y {:?}, A {:?} and D {:?} do not conform",
            y.shape(),
            a.shape(),
            d_prev.shape()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let usage: Vec<bool> = (0..k).map(|i| a.row(i).iter().any(|&x| x != 0.0)).collect();

    let mut start = d_prev.clone();
    for j in (0..k).filter(|&j| !usage[j]) {
        start.col_mut(j).copy_from_slice(&random_unit(&mut rng, f));
    }
    let start_fit = fit_sq(y, &start, a)?;
    let mut d = start.clone();
    let mut cur_fit = start_fit;
    if let Some(mut ls) = normalized_least_squares(y, a) {
        for j in (0..k).filter(|&j| !usage[j]) {
            ls.col_mut(j).copy_from_slice(start.col(j));
        }
        let ls_fit = fit_sq(y, &ls, a)?;
        if ls_fit < cur_fit {
            d = ls;
            cur_fit = ls_fit;
        }
    }

    // R_j a_jᵀ = (YAᵀ)_j − D (AAᵀ)_j + d_j (AAᵀ)_jj
    let p = y.matmul_t(a)?;
    let g = a.matmul_t(a)?;
    for _ in 0..MAX_ATOM_SWEEPS {
        for j in (0..k).filter(|&j| usage[j]) {
            let mut target = p.col(j).to_vec();
            for (i, t) in target.iter_mut().enumerate() {
                let mut acc = 0.0;
                for q in 0..k {
                    if q != j {
                        acc += d.get(i, q) * g.get(q, j);
                    }
                }
                *t -= acc;
            }
            if let Some(u) = unit_column(&target) {
                if dot(&u, &target) >= dot(d.col(j), &target) {
                    d.col_mut(j).copy_from_slice(&u);
                }
            }
        }
        let fit = fit_sq(y, &d, a)?;
        let improved = cur_fit - fit;
        cur_fit = fit.min(cur_fit);
        if improved <= 1e-14 * cur_fit.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    if fit_sq(y, &d, a)? <= fit_sq(y, d_prev, a)? {
        Ok(d)
    } else {
        Ok(d_prev.clone())
    }
}

#[derive(Clone, Debug)]
pub struct LearnOutcome {
    pub dictionary: Dictionary,
    pub coefficients: Mat,
    /// Joint objective `‖Y − DA‖² + ρ‖A‖₁`; entry 0 is the initialization
    /// with `A = 0`, then one entry per alternation.
    pub fit_trace: Vec<f64>,
    /// `‖Y − DA‖_F / ‖Y‖_F`, aligned with `fit_trace`.
    pub relative_fits: Vec<f64>,
}

/// Alternates coefficient and dictionary steps until the relative fit drops
/// below `epsilon` or `max_alternations` is reached.
pub fn learn_dictionary(y: &Mat, cfg: &DictLearnConfig) -> Result<LearnOutcome> {
    cfg.validate()?;
    let ynorm = frobenius(y);
    if ynorm == 0.0 || y.is_empty() {
        return Err(Error::Degenerate("cannot learn a dictionary from all-zero data".into()));
    }
    let mut d = random_dictionary(y.rows(), cfg.atoms, cfg.seed);
    let mut a = Mat::zeros(cfg.atoms, y.cols());
    let mut fit_trace = vec![lasso_objective(y, &d, &a, cfg.rho)?];
    let mut relative_fits = vec![1.0];

    for k in 0..cfg.max_alternations {
        if relative_fits.last().copied().unwrap_or(1.0) < cfg.epsilon {
            break;
        }
        a = fista_lasso_from(y, &d, cfg.rho, cfg.fista_iters, a)?;
        d = dict_update(y, &a, &d, cfg.seed.wrapping_add(k as u64 + 1))?;
        fit_trace.push(lasso_objective(y, &d, &a, cfg.rho)?);
        relative_fits.push(fit_sq(y, &d, &a)?.sqrt() / ynorm);
    }

    Ok(LearnOutcome {
        dictionary: Dictionary::new(d, Provenance::Learned { rho: cfg.rho }),
        coefficients: a,
        fit_trace,
        relative_fits,
    })
}
