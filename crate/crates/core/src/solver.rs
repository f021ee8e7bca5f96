//! Accelerated proximal gradient (APG) with momentum and continuation for the
//! penalized demixing problems
//!
//! ```text
//! min  ν‖L‖_* + νλ‖S‖_1   + ½‖M − L − DS‖²_F     (entry-wise)
//! min  ν‖L‖_* + νλ‖S‖_1,2 + ½‖M − L − DS‖²_F     (column-wise)
//! ```
//!
//! ν starts at `‖M‖` and decays geometrically to `ν̄`. The step size is
//! `1/L_f` with `L_f = λ_max([I D]ᵀ[I D]) = 1 + σ_max(D)²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{frobenius, norm, singular_values, Mat, NormKind};
use crate::prox::{column_soft_threshold, soft_threshold, svt_with_nuclear};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    /// S has few nonzero entries; l1 penalty.
    EntryWise,
    /// S has few nonzero columns; l1,2 penalty.
    ColumnWise,
}

impl SparsityMode {
    /// Norm of `S` penalized in this mode.
    pub fn penalty_norm(self) -> NormKind {
        match self {
            SparsityMode::EntryWise => NormKind::L1,
            SparsityMode::ColumnWise => NormKind::L12,
        }
    }

    /// Dual norm used for the zero-forcing bound on `DᵀM`.
    pub fn dual_norm(self) -> NormKind {
        match self {
            SparsityMode::EntryWise => NormKind::Inf,
            SparsityMode::ColumnWise => NormKind::Inf2,
        }
    }

    fn threshold(self, y: &Mat, tau: f64) -> Result<Mat> {
        match self {
            SparsityMode::EntryWise => soft_threshold(y, tau),
            SparsityMode::ColumnWise => column_soft_threshold(y, tau),
        }
    }
}

pub const DEFAULT_SHRINK_FACTOR: f64 = 0.95;
pub const DEFAULT_NU_BAR: f64 = 1e-4;
pub const DEFAULT_MAX_ITERS: usize = 5000;
pub const DEFAULT_REL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemixConfig {
    pub mode: SparsityMode,
    /// λ_e or λ_c depending on `mode`.
    pub lambda: f64,
    /// Continuation factor `v` in (0, 1).
    pub shrink_factor: f64,
    /// Terminal continuation value ν̄.
    pub nu_bar: f64,
    pub max_iters: usize,
    /// Stop once ν = ν̄ and the relative iterate change drops to this level.
    pub rel_tol: f64,
    /// Overrides ν₀ = ‖M‖. Setting it to `nu_bar` disables continuation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_nu: Option<f64>,
}

impl DemixConfig {
    pub fn new(mode: SparsityMode, lambda: f64) -> Self {
        DemixConfig {
            mode,
            lambda,
            shrink_factor: DEFAULT_SHRINK_FACTOR,
            nu_bar: DEFAULT_NU_BAR,
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
            initial_nu: None,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        DemixConfig { lambda, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Precondition(what.to_string()));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive and finite");
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return bad("shrink factor v must lie in (0, 1)");
        }
        if !(self.nu_bar > 0.0 && self.nu_bar.is_finite()) {
            return bad("nu_bar must be positive and finite");
        }
        if !(self.rel_tol >= 0.0) {
            return bad("rel_tol must be nonnegative");
        }
        if let Some(nu0) = self.initial_nu {
            if !(nu0 > 0.0 && nu0.is_finite()) {
                return bad("initial nu must be positive and finite");
            }
        }
        Ok(())
    }
}

/// Iterates of the APG loop. `t_cur`/`t_prev` are the momentum scalars
/// t[k] and t[k−1]; `nu` is the ν[k] the next step will use.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub l_cur: Mat,
    pub l_prev: Mat,
    pub s_cur: Mat,
    pub s_prev: Mat,
    pub t_cur: f64,
    pub t_prev: f64,
    pub nu: f64,
    pub iter: usize,
}

impl SolverState {
    /// Zero iterates of the right shapes with `t[0] = t[−1] = 1`.
    pub fn zeros(f: usize, atoms: usize, samples: usize, nu: f64) -> Self {
        SolverState {
            l_cur: Mat::zeros(f, samples),
            l_prev: Mat::zeros(f, samples),
            s_cur: Mat::zeros(atoms, samples),
            s_prev: Mat::zeros(atoms, samples),
            t_cur: 1.0,
            t_prev: 1.0,
            nu,
            iter: 0,
        }
    }

    /// A momentum-free state sitting at `(l, s)`.
    pub fn at(l: Mat, s: Mat, nu: f64) -> Self {
        SolverState {
            l_prev: l.clone(),
            s_prev: s.clone(),
            l_cur: l,
            s_cur: s,
            t_cur: 1.0,
            t_prev: 1.0,
            nu,
            iter: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DemixSolution {
    pub l_hat: Mat,
    pub s_hat: Mat,
    pub objective_trace: Vec<f64>,
    pub iters_used: usize,
    pub converged: bool,
}

/// `1 + σ_max(D)²`, the largest eigenvalue of `[I D]ᵀ[I D]`.
pub fn lipschitz_constant(d: &Mat) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::Precondition("dictionary is empty".into()));
    }
    let smax = singular_values(d)?.first().copied().unwrap_or(0.0);
    Ok(1.0 + smax * smax)
}

/// t[k+1] = (1 + √(4t[k]² + 1)) / 2.
#[inline]
pub fn momentum_next(t: f64) -> f64 {
    (1.0 + (4.0 * t * t + 1.0).sqrt()) / 2.0
}

/// ν[k+1] = max(vν[k], ν̄).
#[inline]
pub fn continuation_next(nu: f64, shrink_factor: f64, nu_bar: f64) -> f64 {
    (shrink_factor * nu).max(nu_bar)
}

fn check_shapes(m: &Mat, d: &Mat, l: &Mat, s: &Mat) -> Result<()> {
    if d.rows() != m.rows() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows but data has {}",
            d.rows(),
            m.rows()
        )));
    }
    if l.shape() != m.shape() || s.shape() != (d.cols(), m.cols()) {
        return Err(Error::Dimension(format!(
            "expected L {}x{} and S {}x{}, got {:?} and {:?}",
            m.rows(),
            m.cols(),
            d.cols(),
            m.cols(),
            l.shape(),
            s.shape()
        )));
    }
    Ok(())
}

/// Penalized objective `ν‖L‖_* + νλ‖S‖ + ½‖M − L − DS‖²_F`, with the l1 or
/// l1,2 norm on `S` according to `cfg.mode`.
pub fn objective(m: &Mat, l: &Mat, s: &Mat, d: &Mat, nu: f64, cfg: &DemixConfig) -> Result<f64> {
    check_shapes(m, d, l, s)?;
    let nuclear = norm(l, NormKind::Nuclear)?;
    objective_with_nuclear(m, l, s, d, nu, cfg.lambda, cfg.mode, nuclear)
}

#[allow(clippy::too_many_arguments)]
fn objective_with_nuclear(
    m: &Mat,
    l: &Mat,
    s: &Mat,
    d: &Mat,
    nu: f64,
    lambda: f64,
    mode: SparsityMode,
    nuclear: f64,
) -> Result<f64> {
    let resid = m.sub(l)?.sub(&d.matmul(s)?)?;
    let fit = frobenius(&resid);
    let sparse = norm(s, mode.penalty_norm())?;
    Ok(nu * nuclear + nu * lambda * sparse + 0.5 * fit * fit)
}

/// Result of one APG iteration.
#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    /// ν[k] used by the step.
    pub nu: f64,
    pub objective: f64,
    /// max(‖ΔL‖_F, ‖ΔS‖_F) / max(1, ‖M‖_F).
    pub rel_change: f64,
}

/// Stateful APG iteration, exposed so callers can single-step the loop.
pub struct Apg<'a> {
    m: &'a Mat,
    d: &'a Mat,
    cfg: DemixConfig,
    inv_lf: f64,
    m_scale: f64,
    state: SolverState,
}

impl<'a> Apg<'a> {
    /// Fresh solver at zero with ν₀ = ‖M‖ (or `cfg.initial_nu`), clamped to ν̄.
    pub fn new(m: &'a Mat, d: &'a Mat, cfg: &DemixConfig) -> Result<Self> {
        cfg.validate()?;
        if m.is_empty() || d.is_empty() {
            return Err(Error::Precondition("data and dictionary must be nonempty".into()));
        }
        let nu0 = match cfg.initial_nu {
            Some(v) => v,
            None => norm(m, NormKind::Spectral)?,
        }
        .max(cfg.nu_bar);
        let state = SolverState::zeros(m.rows(), d.cols(), m.cols(), nu0);
        Apg::with_state(m, d, cfg, state)
    }

    pub fn with_state(m: &'a Mat, d: &'a Mat, cfg: &DemixConfig, state: SolverState) -> Result<Self> {
        cfg.validate()?;
        check_shapes(m, d, &state.l_cur, &state.s_cur)?;
        check_shapes(m, d, &state.l_prev, &state.s_prev)?;
        let lf = lipschitz_constant(d)?;
        Ok(Apg {
            m,
            d,
            cfg: cfg.clone(),
            inv_lf: 1.0 / lf,
            m_scale: frobenius(m).max(1.0),
            state,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn into_state(self) -> SolverState {
        self.state
    }

    pub fn lipschitz(&self) -> f64 {
        1.0 / self.inv_lf
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let st = &self.state;
        let inv_lf = self.inv_lf;
        let beta = (st.t_prev - 1.0) / st.t_cur;

        // Momentum points T_L, T_S.
        let (t_l, t_s) = if beta == 0.0 {
            (st.l_cur.clone(), st.s_cur.clone())
        } else {
            (
                st.l_cur.zip_map(&st.l_prev, |c, p| c + beta * (c - p)),
                st.s_cur.zip_map(&st.s_prev, |c, p| c + beta * (c - p)),
            )
        };

        // Gradient step; the residual is the negative gradient direction.
        let resid = self.m.sub(&t_l)?.sub(&self.d.matmul(&t_s)?)?;
        let g_l = t_l.zip_map(&resid, |t, r| t + r * inv_lf);
        let g_s = t_s.zip_map(&self.d.t_matmul(&resid)?, |t, r| t + r * inv_lf);

        let nu = st.nu;
        let (l_next, nuclear) = svt_with_nuclear(&g_l, nu * inv_lf)?;
        let s_next = self.cfg.mode.threshold(&g_s, (nu * self.cfg.lambda) * inv_lf)?;

        let iteration = st.iter + 1;
        if !l_next.is_finite() || !s_next.is_finite() {
            return Err(Error::Divergence { iteration });
        }

        let dl = frobenius(&l_next.sub(&st.l_cur)?);
        let ds = frobenius(&s_next.sub(&st.s_cur)?);
        let rel_change = dl.max(ds) / self.m_scale;
        let objective = objective_with_nuclear(
            self.m,
            &l_next,
            &s_next,
            self.d,
            nu,
            self.cfg.lambda,
            self.cfg.mode,
            nuclear,
        )?;
        if !objective.is_finite() {
            return Err(Error::Divergence { iteration });
        }

        let st = &mut self.state;
        st.l_prev = std::mem::replace(&mut st.l_cur, l_next);
        st.s_prev = std::mem::replace(&mut st.s_cur, s_next);
        let t_next = momentum_next(st.t_cur);
        st.t_prev = st.t_cur;
        st.t_cur = t_next;
        st.nu = continuation_next(nu, self.cfg.shrink_factor, self.cfg.nu_bar);
        st.iter = iteration;

        Ok(StepReport { nu, objective, rel_change })
    }

    /// Iterates until ν has reached ν̄ and the relative change is at most
    /// `rel_tol`, or until `max_iters`.
    pub fn run(mut self) -> Result<DemixSolution> {
        let mut trace = Vec::new();
        let mut converged = false;
        while self.state.iter < self.cfg.max_iters {
            let rep = self.step()?;
            trace.push(rep.objective);
            if rep.nu <= self.cfg.nu_bar && rep.rel_change <= self.cfg.rel_tol {
                converged = true;
                break;
            }
        }
        let st = self.state;
        Ok(DemixSolution {
            l_hat: st.l_cur,
            s_hat: st.s_cur,
            objective_trace: trace,
            iters_used: st.iter,
            converged,
        })
    }
}

/// Solves the penalized demixing problem for `M ≈ L + DS`.
pub fn apg_demix(m: &Mat, d: &Mat, cfg: &DemixConfig) -> Result<DemixSolution> {
    Apg::new(m, d, cfg)?.run()
}
