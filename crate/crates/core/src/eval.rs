//! Detection scores, ROC curves and λ sweeps.
//!
//! A voxel is called positive when its score is at least the threshold. The
//! reported operating point maximizes Youden's J = TPR − FPR.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matcore::{norm, Mat, NormKind};
use crate::solver::{apg_demix, lipschitz_constant, DemixConfig, DemixSolution, SparsityMode};

pub const OPERATING_POINT_RULE: &str = "youden_j: maximize tpr - fpr over the reported curve";
pub const GRID_RULE: &str = "uniform: upper * k / n for k = 1..n";
pub const SCORE_RULE: &str = "column l2 norm of the estimated sparse part";

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(p) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite { row: p, col: 0 });
        }
        if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
            return Err(Error::UndefinedRoc("labels must contain both classes".into()));
        }
        Ok(LabeledScores { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    /// `+∞` for the origin point; serialized as `null` then.
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    /// Ordered from the highest threshold to the lowest.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// Scores were negated because the raw AUC was below 0.5; thresholds
    /// then refer to the negated scores.
    pub flipped: bool,
    pub best_point: RocPoint,
}

/// Curve of `scores` without flipping. The AUC is accumulated in integer
/// counts and divided once, so it is exact for small instances.
fn raw_curve(scores: &[f64], labels: &[bool]) -> (Vec<RocPoint>, f64, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Youden's J compared exactly as tp·neg − fp·pos
    let (mut best, mut best_j) = (0usize, 0i128);
    let mut area2: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        area2 += ((fp - fp0) as u128) * ((tp + tp0) as u128);
        points.push(RocPoint { threshold: t, tpr: tp as f64 / pos as f64, fpr: fp as f64 / neg as f64 });
        let j = (tp * neg) as i128 - (fp * pos) as i128;
        if j > best_j {
            best_j = j;
            best = points.len() - 1;
        }
    }
    let auc = area2 as f64 / (2 * pos as u128 * neg as u128) as f64;
    (points, auc, best)
}

/// Trapezoidal area under a point list ordered by increasing FPR.
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

/// ROC over every distinct score value, flipped when the raw AUC is below 0.5.
pub fn roc(ls: &LabeledScores) -> RocCurve {
    let (mut points, mut auc, mut best) = raw_curve(&ls.scores, &ls.labels);
    let flipped = auc < 0.5;
    if flipped {
        let neg: Vec<f64> = ls.scores.iter().map(|s| -s).collect();
        (points, auc, best) = raw_curve(&neg, &ls.labels);
    }
    let best_point = points[best];
    RocCurve { points, auc, flipped, best_point }
}

/// `score_j = ‖Ŝ_j‖₂`.
pub fn solution_scores(sol: &DemixSolution) -> Vec<f64> {
    sol.s_hat.column_norms()
}

/// Right end of the λ grid, `‖DᵀM‖_∞/‖M‖` (entry-wise) or `‖DᵀM‖_∞,2/‖M‖`
/// (column-wise).
///
/// The quotient is nudged up by a few ulps when needed so that, with ν₀ = ‖M‖,
/// the solver's first sparse update thresholds every entry to zero in floating
/// point as well.
pub fn lambda_upper(m: &Mat, d: &Mat, mode: SparsityMode) -> Result<f64> {
    let nu0 = norm(m, NormKind::Spectral)?;
    if nu0 == 0.0 {
        return Err(Error::Degenerate("data matrix is zero; the lambda range is empty".into()));
    }
    let dtm = d.t_matmul(m)?;
    let bound = norm(&dtm, mode.dual_norm())?;
    if bound == 0.0 {
        return Err(Error::Degenerate("DᵀM is zero; the lambda range is empty".into()));
    }
    let inv_lf = 1.0 / lipschitz_constant(d)?;
    // largest quantity the first prox step compares against its threshold
    let first_step = norm(&dtm.map(|x| 0.0 + x * inv_lf), mode.dual_norm())?;
    let mut lambda = bound / nu0;
    while (nu0 * lambda) * inv_lf < first_step {
        lambda = lambda.next_up();
    }
    Ok(lambda)
}

pub fn lambda_grid(upper: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| if k == n { upper } else { upper * k as f64 / n as f64 }).collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SweepOptions {
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub auc: Option<f64>,
    pub flipped: Option<bool>,
    pub best_tpr: Option<f64>,
    pub best_fpr: Option<f64>,
    pub best_threshold: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub upper: f64,
    pub grid: Vec<f64>,
    pub rows: Vec<SweepRow>,
    /// Index into `grid` of the reported λ; `None` if every solve failed.
    pub best_index: Option<usize>,
    pub best_curve: Option<RocCurve>,
    pub best_solution: Option<DemixSolution>,
}

/// Picks the middle of the first run of grid points sharing the top AUC.
fn pick_best(rows: &[SweepRow]) -> Option<usize> {
    let top = rows.iter().filter_map(|r| r.auc).fold(f64::NEG_INFINITY, f64::max);
    let first = rows.iter().position(|r| r.auc == Some(top))?;
    let run = rows[first..].iter().take_while(|r| r.auc == Some(top)).count();
    Some(first + (run - 1) / 2)
}

fn row_for(lambda: f64, res: &Result<(DemixSolution, RocCurve)>) -> SweepRow {
    match res {
        Ok((sol, c)) => SweepRow {
            lambda,
            auc: Some(c.auc),
            flipped: Some(c.flipped),
            best_tpr: Some(c.best_point.tpr),
            best_fpr: Some(c.best_point.fpr),
            best_threshold: Some(c.best_point.threshold),
            iterations: Some(sol.iters_used),
            converged: Some(sol.converged),
            error: None,
        },
        Err(e) => SweepRow {
            lambda,
            auc: None,
            flipped: None,
            best_tpr: None,
            best_fpr: None,
            best_threshold: None,
            iterations: None,
            converged: None,
            error: Some(e.to_string()),
        },
    }
}

/// Solves on `n_lambdas` grid points over `(0, lambda_upper]`, scores each
/// solution against `labels` and reports the λ with the highest AUC. Failed
/// solves are recorded in the table and do not stop the sweep.
pub fn lambda_sweep(
    m: &Mat,
    d: &Mat,
    base_cfg: &DemixConfig,
    n_lambdas: usize,
    labels: &[bool],
    opts: SweepOptions,
) -> Result<SweepOutcome> {
    if n_lambdas == 0 {
        return Err(Error::Precondition("sweep needs at least one lambda".into()));
    }
    if labels.len() != m.cols() {
        return Err(Error::Dimension(format!("{} labels for {} voxels", labels.len(), m.cols())));
    }
    // validates the label classes up front
    LabeledScores::new(vec![0.0; labels.len()], labels.to_vec())?;
    let upper = lambda_upper(m, d, base_cfg.mode)?;
    let grid = lambda_grid(upper, n_lambdas);

    let run = |lambda: f64| -> Result<(DemixSolution, RocCurve)> {
        let sol = apg_demix(m, d, &base_cfg.with_lambda(lambda))?;
        let curve = roc(&LabeledScores::new(solution_scores(&sol), labels.to_vec())?);
        Ok((sol, curve))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    let results: Vec<Result<(DemixSolution, RocCurve)>> =
        pool.install(|| grid.par_iter().map(|&l| run(l)).collect());

    let rows: Vec<SweepRow> = grid.iter().zip(&results).map(|(&l, r)| row_for(l, r)).collect();
    let best_index = pick_best(&rows);
    let (best_solution, best_curve) = match best_index.map(|i| results.into_iter().nth(i)) {
        Some(Some(Ok((s, c)))) => (Some(s), Some(c)),
        _ => (None, None),
    };
    Ok(SweepOutcome { upper, grid, rows, best_index, best_curve, best_solution })
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportMetadata {
    pub operating_point_rule: &'static str,
    pub grid_rule: &'static str,
    pub score_rule: &'static str,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        ReportMetadata {
            operating_point_rule: OPERATING_POINT_RULE,
            grid_rule: GRID_RULE,
            score_rule: SCORE_RULE,
        }
    }
}

/// JSON evaluation report shared by the solver and every baseline.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SparsityMode>,
    pub lambda_upper: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub best_lambda: Option<f64>,
    pub auc: Option<f64>,
    pub curve: Option<RocCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    pub fn from_sweep(method: &str, mode: SparsityMode, sweep: &SweepOutcome) -> Self {
        EvalReport {
            method: method.to_string(),
            mode: Some(mode),
            lambda_upper: Some(sweep.upper),
            lambda_grid: sweep.grid.clone(),
            rows: sweep.rows.clone(),
            best_lambda: sweep.best_index.map(|i| sweep.grid[i]),
            auc: sweep.best_curve.as_ref().map(|c| c.auc),
            curve: sweep.best_curve.clone(),
            scores: None,
            metadata: ReportMetadata::default(),
        }
    }

    /// Report for one solve at a fixed λ. The curve is present when labels were given.
    pub fn from_solution(
        method: &str,
        mode: SparsityMode,
        lambda: f64,
        sol: &DemixSolution,
        curve: Option<RocCurve>,
    ) -> Self {
        let row = SweepRow {
            lambda,
            auc: curve.as_ref().map(|c| c.auc),
            flipped: curve.as_ref().map(|c| c.flipped),
            best_tpr: curve.as_ref().map(|c| c.best_point.tpr),
            best_fpr: curve.as_ref().map(|c| c.best_point.fpr),
            best_threshold: curve.as_ref().map(|c| c.best_point.threshold),
            iterations: Some(sol.iters_used),
            converged: Some(sol.converged),
            error: None,
        };
        EvalReport {
            method: method.to_string(),
            mode: Some(mode),
            lambda_upper: None,
            lambda_grid: vec![lambda],
            rows: vec![row],
            best_lambda: Some(lambda),
            auc: curve.as_ref().map(|c| c.auc),
            curve,
            scores: Some(solution_scores(sol)),
            metadata: ReportMetadata::default(),
        }
    }

    /// Report for a method that emits scores directly.
    pub fn from_scores(method: &str, scores: Vec<f64>, curve: Option<RocCurve>) -> Self {
        EvalReport {
            method: method.to_string(),
            mode: None,
            lambda_upper: None,
            lambda_grid: Vec::new(),
            rows: Vec::new(),
            best_lambda: None,
            auc: curve.as_ref().map(|c| c.auc),
            curve,
            scores: Some(scores),
            metadata: ReportMetadata::default(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Writes `threshold,tpr,fpr` rows for plotting.
pub fn write_curve_csv(curve: &RocCurve, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &curve.points {
        w.serialize(p).map_err(|e| Error::Precondition(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Precondition(format!("csv: {e}")))?;
    Ok(())
}

pub fn save_curve_csv(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(crate::dataio::FormatError::from)?;
    write_curve_csv(curve, file)
}
