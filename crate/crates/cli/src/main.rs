//! `demix` command-line front end.
//!
//! Every subcommand writes its full result as JSON (or binary containers) and
//! prints a one-line summary on stdout. Exit codes: 0 success, 2 usage,
//! 3 data error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use demix_core::baselines::{matched_filter, matched_filter_pinv, pinv_transform, op_pinv, rpca_pinv};
use demix_core::dataio::{
    fold, normalize_data, normalize_dictionary, read_cube, read_dict, read_labels, synthesize, unfold,
    write_cube, write_dict, write_labels, Construction, HsCube, LabelMap, SynthSparsity, SynthSpec,
};
use demix_core::diagnostics::{certificate, certificate_without_support, DiagnosticsReport, GroundTruth};
use demix_core::dictlearn::{learn_dictionary, DictLearnConfig};
use demix_core::eval::{
    lambda_sweep, lambda_upper, roc, save_curve_csv, solution_scores, EvalReport, LabeledScores, SweepOptions,
};
use demix_core::solver::{DEFAULT_MAX_ITERS, DEFAULT_NU_BAR, DEFAULT_REL_TOL, DEFAULT_SHRINK_FACTOR};
use demix_core::{apg_demix, DemixConfig, DemixSolution, Error, Mat, SparsityMode};

#[derive(Parser)]
#[command(name = "demix", version, about = "Low-rank plus dictionary-sparse demixing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance with known factors.
    Synth(SynthArgs),
    /// Demix a data cube at one lambda or over a lambda sweep.
    Demix(DemixArgs),
    /// Learn a dictionary from the voxels of one class.
    LearnDict(LearnArgs),
    /// Run a comparison method and the same evaluation.
    Baseline(BaselineArgs),
    /// Evaluate the recovery conditions for an instance.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Entry,
    Column,
}

impl From<ModeArg> for SparsityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Entry => SparsityMode::EntryWise,
            ModeArg::Column => SparsityMode::ColumnWise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstructionArg {
    Generic,
    Separated,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    f: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 400)]
    nm: usize,
    #[arg(long, default_value_t = 3)]
    r: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Entry)]
    mode: ModeArg,
    /// Nonzero entries (entry mode) or columns (column mode); defaults to 40 or 20.
    #[arg(long)]
    sparsity: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out_prefix: String,
    #[arg(long, value_enum, default_value_t = ConstructionArg::Generic)]
    construction: ConstructionArg,
    /// Scale of the singular values of L.
    #[arg(long, default_value_t = 1.0)]
    l_scale: f64,
    /// Scale of the nonzero magnitudes of S.
    #[arg(long, default_value_t = 1.0)]
    s_scale: f64,
}

#[derive(Args)]
struct SolveArgs {
    /// Data cube (.hsc).
    #[arg(long)]
    data: PathBuf,
    /// Dictionary (.hsd).
    #[arg(long)]
    dict: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Solve at this lambda.
    #[arg(long, conflicts_with = "sweep")]
    lambda: Option<f64>,
    /// Sweep this many lambdas up to the zero-forcing endpoint; needs --labels.
    #[arg(long)]
    sweep: Option<usize>,
    /// Continuation shrink factor.
    #[arg(long, default_value_t = DEFAULT_SHRINK_FACTOR)]
    v: f64,
    #[arg(long, default_value_t = DEFAULT_NU_BAR)]
    nu_bar: f64,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Label map (.hsl) used for scoring.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Target class id in the label map.
    #[arg(long, default_value_t = 1)]
    class: u32,
    /// Sweep threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Divide the data by its largest magnitude and renormalize the dictionary.
    #[arg(long)]
    normalize: bool,
    /// Also write PREFIX_l.hsc, PREFIX_s.hsc and PREFIX_roc.csv.
    #[arg(long)]
    save_prefix: Option<String>,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DemixArgs {
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    RpcaPinv,
    OpPinv,
    Mf,
    MfPinv,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::RpcaPinv => "rpca-pinv",
            Method::OpPinv => "op-pinv",
            Method::Mf => "mf",
            Method::MfPinv => "mf-pinv",
        }
    }
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    class: u32,
    #[arg(long)]
    atoms: usize,
    #[arg(long)]
    rho: f64,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 100)]
    max_alternations: usize,
    #[arg(long, default_value_t = 200)]
    fista_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Data cube; needed when ground truth is missing.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    dict: PathBuf,
    /// Ground-truth low-rank part (.hsc).
    #[arg(long)]
    gt_l: Option<PathBuf>,
    /// Ground-truth sparse coefficients (.hsc, d bands).
    #[arg(long)]
    gt_s: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Entry)]
    mode: ModeArg,
    /// Lambda for the estimate used when ground truth is missing; defaults to
    /// half the zero-forcing endpoint.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Demix(a) => demix(a),
        Command::LearnDict(a) => learn(a),
        Command::Baseline(a) => baseline(a),
        Command::Diagnose(a) => diagnose(a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 4 } else { 3 })
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Core(Error::Precondition(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn row_cube(m: &Mat) -> demix_core::Result<HsCube> {
    fold(m, 1, m.cols())
}

fn synth(a: SynthArgs) -> CliResult<String> {
    let count = a.sparsity.unwrap_or(match a.mode {
        ModeArg::Entry => 40,
        ModeArg::Column => 20,
    });
    let sparsity = match a.mode {
        ModeArg::Entry => SynthSparsity::EntryWise(count),
        ModeArg::Column => SynthSparsity::ColumnWise(count),
    };
    let mut spec = SynthSpec::new(a.f, a.d, a.nm, a.r, sparsity, a.seed);
    spec.l_scale = a.l_scale;
    spec.s_scale = a.s_scale;
    spec.construction = match a.construction {
        ConstructionArg::Generic => Construction::Generic,
        ConstructionArg::Separated => Construction::Separated,
    };
    let (m, gt, dict) = synthesize(&spec)?;
    let p = &a.out_prefix;
    write_cube(format!("{p}_m.hsc"), &row_cube(&m)?)?;
    write_cube(format!("{p}_l.hsc"), &row_cube(gt.l())?)?;
    write_cube(format!("{p}_s.hsc"), &row_cube(gt.s())?)?;
    write_dict(format!("{p}_dict.hsd"), dict.mat())?;
    let classes = gt.column_labels().iter().map(|&t| if t { 1 } else { 2 }).collect();
    write_labels(format!("{p}_labels.hsl"), &LabelMap::new(1, a.nm, classes)?)?;
    Ok(format!(
        "synth: wrote {p}_{{m,l,s}}.hsc, {p}_dict.hsd, {p}_labels.hsl (f={}, nm={}, d={}, r={}, {} nonzero {})",
        a.f,
        a.nm,
        a.d,
        a.r,
        count,
        if a.mode == ModeArg::Entry { "entries" } else { "columns" }
    ))
}

struct Problem {
    cube_dims: (usize, usize),
    m: Mat,
    d: Mat,
    labels: Option<Vec<bool>>,
}

fn load_problem(s: &SolveArgs) -> CliResult<Problem> {
    let cube = read_cube(&s.data)?;
    let (n, mm, _) = cube.dims();
    let dict = read_dict(&s.dict)?;
    let labels = match &s.labels {
        Some(path) => {
            let map = read_labels(path)?;
            map.check_matches(&cube)?;
            if map.members(s.class).is_empty() {
                return Err(Error::MissingClass(s.class).into());
            }
            Some(map.indicator(s.class))
        }
        None => None,
    };
    let mut m = unfold(&cube);
    let mut d = dict.into_mat();
    if s.normalize {
        let (scaled, scale) = normalize_data(&m)?;
        d = normalize_dictionary(&d, scale)?.into_mat();
        m = scaled;
    }
    Ok(Problem { cube_dims: (n, mm), m, d, labels })
}

fn config(s: &SolveArgs, mode: SparsityMode, lambda: f64) -> DemixConfig {
    let mut cfg = DemixConfig::new(mode, lambda);
    cfg.shrink_factor = s.v;
    cfg.nu_bar = s.nu_bar;
    cfg.rel_tol = s.tol;
    cfg.max_iters = s.max_iters;
    cfg
}

fn curve_for(sol: &DemixSolution, labels: &Option<Vec<bool>>) -> CliResult<Option<demix_core::eval::RocCurve>> {
    match labels {
        Some(l) => Ok(Some(roc(&LabeledScores::new(solution_scores(sol), l.clone())?))),
        None => Ok(None),
    }
}

fn save_outputs(prefix: &Option<String>, p: &Problem, sol: Option<&DemixSolution>, report: &EvalReport) -> CliResult<()> {
    let Some(prefix) = prefix else { return Ok(()) };
    let (n, m) = p.cube_dims;
    if let Some(sol) = sol {
        write_cube(format!("{prefix}_l.hsc"), &fold(&sol.l_hat, n, m)?)?;
        write_cube(format!("{prefix}_s.hsc"), &fold(&sol.s_hat, n, m)?)?;
    }
    if let Some(curve) = &report.curve {
        save_curve_csv(curve, format!("{prefix}_roc.csv"))?;
    }
    Ok(())
}

/// Runs the solver (or a sweep) on `m` with dictionary `d` and builds the report.
fn solve_and_report(
    method: &str,
    s: &SolveArgs,
    mode: SparsityMode,
    p: &Problem,
    m: &Mat,
    d: &Mat,
    solve: impl Fn(&DemixConfig) -> demix_core::Result<DemixSolution>,
) -> CliResult<(EvalReport, Option<DemixSolution>)> {
    match (s.lambda, s.sweep) {
        (Some(lambda), None) => {
            let sol = solve(&config(s, mode, lambda))?;
            let report = EvalReport::from_solution(method, mode, lambda, &sol, curve_for(&sol, &p.labels)?);
            Ok((report, Some(sol)))
        }
        (None, Some(n)) => {
            let labels = p.labels.as_ref().ok_or_else(|| Failure::Usage("--sweep needs --labels".into()))?;
            let sweep = lambda_sweep(m, d, &config(s, mode, 1.0), n, labels, SweepOptions { jobs: s.jobs })?;
            let report = EvalReport::from_sweep(method, mode, &sweep);
            Ok((report, sweep.best_solution))
        }
        _ => Err(Failure::Usage("give exactly one of --lambda or --sweep".into())),
    }
}

fn summarize(report: &EvalReport, out: &Path) -> String {
    let mut parts = Vec::new();
    if let Some(l) = report.best_lambda {
        parts.push(format!("lambda {l:.6}"));
    }
    parts.push(report.auc.map_or("no labels".into(), |a| format!("auc {a:.4}")));
    parts.push(format!("report {}", out.display()));
    let mode = match report.mode {
        Some(SparsityMode::EntryWise) => " entry-wise",
        Some(SparsityMode::ColumnWise) => " column-wise",
        None => "",
    };
    format!("{}{mode}: {}", report.method, parts.join(", "))
}

fn demix(a: DemixArgs) -> CliResult<String> {
    let s = &a.solve;
    let mode: SparsityMode = s.mode.unwrap_or(ModeArg::Entry).into();
    let p = load_problem(s)?;
    let (report, sol) = solve_and_report("demix", s, mode, &p, &p.m, &p.d, |cfg| apg_demix(&p.m, &p.d, cfg))?;
    write_text(&s.out, &report.to_json()?)?;
    save_outputs(&s.save_prefix, &p, sol.as_ref(), &report)?;
    Ok(summarize(&report, &s.out))
}

fn baseline(a: BaselineArgs) -> CliResult<String> {
    let s = &a.solve;
    let p = load_problem(s)?;
    let name = a.method.name();
    let (report, sol) = match a.method {
        Method::RpcaPinv | Method::OpPinv => {
            let mode = if a.method == Method::RpcaPinv { SparsityMode::EntryWise } else { SparsityMode::ColumnWise };
            if let Some(given) = s.mode {
                if SparsityMode::from(given) != mode {
                    return Err(Failure::Usage(format!("{name} runs in {mode:?} mode")));
                }
            }
            let mt = pinv_transform(&p.m, &p.d)?;
            let eye = Mat::identity(p.d.cols());
            solve_and_report(name, s, mode, &p, &mt, &eye, |cfg| match a.method {
                Method::RpcaPinv => rpca_pinv(&p.m, &p.d, cfg),
                _ => op_pinv(&p.m, &p.d, cfg),
            })?
        }
        Method::Mf | Method::MfPinv => {
            let scores = if a.method == Method::Mf {
                matched_filter(&p.m, &p.d)?
            } else {
                matched_filter_pinv(&p.m, &p.d)?
            };
            let curve = match &p.labels {
                Some(l) => Some(roc(&LabeledScores::new(scores.clone(), l.clone())?)),
                None => None,
            };
            (EvalReport::from_scores(name, scores, curve), None)
        }
    };
    write_text(&s.out, &report.to_json()?)?;
    save_outputs(&s.save_prefix, &p, sol.as_ref(), &report)?;
    Ok(summarize(&report, &s.out))
}

fn learn(a: LearnArgs) -> CliResult<String> {
    let cube = read_cube(&a.data)?;
    let labels = read_labels(&a.labels)?;
    labels.check_matches(&cube)?;
    let members = labels.members(a.class);
    if members.is_empty() {
        return Err(Error::MissingClass(a.class).into());
    }
    let y = unfold(&cube).select_columns(&members);
    let mut cfg = DictLearnConfig::new(a.atoms, a.rho);
    cfg.epsilon = a.epsilon;
    cfg.max_alternations = a.max_alternations;
    cfg.fista_iters = a.fista_iters;
    cfg.seed = a.seed;
    let out = learn_dictionary(&y, &cfg)?;
    write_dict(&a.out, out.dictionary.mat())?;
    Ok(format!(
        "learn-dict: {} atoms from {} voxels of class {}, relative fit {:.4e} after {} alternations, wrote {}",
        a.atoms,
        members.len(),
        a.class,
        out.relative_fits.last().copied().unwrap_or(f64::NAN),
        out.fit_trace.len() - 1,
        a.out.display()
    ))
}

fn read_matrix(path: &Path) -> CliResult<Mat> {
    Ok(unfold(&read_cube(path)?))
}

fn diagnose(a: DiagnoseArgs) -> CliResult<String> {
    let mode: SparsityMode = a.mode.into();
    let d = read_dict(&a.dict)?.into_mat();
    let report: DiagnosticsReport = match (&a.gt_l, &a.gt_s) {
        (Some(l), Some(s)) => certificate(&GroundTruth::new(read_matrix(l)?, read_matrix(s)?, mode)?, &d)?,
        _ => {
            let data = a
                .data
                .as_ref()
                .ok_or_else(|| Failure::Usage("--data is required when --gt-l or --gt-s is missing".into()))?;
            let m = read_matrix(data)?;
            let lambda = match a.lambda {
                Some(l) => l,
                None => 0.5 * lambda_upper(&m, &d, mode)?,
            };
            let sol = apg_demix(&m, &d, &DemixConfig::new(mode, lambda))?;
            let l = match &a.gt_l {
                Some(p) => read_matrix(p)?,
                None => sol.l_hat.clone(),
            };
            let s = match &a.gt_s {
                Some(p) => read_matrix(p)?,
                None => {
                    let cut = 1e-6 * sol.s_hat.max_abs();
                    sol.s_hat.map(|x| if x.abs() > cut { x } else { 0.0 })
                }
            };
            let mut rep = certificate_without_support(&l, &s, mode, &d)?;
            rep.warnings.push(format!(
                "ground truth incomplete; missing factors estimated by demixing at lambda = {lambda}"
            ));
            rep
        }
    };
    write_text(&a.out, &report.to_json()?)?;
    Ok(format!(
        "diagnose: mu {:.4} ({:?}), conditions {}, report {}",
        report.mu,
        report.mu_kind,
        if report.theorem_holds { "hold" } else { "fail" },
        a.out.display()
    ))
}
