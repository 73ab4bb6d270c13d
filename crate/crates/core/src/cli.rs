//! Command-line surface: flag parsing, JSON config resolution, report
//! emission, and exit-code mapping. Every subcommand echoes its fully
//! resolved configuration to the output directory, and re-feeding that echo
//! through `--config` reproduces the same outputs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bounds::{
    beta_from_certificate, envelope_check, gamma_from_certificate, inflate_domain,
    sigma_eta_estimate, tbar_threshold, BoundsError, ProbeBudget, SigmaGrids,
};
use crate::bounds::lemma1_probe;
use crate::certifier::{
    certify_decrease, check_sandwich, check_structural, max_sampling_period, CertError, CertGrid,
    LyapunovCandidate, Mode, ScanSpec, StateFn, StructuralGrid,
};
use crate::comparison::{ComparisonFn, KLFn, Kind};
use crate::example::{verify_example, ExampleGrid};
use crate::falsify::{falsify, Claim, FalsificationProblem, FalsifyBudget, FalsifyError};
use crate::grid::linspace;
use crate::models::{build_model, ClosedLoopModel, ModelError};
use crate::report::{
    fmt_f64, write_json, write_table_csv, FalsifyOutcome, ProbeReport, StructuralReport, Verdict,
    WitnessScenario,
};
use crate::rng::{derive_seed, indexed_rng, TAG_INIT, TAG_SCENARIO};
use crate::trajectory::{
    ball_draw, gen_errors, gen_sampling, simulate, ErrorMode, ErrorSpec, SamplingMode,
    SamplingSpec, TrajError, Trajectory,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDING: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;
pub const EXIT_INTERNAL: i32 = 70;

enum CliError {
    Config(String),
    Internal(String),
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CertError> for CliError {
    fn from(e: CertError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrajError> for CliError {
    fn from(e: TrajError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FalsifyError> for CliError {
    fn from(e: FalsifyError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<crate::comparison::ComparisonError> for CliError {
    fn from(e: crate::comparison::ComparisonError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(what: &str, e: std::io::Error) -> CliError {
    CliError::Internal(format!("{what}: {e}"))
}

#[derive(Parser)]
#[command(
    name = "vsrstab",
    version,
    about = "Simulation, certification, and falsification workbench for \
             sampled-data control loops with varying sampling rate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Iterate a closed-loop model under a period/error scenario; emits CSV.
    Simulate(SimulateArgs),
    /// Grid-certify a Lyapunov decrease condition with explicit margins.
    Certify(CertifyArgs),
    /// Probe structural conditions: origin fixedness, smallness, bounded
    /// overshoot tables.
    Structural(StructuralArgs),
    /// Construct trajectory envelopes from a certificate and optionally
    /// check them against a scenario ensemble.
    Bounds(BoundsArgs),
    /// Search for a counterexample to an envelope or decrease claim.
    Falsify(FalsifyArgs),
    /// Empirical epsilon-delta, boundedness, and attractivity tables.
    Probe(ProbeArgs),
    /// Reproduce the built-in workbench example end to end.
    Example(ExampleArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving reports and the resolved-config echo.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = library default). Outputs do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Base seed for every randomized draw in the run.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad number {p:?}: {e}")))
        })
        .collect()
}

fn parse_grid_triple(s: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<&str> = s.split(',').map(|p| p.trim()).collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "grid must be three comma-separated counts, got {s:?}"
        )));
    }
    let mut vals = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        vals[i] = p
            .parse()
            .map_err(|e| CliError::Config(format!("bad grid count {p:?}: {e}")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

/// Period generator micro-syntax: `iid`, `constant:<theta>` (fraction of the
/// period bound, in (0,1)), or `explicit:t1,t2,...`.
fn parse_periods_spec(spec: &str) -> Result<SamplingMode, CliError> {
    if spec == "iid" {
        return Ok(SamplingMode::IIDUniform);
    }
    if let Some(rest) = spec.strip_prefix("constant:") {
        let theta: f64 = rest
            .trim()
            .parse()
            .map_err(|e| CliError::Config(format!("bad constant fraction {rest:?}: {e}")))?;
        return Ok(SamplingMode::Constant(theta));
    }
    if let Some(rest) = spec.strip_prefix("explicit:") {
        return Ok(SamplingMode::Explicit(parse_f64_list(rest)?));
    }
    Err(CliError::Config(format!(
        "unknown periods spec {spec:?}; expected iid, constant:<theta>, or explicit:<list>"
    )))
}

/// Error generator micro-syntax: `zero`, `iid-ball`, `constant:v1,v2,...`,
/// or `list:e11 e12;e21 e22;...` (one step per semicolon group).
fn parse_errors_spec(spec: &str) -> Result<ErrorMode, CliError> {
    if spec == "zero" {
        return Ok(ErrorMode::Zero);
    }
    if spec == "iid-ball" {
        return Ok(ErrorMode::IIDBall);
    }
    if let Some(rest) = spec.strip_prefix("constant:") {
        return Ok(ErrorMode::ConstantVector(parse_f64_list(rest)?));
    }
    if let Some(rest) = spec.strip_prefix("list:") {
        let steps: Result<Vec<Vec<f64>>, CliError> = rest
            .split(';')
            .map(|grp| {
                grp.split_whitespace()
                    .map(|p| {
                        p.parse::<f64>()
                            .map_err(|e| CliError::Config(format!("bad number {p:?}: {e}")))
                    })
                    .collect()
            })
            .collect();
        return Ok(ErrorMode::WorstCaseList(steps?));
    }
    Err(CliError::Config(format!(
        "unknown errors spec {spec:?}; expected zero, iid-ball, constant:<list>, or list:<steps>"
    )))
}

fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err("creating output directory", e))
}

fn echo_config<T: Serialize>(dir: &Path, cfg: &T) -> Result<(), CliError> {
    write_json(&dir.join("resolved_config.json"), cfg)
        .map_err(|e| io_err("writing resolved config", e))
}

/// Runs `f` on a dedicated pool of the requested width. Zero means the
/// ambient default; results are identical either way.
fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn build_model_from(
    model: &str,
    controller: &Option<String>,
    tight_tol: f64,
) -> Result<ClosedLoopModel, CliError> {
    Ok(build_model(model, controller.as_deref(), tight_tol)?)
}

fn comparison_from(src: &str, kind: Kind, what: &str) -> Result<ComparisonFn, CliError> {
    ComparisonFn::from_expr(src, kind)
        .map_err(|e| CliError::Config(format!("{what} {src:?}: {e}")))
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateCfg {
    pub model: String,
    pub controller: Option<String>,
    pub tight_tol: f64,
    pub x0: Vec<f64>,
    pub k_steps: usize,
    pub t_max: f64,
    pub periods_spec: String,
    pub e_bound: f64,
    pub errors_spec: String,
    pub out: String,
    pub witness: Option<String>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SimulateCfg {
    fn default() -> Self {
        SimulateCfg {
            model: "paper_example".into(),
            controller: None,
            tight_tol: 1e-10,
            x0: vec![1.0],
            k_steps: 100,
            t_max: 0.05,
            periods_spec: "iid".into(),
            e_bound: 0.0,
            errors_spec: "zero".into(),
            out: "trajectory.csv".into(),
            witness: None,
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    controller: Option<String>,
    #[arg(long = "tight-tol")]
    tight_tol: Option<f64>,
    /// Initial state, comma-separated.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long = "K-steps")]
    k_steps: Option<usize>,
    /// Open upper bound on every sampling period.
    #[arg(long = "T-max")]
    t_max: Option<f64>,
    #[arg(long = "periods-spec")]
    periods_spec: Option<String>,
    /// Norm bound for generated measurement errors.
    #[arg(long = "E-bound")]
    e_bound: Option<f64>,
    #[arg(long = "errors-spec")]
    errors_spec: Option<String>,
    /// CSV file name inside the output directory.
    #[arg(long)]
    out: Option<String>,
    /// Replay a witness JSON instead of generating a scenario.
    #[arg(long)]
    witness: Option<String>,
}

fn resolve_simulate(a: &SimulateArgs) -> Result<(SimulateCfg, PathBuf), CliError> {
    let mut cfg: SimulateCfg = match &a.common.config {
        Some(p) => load_config(p)?,
        None => SimulateCfg::default(),
    };
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &a.controller {
        cfg.controller = Some(v.clone());
    }
    if let Some(v) = a.tight_tol {
        cfg.tight_tol = v;
    }
    if let Some(v) = &a.x0 {
        cfg.x0 = parse_f64_list(v)?;
    }
    if let Some(v) = a.k_steps {
        cfg.k_steps = v;
    }
    if let Some(v) = a.t_max {
        cfg.t_max = v;
    }
    if let Some(v) = &a.periods_spec {
        cfg.periods_spec = v.clone();
    }
    if let Some(v) = a.e_bound {
        cfg.e_bound = v;
    }
    if let Some(v) = &a.errors_spec {
        cfg.errors_spec = v.clone();
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.witness {
        cfg.witness = Some(v.clone());
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.common.workers {
        cfg.workers = v;
    }
    let out_dir = a.common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, out_dir))
}

fn run_simulate(a: &SimulateArgs) -> Result<i32, CliError> {
    let (cfg, out_dir) = resolve_simulate(a)?;
    prepare_out_dir(&out_dir)?;
    echo_config(&out_dir, &cfg)?;
    let model = build_model_from(&cfg.model, &cfg.controller, cfg.tight_tol)?;
    let (x0, periods, errors) = match &cfg.witness {
        Some(path) => {
            let w: WitnessScenario = load_config(Path::new(path))?;
            (w.x0, w.periods, w.errors)
        }
        None => {
            let periods = gen_sampling(&SamplingSpec {
                mode: parse_periods_spec(&cfg.periods_spec)?,
                t_max: cfg.t_max,
                len: cfg.k_steps,
                seed: cfg.seed,
            })?;
            let errors = gen_errors(&ErrorSpec {
                mode: parse_errors_spec(&cfg.errors_spec)?,
                bound: cfg.e_bound,
                q: model.q,
                len: cfg.k_steps,
                seed: cfg.seed,
            })?;
            (cfg.x0.clone(), periods, errors)
        }
    };
    let traj = with_pool(cfg.workers, || simulate(&model, &x0, &periods, &errors))??;
    let csv = traj.to_csv(model.n, model.q);
    fs::write(out_dir.join(&cfg.out), csv).map_err(|e| io_err("writing trajectory", e))?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// certify

#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyCfg {
    pub model: String,
    pub controller: Option<String>,
    pub tight_tol: f64,
    pub v: String,
    pub alpha1: String,
    pub alpha2: String,
    pub alpha3: String,
    pub rho: Option<String>,
    pub mode: String,
    pub m: f64,
    pub e: f64,
    pub d: f64,
    pub t_bound: f64,
    pub x_points: usize,
    pub e_points: usize,
    pub t_points: usize,
    pub lhs_samples: usize,
    pub lipschitz: Option<f64>,
    pub scan: bool,
    pub scan_t_hi: f64,
    pub scan_coarse: usize,
    pub scan_tol: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for CertifyCfg {
    fn default() -> Self {
        let g = CertGrid::default();
        CertifyCfg {
            model: "paper_example".into(),
            controller: None,
            tight_tol: 1e-10,
            v: "pow(s, 2)".into(),
            alpha1: "0.5 * pow(s, 2)".into(),
            alpha2: "2 * pow(s, 2)".into(),
            alpha3: "pow(s, 2)".into(),
            rho: None,
            mode: "rss".into(),
            m: 1.0,
            e: 0.0,
            d: 0.0,
            t_bound: 0.05,
            x_points: g.x_points,
            e_points: g.e_points,
            t_points: g.t_points,
            lhs_samples: g.lhs_samples,
            lipschitz: None,
            scan: false,
            scan_t_hi: 1.0,
            scan_coarse: 16,
            scan_tol: 1e-4,
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    controller: Option<String>,
    #[arg(long = "tight-tol")]
    tight_tol: Option<f64>,
    /// Lyapunov candidate V as an expression in x1..xn (or s for n = 1).
    #[arg(long = "V")]
    v: Option<String>,
    #[arg(long)]
    alpha1: Option<String>,
    #[arg(long)]
    alpha2: Option<String>,
    #[arg(long)]
    alpha3: Option<String>,
    /// Dead-zone gain; required in siss mode.
    #[arg(long)]
    rho: Option<String>,
    /// rss (disturbance ball) or siss (error ball with dead zone).
    #[arg(long)]
    mode: Option<String>,
    /// State-ball radius for the sweep.
    #[arg(long = "M")]
    m: Option<f64>,
    /// Error-ball radius (siss mode).
    #[arg(long = "E")]
    e: Option<f64>,
    /// Disturbance-ball radius (rss mode).
    #[arg(long = "D")]
    d: Option<f64>,
    /// Open upper bound on the sampling period.
    #[arg(long = "T-bound")]
    t_bound: Option<f64>,
    /// State, error, and period grid counts as "x,e,t".
    #[arg(long)]
    grid: Option<String>,
    #[arg(long = "lhs-samples")]
    lhs_samples: Option<usize>,
    /// Lipschitz constant of the margin function, for the coverage caveat.
    #[arg(long)]
    lipschitz: Option<f64>,
    /// Scan for the largest certifiable period bound instead of checking one.
    #[arg(long)]
    scan: bool,
    #[arg(long = "scan-T-hi")]
    scan_t_hi: Option<f64>,
    #[arg(long = "scan-coarse")]
    scan_coarse: Option<usize>,
    #[arg(long = "scan-tol")]
    scan_tol: Option<f64>,
}

fn resolve_certify(a: &CertifyArgs) -> Result<(CertifyCfg, PathBuf), CliError> {
    let mut cfg: CertifyCfg = match &a.common.config {
        Some(p) => load_config(p)?,
        None => CertifyCfg::default(),
    };
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &a.controller {
        cfg.controller = Some(v.clone());
    }
    if let Some(v) = a.tight_tol {
        cfg.tight_tol = v;
    }
    if let Some(v) = &a.v {
        cfg.v = v.clone();
    }
    if let Some(v) = &a.alpha1 {
        cfg.alpha1 = v.clone();
    }
    if let Some(v) = &a.alpha2 {
        cfg.alpha2 = v.clone();
    }
    if let Some(v) = &a.alpha3 {
        cfg.alpha3 = v.clone();
    }
    if let Some(v) = &a.rho {
        cfg.rho = Some(v.clone());
    }
    if let Some(v) = &a.mode {
        cfg.mode = v.clone();
    }
    if let Some(v) = a.m {
        cfg.m = v;
    }
    if let Some(v) = a.e {
        cfg.e = v;
    }
    if let Some(v) = a.d {
        cfg.d = v;
    }
    if let Some(v) = a.t_bound {
        cfg.t_bound = v;
    }
    if let Some(v) = &a.grid {
        let (x, e, t) = parse_grid_triple(v)?;
        cfg.x_points = x;
        cfg.e_points = e;
        cfg.t_points = t;
    }
    if let Some(v) = a.lhs_samples {
        cfg.lhs_samples = v;
    }
    if let Some(v) = a.lipschitz {
        cfg.lipschitz = Some(v);
    }
    if a.scan {
        cfg.scan = true;
    }
    if let Some(v) = a.scan_t_hi {
        cfg.scan_t_hi = v;
    }
    if let Some(v) = a.scan_coarse {
        cfg.scan_coarse = v;
    }
    if let Some(v) = a.scan_tol {
        cfg.scan_tol = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.common.workers {
        cfg.workers = v;
    }
    let out_dir = a.common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, out_dir))
}

fn candidate_from_cfg(cfg: &CertifyCfg, n: usize) -> Result<(LyapunovCandidate, Mode), CliError> {
    let mode = match cfg.mode.as_str() {
        "rss" => Mode::RssVsr,
        "siss" => Mode::SissVsr,
        other => {
            return Err(CliError::Config(format!(
                "mode must be rss or siss, got {other:?}"
            )))
        }
    };
    let rho = match &cfg.rho {
        Some(src) => Some(comparison_from(src, Kind::ClassK, "rho")?),
        None => None,
    };
    if mode == Mode::SissVsr && rho.is_none() {
        return Err(CliError::Config("siss mode requires --rho".into()));
    }
    let e_or_d = match mode {
        Mode::RssVsr => cfg.d,
        Mode::SissVsr => cfg.e,
    };
    let cand = LyapunovCandidate {
        v: StateFn::from_expr(&cfg.v, n)?,
        alpha1: comparison_from(&cfg.alpha1, Kind::ClassKInfinity, "alpha1")?,
        alpha2: comparison_from(&cfg.alpha2, Kind::ClassKInfinity, "alpha2")?,
        alpha3: comparison_from(&cfg.alpha3, Kind::ClassKInfinity, "alpha3")?,
        rho,
        m: cfg.m,
        e_or_d,
    };
    Ok((cand, mode))
}

fn run_certify(a: &CertifyArgs) -> Result<i32, CliError> {
    let (cfg, out_dir) = resolve_certify(a)?;
    prepare_out_dir(&out_dir)?;
    echo_config(&out_dir, &cfg)?;
    let model = build_model_from(&cfg.model, &cfg.controller, cfg.tight_tol)?;
    let (cand, mode) = candidate_from_cfg(&cfg, model.n)?;
    let grid = CertGrid {
        x_points: cfg.x_points,
        e_points: cfg.e_points,
        t_points: cfg.t_points,
        lhs_samples: cfg.lhs_samples,
        seed: cfg.seed,
        lipschitz: cfg.lipschitz,
    };
    let scan = ScanSpec {
        t_hi: cfg.scan_t_hi,
        coarse: cfg.scan_coarse,
        refine_tol: cfg.scan_tol,
    };
    let outcome = with_pool(cfg.workers, || -> Result<_, CertError> {
        let sandwich = check_sandwich(&cand, model.n, &grid)?;
        let decrease = if cfg.scan {
            match max_sampling_period(&model, &cand, mode, &scan, &grid) {
                Ok(r) => r.report,
                Err(CertError::NoneCertified { t }) => {
                    certify_decrease(&model, &cand, mode, t, &grid)?
                }
                Err(e) => return Err(e),
            }
        } else {
            certify_decrease(&model, &cand, mode, cfg.t_bound, &grid)?
        };
        Ok((sandwich, decrease))
    })??;
    let (sandwich, decrease) = outcome;
    write_json(&out_dir.join("sandwich.json"), &sandwich)
        .map_err(|e| io_err("writing sandwich report", e))?;
    write_json(&out_dir.join("certification.json"), &decrease)
        .map_err(|e| io_err("writing certification report", e))?;
    let verdicts = [sandwich.verdict, decrease.verdict];
    if verdicts.contains(&Verdict::ViolatedAt) {
        return Ok(EXIT_FINDING);
    }
    if verdicts.contains(&Verdict::Inconclusive) {
        return Ok(EXIT_INCONCLUSIVE);
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// structural

#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructuralCfg {
    pub model: String,
    pub controller: Option<String>,
    pub tight_tol: f64,
    pub t_probe: f64,
    pub eps_grid: Vec<f64>,
    pub m_grid: Vec<f64>,
    pub e_grid: Vec<f64>,
    pub axis_points: usize,
    pub lhs_samples: usize,
    pub t_points: usize,
    pub delta_candidates: usize,
    pub delta_min: f64,
    pub delta_axis_points: usize,
    pub delta_lhs_samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for StructuralCfg {
    fn default() -> Self {
        let g = StructuralGrid::default();
        StructuralCfg {
            model: "paper_example".into(),
            controller: None,
            tight_tol: 1e-10,
            t_probe: 0.05,
            eps_grid: vec![0.1, 0.25, 0.5, 1.0],
            m_grid: vec![0.25, 0.5, 1.0],
            e_grid: vec![0.0, 0.01, 0.025],
            axis_points: g.axis_points,
            lhs_samples: g.lhs_samples,
            t_points: g.t_points,
            delta_candidates: g.delta_candidates,
            delta_min: g.delta_min,
            delta_axis_points: g.delta_axis_points,
            delta_lhs_samples: g.delta_lhs_samples,
            seed: 0,
            workers: 0,
        }
    }
}

#[derive(Args)]
struct StructuralArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    controller: Option<String>,
    #[arg(long = "tight-tol")]
    tight_tol: Option<f64>,
    /// Open upper bound on probed sampling periods.
    #[arg(long = "T-probe")]
    t_probe: Option<f64>,
    /// Epsilon values for the smallness table, comma-separated.
    #[arg(long = "eps-grid")]
    eps_grid: Option<String>,
    /// State-ball radii for the overshoot table.
    #[arg(long = "M-grid")]
    m_grid: Option<String>,
    /// Error-ball radii for the overshoot table.
    #[arg(long = "E-grid")]
    e_grid: Option<String>,
    #[arg(long = "axis-points")]
    axis_points: Option<usize>,
    #[arg(long = "lhs-samples")]
    lhs_samples: Option<usize>,
    #[arg(long = "t-points")]
    t_points: Option<usize>,
    #[arg(long = "delta-candidates")]
    delta_candidates: Option<usize>,
    #[arg(long = "delta-min")]
    delta_min: Option<f64>,
    #[arg(long = "delta-axis-points")]
    delta_axis_points: Option<usize>,
    #[arg(long = "delta-lhs-samples")]
    delta_lhs_samples: Option<usize>,
}

fn resolve_structural(a: &StructuralArgs) -> Result<(StructuralCfg, PathBuf), CliError> {
    let mut cfg: StructuralCfg = match &a.common.config {
        Some(p) => load_config(p)?,
        None => StructuralCfg::default(),
    };
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &a.controller {
        cfg.controller = Some(v.clone());
    }
    if let Some(v) = a.tight_tol {
        cfg.tight_tol = v;
    }
    if let Some(v) = a.t_probe {
        cfg.t_probe = v;
    }
    if let Some(v) = &a.eps_grid {
        cfg.eps_grid = parse_f64_list(v)?;
    }
    if let Some(v) = &a.m_grid {
        cfg.m_grid = parse_f64_list(v)?;
    }
    if let Some(v) = &a.e_grid {
        cfg.e_grid = parse_f64_list(v)?;
    }
    if let Some(v) = a.axis_points {
        cfg.axis_points = v;
    }
    if let Some(v) = a.lhs_samples {
        cfg.lhs_samples = v;
    }
    if let Some(v) = a.t_points {
        cfg.t_points = v;
    }
    if let Some(v) = a.delta_candidates {
        cfg.delta_candidates = v;
    }
    if let Some(v) = a.delta_min {
        cfg.delta_min = v;
    }
    if let Some(v) = a.delta_axis_points {
        cfg.delta_axis_points = v;
    }
    if let Some(v) = a.delta_lhs_samples {
        cfg.delta_lhs_samples = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.common.workers {
        cfg.workers = v;
    }
    let out_dir = a.common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, out_dir))
}

fn run_structural(a: &StructuralArgs) -> Result<i32, CliError> {
    let (cfg, out_dir) = resolve_structural(a)?;
    prepare_out_dir(&out_dir)?;
    echo_config(&out_dir, &cfg)?;
    let model = build_model_from(&cfg.model, &cfg.controller, cfg.tight_tol)?;
    let grid = StructuralGrid {
        axis_points: cfg.axis_points,
        lhs_samples: cfg.lhs_samples,
        t_points: cfg.t_points,
        delta_candidates: cfg.delta_candidates,
        delta_min: cfg.delta_min,
        delta_axis_points: cfg.delta_axis_points,
        delta_lhs_samples: cfg.delta_lhs_samples,
        seed: cfg.seed,
    };
    let result = with_pool(cfg.workers, || {
        check_structural(
            &model,
            cfg.t_probe,
            &cfg.eps_grid,
            &cfg.m_grid,
            &cfg.e_grid,
            &grid,
        )
    })?;
    let (report, code) = match result {
        Ok(rep) => (rep, EXIT_OK),
        Err(CertError::OriginNotFixed { residual }) => (
            StructuralReport {
                origin_residual: residual,
                t_probe: cfg.t_probe,
                delta_table: vec![],
                m_values: cfg.m_grid.clone(),
                e_values: cfg.e_grid.clone(),
                c_table: vec![],
                caveats: vec![
                    "the origin is not a fixed point of the step map; no further \
                     structural evidence was gathered"
                        .into(),
                ],
            },
            EXIT_FINDING,
        ),
        Err(e) => return Err(e.into()),
    };
    write_json(&out_dir.join("structural.json"), &report)
        .map_err(|e| io_err("writing structural report", e))?;
    let delta_rows: Vec<(f64, f64)> = report
        .delta_table
        .iter()
        .map(|d| (d.eps, d.delta.unwrap_or(f64::NAN)))
        .collect();
    write_table_csv(&out_dir.join("delta_table.csv"), ("arg", "value"), &delta_rows)
        .map_err(|e| io_err("writing delta table", e))?;
    Ok(code)
}

// ---------------------------------------------------------------------------
// bounds

#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsCfg {
    pub model: String,
    pub controller: Option<String>,
    pub tight_tol: f64,
    pub alpha1: String,
    pub alpha2: String,
    pub alpha3: String,
    pub rho: String,
    pub m0: f64,
    pub e0: f64,
    pub t_tilde: f64,
    pub t_bar_e: Option<f64>,
    pub r: f64,
    pub sigma_points: usize,
    pub sigma_t_bound: Option<f64>,
    pub sigma_axis_points: usize,
    pub sigma_lhs_samples: usize,
    pub sigma_t_points: usize,
    pub ensemble: usize,
    pub k_steps: usize,
    pub ensemble_t_max: Option<f64>,
    pub errors_spec: String,
    pub seed: u64,
    pub workers: usize,
}

impl Default for BoundsCfg {
    fn default() -> Self {
        BoundsCfg {
            model: "paper_example".into(),
            controller: None,
            tight_tol: 1e-10,
            alpha1: "pow(s, 2)".into(),
            alpha2: "pow(s, 2)".into(),
            alpha3: "3 * pow(s, 4) + pow(s, 2)".into(),
            rho: "s / 0.025".into(),
            m0: 1.0,
            e0: 0.025,
            t_tilde: crate::example::example_ttilde(1.0, 0.025),
            t_bar_e: None,
            r: 0.0,
            sigma_points: 17,
            sigma_t_bound: None,
            sigma_axis_points: 17,
            sigma_lhs_samples: 256,
            sigma_t_points: 16,
            ensemble: 0,
            k_steps: 200,
            ensemble_t_max: None,
            errors_spec: "zero".into(),
            seed: 0,
            workers: 0,
        }
    }
}

/// Certificate ingredients as a JSON file; any present field overrides the
/// config, and explicit flags override both.
#[derive(Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CertificateFile {
    alpha1: Option<String>,
    alpha2: Option<String>,
    alpha3: Option<String>,
    rho: Option<String>,
    #[serde(rename = "M0")]
    m0: Option<f64>,
    #[serde(rename = "E0")]
    e0: Option<f64>,
    #[serde(rename = "T_tilde")]
    t_tilde: Option<f64>,
    #[serde(rename = "T_bar_E")]
    t_bar_e: Option<f64>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    controller: Option<String>,
    #[arg(long = "tight-tol")]
    tight_tol: Option<f64>,
    /// Certificate JSON with alpha1/alpha2/alpha3/rho/M0/E0/T_tilde fields.
    #[arg(long = "from-certificate")]
    from_certificate: Option<PathBuf>,
    #[arg(long)]
    alpha1: Option<String>,
    #[arg(long)]
    alpha2: Option<String>,
    #[arg(long)]
    alpha3: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    /// Initial-state ball radius the envelope must cover.
    #[arg(long = "M0")]
    m0: Option<f64>,
    /// Error-norm bound the envelope must cover.
    #[arg(long = "E0")]
    e0: Option<f64>,
    /// Certified period bound from the decrease certificate.
    #[arg(long = "T-tilde")]
    t_tilde: Option<f64>,
    /// Structural period bound at the error level, if known.
    #[arg(long = "T-bar-E")]
    t_bar_e: Option<f64>,
    /// Practical offset added to the envelope.
    #[arg(long = "R")]
    r: Option<f64>,
    #[arg(long = "sigma-points")]
    sigma_points: Option<usize>,
    #[arg(long = "sigma-T-bound")]
    sigma_t_bound: Option<f64>,
    #[arg(long = "sigma-axis-points")]
    sigma_axis_points: Option<usize>,
    #[arg(long = "sigma-lhs-samples")]
    sigma_lhs_samples: Option<usize>,
    #[arg(long = "sigma-t-points")]
    sigma_t_points: Option<usize>,
    /// Scenario count for the ensemble envelope check (0 = skip).
    #[arg(long)]
    ensemble: Option<usize>,
    #[arg(long = "K-steps")]
    k_steps: Option<usize>,
    /// Period bound for ensemble scenarios (default: the resolved T*).
    #[arg(long = "ensemble-T-max")]
    ensemble_t_max: Option<f64>,
    #[arg(long = "errors-spec")]
    errors_spec: Option<String>,
}

fn resolve_bounds(a: &BoundsArgs) -> Result<(BoundsCfg, PathBuf), CliError> {
    let mut cfg: BoundsCfg = match &a.common.config {
        Some(p) => load_config(p)?,
        None => BoundsCfg::default(),
    };
    if let Some(p) = &a.from_certificate {
        let cert: CertificateFile = load_config(p)?;
        if let Some(v) = cert.alpha1 {
            cfg.alpha1 = v;
        }
        if let Some(v) = cert.alpha2 {
            cfg.alpha2 = v;
        }
        if let Some(v) = cert.alpha3 {
            cfg.alpha3 = v;
        }
        if let Some(v) = cert.rho {
            cfg.rho = v;
        }
        if let Some(v) = cert.m0 {
            cfg.m0 = v;
        }
        if let Some(v) = cert.e0 {
            cfg.e0 = v;
        }
        if let Some(v) = cert.t_tilde {
            cfg.t_tilde = v;
        }
        if let Some(v) = cert.t_bar_e {
            cfg.t_bar_e = Some(v);
        }
    }
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &a.controller {
        cfg.controller = Some(v.clone());
    }
    if let Some(v) = a.tight_tol {
        cfg.tight_tol = v;
    }
    if let Some(v) = &a.alpha1 {
        cfg.alpha1 = v.clone();
    }
    if let Some(v) = &a.alpha2 {
        cfg.alpha2 = v.clone();
    }
    if let Some(v) = &a.alpha3 {
        cfg.alpha3 = v.clone();
    }
    if let Some(v) = &a.rho {
        cfg.rho = v.clone();
    }
    if let Some(v) = a.m0 {
        cfg.m0 = v;
    }
    if let Some(v) = a.e0 {
        cfg.e0 = v;
    }
    if let Some(v) = a.t_tilde {
        cfg.t_tilde = v;
    }
    if let Some(v) = a.t_bar_e {
        cfg.t_bar_e = Some(v);
    }
    if let Some(v) = a.r {
        cfg.r = v;
    }
    if let Some(v) = a.sigma_points {
        cfg.sigma_points = v;
    }
    if let Some(v) = a.sigma_t_bound {
        cfg.sigma_t_bound = Some(v);
    }
    if let Some(v) = a.sigma_axis_points {
        cfg.sigma_axis_points = v;
    }
    if let Some(v) = a.sigma_lhs_samples {
        cfg.sigma_lhs_samples = v;
    }
    if let Some(v) = a.sigma_t_points {
        cfg.sigma_t_points = v;
    }
    if let Some(v) = a.ensemble {
        cfg.ensemble = v;
    }
    if let Some(v) = a.k_steps {
        cfg.k_steps = v;
    }
    if let Some(v) = a.ensemble_t_max {
        cfg.ensemble_t_max = Some(v);
    }
    if let Some(v) = &a.errors_spec {
        cfg.errors_spec = v.clone();
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.common.workers {
        cfg.workers = v;
    }
    let out_dir = a.common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, out_dir))
}

fn ensemble_trajectories(
    model: &ClosedLoopModel,
    count: usize,
    radius: f64,
    e_bound: f64,
    errors_mode: &ErrorMode,
    t_max: f64,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, CliError> {
    let mut trajs = Vec::with_capacity(count);
    for i in 0..count {
        let x0 = if i == 0 {
            let mut v = vec![0.0; model.n];
            v[0] = radius;
            v
        } else if i == 1 {
            let mut v = vec![0.0; model.n];
            v[0] = -radius;
            v
        } else {
            let mut rng = indexed_rng(seed, TAG_INIT, i as u64);
            ball_draw(&mut rng, model.n, radius)
        };
        let sseed = derive_seed(seed, TAG_SCENARIO, i as u64);
        let periods = gen_sampling(&SamplingSpec {
            mode: SamplingMode::IIDUniform,
            t_max,
            len: horizon,
            seed: sseed,
        })?;
        let errors = gen_errors(&ErrorSpec {
            mode: errors_mode.clone(),
            bound: e_bound,
            q: model.q,
            len: horizon,
            seed: sseed,
        })?;
        trajs.push(simulate(model, &x0, &periods, &errors)?);
    }
    Ok(trajs)
}

fn run_bounds(a: &BoundsArgs) -> Result<i32, CliError> {
    let (cfg, out_dir) = resolve_bounds(a)?;
    prepare_out_dir(&out_dir)?;
    echo_config(&out_dir, &cfg)?;
    let model = build_model_from(&cfg.model, &cfg.controller, cfg.tight_tol)?;
    if !(cfg.t_tilde > 0.0 && cfg.t_tilde.is_finite()) {
        return Err(CliError::Config(format!(
            "T_tilde must be positive and finite, got {}",
            cfg.t_tilde
        )));
    }
    let alpha1 = comparison_from(&cfg.alpha1, Kind::ClassKInfinity, "alpha1")?;
    let alpha2 = comparison_from(&cfg.alpha2, Kind::ClassKInfinity, "alpha2")?;
    let alpha3 = comparison_from(&cfg.alpha3, Kind::ClassKInfinity, "alpha3")?;
    let rho = comparison_from(&cfg.rho, Kind::ClassK, "rho")?;
    let errors_mode = parse_errors_spec(&cfg.errors_spec)?;

    let result = with_pool(cfg.workers, || -> Result<_, CliError> {
        let beta = beta_from_certificate(&alpha1, &alpha2, &alpha3)?;
        let mut caveats: Vec<String> = Vec::new();
        let (eta, sigma, skipped) = if cfg.e0 > 0.0 {
            let s_grid: Vec<f64> = (1..=cfg.sigma_points.max(1))
                .map(|j| cfg.e0 * j as f64 / cfg.sigma_points.max(1) as f64)
                .collect();
            let grids = SigmaGrids {
                t_bound: cfg.sigma_t_bound.unwrap_or(cfg.t_tilde),
                axis_points: cfg.sigma_axis_points,
                lhs_samples: cfg.sigma_lhs_samples,
                t_points: cfg.sigma_t_points,
                seed: cfg.seed,
            };
            let se = sigma_eta_estimate(&model, &rho, &s_grid, &grids)?;
            caveats.extend(se.caveats.clone());
            (se.eta, se.sigma, se.skipped_points)
        } else {
            caveats.push(
                "zero error bound: the overshoot gain reduces to the dead-zone term".into(),
            );
            (rho.clone(), Vec::new(), 0)
        };
        let m_star = inflate_domain(&alpha1, &alpha2, &eta, cfg.m0, cfg.e0)?;
        let gamma = gamma_from_certificate(&alpha1, &alpha2, &eta)?;
        let t_star = cfg.t_tilde.min(cfg.t_bar_e.unwrap_or(f64::INFINITY));
        if cfg.t_bar_e.is_none() {
            caveats.push(
                "no structural period bound was supplied; T_star falls back to T_tilde".into(),
            );
        }
        let ts = linspace(0.0, cfg.k_steps.max(1) as f64 * t_star, 65);
        let beta_rows: Vec<(f64, f64)> = ts
            .iter()
            .zip(beta.eval_along(cfg.m0, &ts))
            .map(|(&t, b)| (t, b))
            .collect();
        let gamma_rows: Vec<(f64, f64)> = if cfg.e0 > 0.0 {
            linspace(0.0, cfg.e0, 33)
                .into_iter()
                .map(|s| (s, gamma.eval_k(s).unwrap_or(f64::NAN)))
                .collect()
        } else {
            vec![(0.0, 0.0)]
        };
        let envelope = if cfg.ensemble > 0 {
            let t_max = cfg.ensemble_t_max.unwrap_or(t_star);
            let trajs = ensemble_trajectories(
                &model,
                cfg.ensemble,
                cfg.m0,
                cfg.e0,
                &errors_mode,
                t_max,
                cfg.k_steps,
                cfg.seed,
            )?;
            Some(envelope_check(&trajs, &beta, Some(&gamma), cfg.r))
        } else {
            None
        };
        Ok((m_star, t_star, sigma, skipped, beta_rows, gamma_rows, envelope, caveats))
    })??;
    let (m_star, t_star, sigma, skipped, beta_rows, gamma_rows, envelope, caveats) = result;

    let summary = json!({
        "M0": cfg.m0,
        "E0": cfg.e0,
        "M": m_star,
        "T_tilde": cfg.t_tilde,
        "T_bar_E": cfg.t_bar_e,
        "T_star": t_star,
        "T_bar_threshold": tbar_threshold(),
        "R": cfg.r,
        "sigma": sigma,
        "sigma_skipped_points": skipped,
        "caveats": caveats,
    });
    write_json(&out_dir.join("bounds.json"), &summary)
        .map_err(|e| io_err("writing bounds summary", e))?;
    write_table_csv(&out_dir.join("beta_table.csv"), ("arg", "value"), &beta_rows)
        .map_err(|e| io_err("writing beta table", e))?;
    write_table_csv(&out_dir.join("gamma_table.csv"), ("arg", "value"), &gamma_rows)
        .map_err(|e| io_err("writing gamma table", e))?;
    if let Some(env) = envelope {
        write_json(&out_dir.join("envelope.json"), &env)
            .map_err(|e| io_err("writing envelope report", e))?;
        if !env.violations.is_empty() {
            return Ok(EXIT_FINDING);
        }
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// falsify

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClaimSpec {
    Envelope {
        beta: String,
        gamma: Option<String>,
        #[serde(rename = "R", default)]
        r: f64,
        #[serde(rename = "M0")]
        m0: f64,
        #[serde(rename = "E0", default)]
        e0: f64,
        #[serde(rename = "T_bound")]
        t_bound: f64,
    },
    Decrease {
        #[serde(rename = "V")]
        v: String,
        alpha3: String,
        #[serde(default)]
        rho: Option<String>,
        #[serde(default = "default_claim_mode")]
        mode: String,
        #[serde(rename = "M")]
        m: f64,
        #[serde(rename = "E_or_D", default)]
        e_or_d: f64,
        #[serde(rename = "T_bound")]
        t_bound: f64,
    },
}

fn default_claim_mode() -> String {
    "rss".into()
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FalsifyCfg {
    pub model: String,
    pub controller: Option<String>,
    pub tight_tol: f64,
    pub claim: Option<ClaimSpec>,
    pub restarts: usize,
    pub local_iters: usize,
    pub k_steps: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for FalsifyCfg {
    fn default() -> Self {
        let b = FalsifyBudget::default();
        FalsifyCfg {
            model: "paper_example".into(),
            controller: None,
            tight_tol: 1e-10,
            claim: None,
            restarts: b.restarts,
            local_iters: b.local_iters,
            k_steps: b.horizon,
            seed: b.seed,
            workers: 0,
        }
    }
}

#[derive(Args)]
struct FalsifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    controller: Option<String>,
    #[arg(long = "tight-tol")]
    tight_tol: Option<f64>,
    /// Claim JSON file ({"type": "envelope", ...} or {"type": "decrease", ...}).
    #[arg(long)]
    claim: Option<PathBuf>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long = "local-iters")]
    local_iters: Option<usize>,
    #[arg(long = "K-steps")]
    k_steps: Option<usize>,
}

fn resolve_falsify(a: &FalsifyArgs) -> Result<(FalsifyCfg, PathBuf), CliError> {
    let mut cfg: FalsifyCfg = match &a.common.config {
        Some(p) => load_config(p)?,
        None => FalsifyCfg::default(),
    };
    if let Some(p) = &a.claim {
        cfg.claim = Some(load_config(p)?);
    }
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &a.controller {
        cfg.controller = Some(v.clone());
    }
    if let Some(v) = a.tight_tol {
        cfg.tight_tol = v;
    }
    if let Some(v) = a.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = a.local_iters {
        cfg.local_iters = v;
    }
    if let Some(v) = a.k_steps {
        cfg.k_steps = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.common.workers {
        cfg.workers = v;
    }
    let out_dir = a.common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, out_dir))
}

fn claim_from_spec(spec: &ClaimSpec, n: usize) -> Result<Claim, CliError> {
    match spec {
        ClaimSpec::Envelope {
            beta,
            gamma,
            r,
            m0,
            e0,
            t_bound,
        } => {
            let beta_fn = KLFn::from_expr(beta)
                .map_err(|e| CliError::Config(format!("beta {beta:?}: {e}")))?;
            beta_fn
                .validate(m0.max(1.0))
                .map_err(|e| CliError::Config(format!("beta {beta:?}: {e}")))?;
            let gamma_fn = match gamma {
                Some(g) => Some(comparison_from(g, Kind::ClassK, "gamma")?),
                None => None,
            };
            Ok(Claim::Envelope {
                beta: beta_fn,
                gamma: gamma_fn,
                r: *r,
                m0: *m0,
                e0: *e0,
                t_bound: *t_bound,
            })
        }
        ClaimSpec::Decrease {
            v,
            alpha3,
            rho,
            mode,
            m,
            e_or_d,
            t_bound,
        } => {
            let mode = match mode.as_str() {
                "rss" => Mode::RssVsr,
                "siss" => Mode::SissVsr,
                other => {
                    return Err(CliError::Config(format!(
                        "claim mode must be rss or siss, got {other:?}"
                    )))
                }
            };
            let rho_fn = match rho {
                Some(src) => Some(comparison_from(src, Kind::ClassK, "rho")?),
                None => None,
            };
            if mode == Mode::SissVsr && rho_fn.is_none() {
                return Err(CliError::Config("siss claims require rho".into()));
            }
            Ok(Claim::Decrease {
                candidate: LyapunovCandidate {
                    v: StateFn::from_expr(v, n)?,
                    alpha1: ComparisonFn::native("s^2 / 2", Kind::ClassKInfinity, |s| {
                        0.5 * s * s
                    }),
                    alpha2: ComparisonFn::native("2 s^2", Kind::ClassKInfinity, |s| {
                        2.0 * s * s
                    }),
                    alpha3: comparison_from(alpha3, Kind::ClassKInfinity, "alpha3")?,
                    rho: rho_fn,
                    m: *m,
                    e_or_d: *e_or_d,
                },
                mode,
                t_bound: *t_bound,
            })
        }
    }
}

fn run_falsify(a: &FalsifyArgs) -> Result<i32, CliError> {
    let (cfg, out_dir) = resolve_falsify(a)?;
    prepare_out_dir(&out_dir)?;
    echo_config(&out_dir, &cfg)?;
    let model = build_model_from(&cfg.model, &cfg.controller, cfg.tight_tol)?;
    let spec = cfg
        .claim
        .as_ref()
        .ok_or_else(|| CliError::Config("no claim given; pass --claim <file>".into()))?;
    let claim = claim_from_spec(spec, model.n)?;
    let problem = FalsificationProblem {
        model: &model,
        claim,
        budget: FalsifyBudget {
            restarts: cfg.restarts,
            local_iters: cfg.local_iters,
            horizon: cfg.k_steps,
            seed: cfg.seed,
        },
    };
    let report = with_pool(cfg.workers, || falsify(&problem))??;
    write_json(&out_dir.join("falsify.json"), &report)
        .map_err(|e| io_err("writing falsification report", e))?;
    if let Some(w) = &report.witness {
        write_json(&out_dir.join("witness.json"), w)
            .map_err(|e| io_err("writing witness", e))?;
    }
    Ok(match report.outcome {
        FalsifyOutcome::CounterexampleFound => EXIT_FINDING,
        FalsifyOutcome::NoCounterexampleFound => EXIT_OK,
    })
}

// ---------------------------------------------------------------------------
// probe

#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeCfg {
    pub model: String,
    pub controller: Option<String>,
    pub tight_tol: f64,
    pub m: f64,
    pub d: f64,
    pub t_probe: f64,
    pub eps_grid: Vec<f64>,
    pub l_grid: Vec<f64>,
    pub scenarios: usize,
    pub k_steps: usize,
    pub delta_candidates: usize,
    pub delta_min_frac: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ProbeCfg {
    fn default() -> Self {
        let b = ProbeBudget::default();
        ProbeCfg {
            model: "paper_example".into(),
            controller: None,
            tight_tol: 1e-10,
            m: 1.0,
            d: 0.0,
            t_probe: 0.05,
            eps_grid: vec![0.05, 0.1, 0.25, 0.5],
            l_grid: vec![0.5, 1.0, 2.0, 5.0],
            scenarios: b.scenarios,
            k_steps: b.horizon,
            delta_candidates: b.delta_candidates,
            delta_min_frac: b.delta_min_frac,
            seed: b.seed,
            workers: 0,
        }
    }
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    controller: Option<String>,
    #[arg(long = "tight-tol")]
    tight_tol: Option<f64>,
    /// Initial-state ball radius.
    #[arg(long = "M")]
    m: Option<f64>,
    /// Disturbance-norm bound for generated scenarios.
    #[arg(long = "D")]
    d: Option<f64>,
    #[arg(long = "T-probe")]
    t_probe: Option<f64>,
    #[arg(long = "eps-grid")]
    eps_grid: Option<String>,
    /// Elapsed-time budgets for the boundedness table.
    #[arg(long = "L-grid")]
    l_grid: Option<String>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long = "K-steps")]
    k_steps: Option<usize>,
    #[arg(long = "delta-candidates")]
    delta_candidates: Option<usize>,
    #[arg(long = "delta-min-frac")]
    delta_min_frac: Option<f64>,
}

fn resolve_probe(a: &ProbeArgs) -> Result<(ProbeCfg, PathBuf), CliError> {
    let mut cfg: ProbeCfg = match &a.common.config {
        Some(p) => load_config(p)?,
        None => ProbeCfg::default(),
    };
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &a.controller {
        cfg.controller = Some(v.clone());
    }
    if let Some(v) = a.tight_tol {
        cfg.tight_tol = v;
    }
    if let Some(v) = a.m {
        cfg.m = v;
    }
    if let Some(v) = a.d {
        cfg.d = v;
    }
    if let Some(v) = a.t_probe {
        cfg.t_probe = v;
    }
    if let Some(v) = &a.eps_grid {
        cfg.eps_grid = parse_f64_list(v)?;
    }
    if let Some(v) = &a.l_grid {
        cfg.l_grid = parse_f64_list(v)?;
    }
    if let Some(v) = a.scenarios {
        cfg.scenarios = v;
    }
    if let Some(v) = a.k_steps {
        cfg.k_steps = v;
    }
    if let Some(v) = a.delta_candidates {
        cfg.delta_candidates = v;
    }
    if let Some(v) = a.delta_min_frac {
        cfg.delta_min_frac = v;
    }
    if let Some(v) = a.common.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.common.workers {
        cfg.workers = v;
    }
    let out_dir = a.common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, out_dir))
}

fn run_probe(a: &ProbeArgs) -> Result<i32, CliError> {
    let (cfg, out_dir) = resolve_probe(a)?;
    prepare_out_dir(&out_dir)?;
    echo_config(&out_dir, &cfg)?;
    let model = build_model_from(&cfg.model, &cfg.controller, cfg.tight_tol)?;
    let budget = ProbeBudget {
        scenarios: cfg.scenarios,
        horizon: cfg.k_steps,
        delta_candidates: cfg.delta_candidates,
        delta_min_frac: cfg.delta_min_frac,
        seed: cfg.seed,
    };
    let tables = with_pool(cfg.workers, || {
        lemma1_probe(
            &model,
            cfg.m,
            cfg.d,
            cfg.t_probe,
            &cfg.eps_grid,
            &cfg.l_grid,
            &budget,
        )
    })??;
    let report = ProbeReport {
        m: cfg.m,
        d_bound: cfg.d,
        t_probe: cfg.t_probe,
        scenarios: cfg.scenarios,
        horizon: cfg.k_steps,
        delta_table: tables.delta_table.clone(),
        c_table: tables.c_table.clone(),
        attract_table: tables.attract_table.clone(),
        caveats: tables.caveats.clone(),
    };
    write_json(&out_dir.join("probe.json"), &report)
        .map_err(|e| io_err("writing probe report", e))?;
    let delta_rows: Vec<(f64, f64)> = report
        .delta_table
        .iter()
        .map(|&(eps, d)| (eps, d.unwrap_or(f64::NAN)))
        .collect();
    write_table_csv(&out_dir.join("delta_table.csv"), ("arg", "value"), &delta_rows)
        .map_err(|e| io_err("writing delta table", e))?;
    write_table_csv(&out_dir.join("c_table.csv"), ("arg", "value"), &report.c_table)
        .map_err(|e| io_err("writing boundedness table", e))?;
    let attract_rows: Vec<(f64, f64)> = report
        .attract_table
        .iter()
        .map(|&(eps, t)| (eps, t.unwrap_or(f64::INFINITY)))
        .collect();
    write_table_csv(
        &out_dir.join("attract_table.csv"),
        ("arg", "value"),
        &attract_rows,
    )
    .map_err(|e| io_err("writing attractivity table", e))?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// example

#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExampleCfg {
    pub m: f64,
    pub k: f64,
    pub x_points: usize,
    pub e_points: usize,
    pub t_points: usize,
    pub workers: usize,
}

impl Default for ExampleCfg {
    fn default() -> Self {
        let g = ExampleGrid::default();
        ExampleCfg {
            m: 1.0,
            k: 0.025,
            x_points: g.x_points,
            e_points: g.e_points,
            t_points: g.t_points,
            workers: 0,
        }
    }
}

#[derive(Args)]
struct ExampleArgs {
    #[command(flatten)]
    common: Common,
    /// State-ball radius M.
    #[arg(long = "M")]
    m: Option<f64>,
    /// Error-to-state ratio K (errors sweep |e| <= K |x|).
    #[arg(long = "K")]
    k: Option<f64>,
    #[arg(long = "x-points")]
    x_points: Option<usize>,
    #[arg(long = "e-points")]
    e_points: Option<usize>,
    #[arg(long = "t-points")]
    t_points: Option<usize>,
}

fn resolve_example(a: &ExampleArgs) -> Result<(ExampleCfg, PathBuf), CliError> {
    let mut cfg: ExampleCfg = match &a.common.config {
        Some(p) => load_config(p)?,
        None => ExampleCfg::default(),
    };
    if let Some(v) = a.m {
        cfg.m = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(v) = a.x_points {
        cfg.x_points = v;
    }
    if let Some(v) = a.e_points {
        cfg.e_points = v;
    }
    if let Some(v) = a.t_points {
        cfg.t_points = v;
    }
    if let Some(v) = a.common.workers {
        cfg.workers = v;
    }
    let out_dir = a.common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, out_dir))
}

fn run_example(a: &ExampleArgs) -> Result<i32, CliError> {
    let (cfg, out_dir) = resolve_example(a)?;
    prepare_out_dir(&out_dir)?;
    echo_config(&out_dir, &cfg)?;
    let grid = ExampleGrid {
        x_points: cfg.x_points,
        e_points: cfg.e_points,
        t_points: cfg.t_points,
    };
    let verification = with_pool(cfg.workers, || verify_example(cfg.m, cfg.k, &grid))??;
    let cert = &verification.certificate;
    let summary = json!({
        "M": cert.m,
        "K": cert.k,
        "coefficients": {"a": cert.a, "b": cert.b, "c": cert.c, "d": cert.d},
        "T_tilde": cert.ttilde,
        "E": cert.e_bound(),
        "report": verification.report,
        "chain_min_margin": verification.chain_min_margin,
        "cross_check_max_diff": verification.cross_check_max_diff,
    });
    write_json(&out_dir.join("example.json"), &summary)
        .map_err(|e| io_err("writing example report", e))?;
    let mut csv = String::from("arg,value\n");
    for (name, value) in [
        ("a", cert.a),
        ("b", cert.b),
        ("c", cert.c),
        ("d", cert.d),
        ("T_tilde", cert.ttilde),
        ("E", cert.e_bound()),
    ] {
        csv.push_str(name);
        csv.push(',');
        csv.push_str(&fmt_f64(value));
        csv.push('\n');
    }
    fs::write(out_dir.join("coefficients.csv"), csv)
        .map_err(|e| io_err("writing coefficient table", e))?;
    Ok(match verification.report.verdict {
        Verdict::CertifiedOnGrid => EXIT_OK,
        Verdict::ViolatedAt => EXIT_FINDING,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    })
}

// ---------------------------------------------------------------------------

/// Entry point: parse argv, dispatch, map errors to exit codes. Expects the
/// program name as the first element.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.cmd {
        Cmd::Simulate(a) => run_simulate(a),
        Cmd::Certify(a) => run_certify(a),
        Cmd::Structural(a) => run_structural(a),
        Cmd::Bounds(a) => run_bounds(a),
        Cmd::Falsify(a) => run_falsify(a),
        Cmd::Probe(a) => run_probe(a),
        Cmd::Example(a) => run_example(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            EXIT_CONFIG
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            EXIT_INTERNAL
        }
    }
}
