//! Grid certification of Lyapunov conditions for sampled closed loops:
//! sandwich bounds, per-step decrease with margins, the largest certifiable
//! period bound, and the structural side conditions (fixed origin, local
//! uniform smallness, boundedness on products of balls).
//!
//! Everything here is evidence on a finite grid, never proof; every report
//! carries its grid resolution and a caveat saying so.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::comparison::ComparisonFn;
use crate::expr::ExprFn;
use crate::grid::{ball_points, open_t_grid, PointSet};
use crate::models::{norm2, ClosedLoopModel, ModelError};
use crate::report::{
    CertificationReport, DeltaEntry, GridStats, StructuralReport, Verdict, Witness,
};
use crate::rng::derive_seed;

pub const ORIGIN_ATOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("origin is not a fixed point: |F(0,0,T)| reaches {residual:.6e}")]
    OriginNotFixed { residual: f64 },
    #[error("no scanned period was certifiable (smallest scanned T = {t:.6e} already fails)")]
    NoneCertified { t: f64 },
    #[error("{0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Scalar function of the state, used for Lyapunov candidates. May return the
/// +inf sentinel to mark points where the candidate is undefined.
#[derive(Clone)]
pub struct StateFn {
    repr: StateRepr,
    label: String,
}

#[derive(Clone)]
enum StateRepr {
    Expr { f: ExprFn, slots: Vec<usize> },
    Native(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl StateFn {
    /// Parses an expression in `x1..xn`; for n = 1 the names `x` and `s` are
    /// also accepted as the single coordinate.
    pub fn from_expr(src: &str, n: usize) -> Result<Self, CertError> {
        let mut seen: Vec<String> = Vec::new();
        let f = ExprFn::parse_dynamic(src, |name| {
            let ok = coord_index(name, n).is_some();
            if ok && !seen.iter().any(|s| s == name) {
                seen.push(name.to_string());
            }
            ok
        })
        .map_err(|e| CertError::Spec(format!("bad V expression {src:?}: {e}")))?;
        let slots = f
            .vars()
            .iter()
            .map(|name| coord_index(name, n).expect("accepted name maps to a coordinate"))
            .collect();
        Ok(StateFn {
            repr: StateRepr::Expr { f, slots },
            label: src.to_string(),
        })
    }

    pub fn native(
        label: &str,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        StateFn {
            repr: StateRepr::Native(Arc::new(f)),
            label: label.to_string(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.repr {
            StateRepr::Native(f) => f(x),
            StateRepr::Expr { f, slots } => {
                let mut buf = [0.0_f64; 16];
                if slots.len() <= buf.len() {
                    for (i, &s) in slots.iter().enumerate() {
                        buf[i] = x[s];
                    }
                    f.eval(&buf[..slots.len()])
                } else {
                    let env: Vec<f64> = slots.iter().map(|&s| x[s]).collect();
                    f.eval(&env)
                }
            }
        }
    }
}

fn coord_index(name: &str, n: usize) -> Option<usize> {
    if n == 1 && (name == "x" || name == "s") {
        return Some(0);
    }
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let idx: usize = digits.parse().ok()?;
    if idx >= 1 && idx <= n {
        Some(idx - 1)
    } else {
        None
    }
}

#[derive(Clone)]
pub struct LyapunovCandidate {
    pub v: StateFn,
    pub alpha1: ComparisonFn,
    pub alpha2: ComparisonFn,
    pub alpha3: ComparisonFn,
    /// Required in state-dependent mode; ignored otherwise.
    pub rho: Option<ComparisonFn>,
    /// State-ball radius the certificate claims.
    pub m: f64,
    /// Error-ball radius (disturbance bound).
    pub e_or_d: f64,
}

impl LyapunovCandidate {
    pub fn validate(&self) -> Result<(), CertError> {
        if !(self.m.is_finite() && self.m >= 0.0) {
            return Err(CertError::Spec(format!("M must be finite and >= 0, got {}", self.m)));
        }
        if !(self.e_or_d.is_finite() && self.e_or_d >= 0.0) {
            return Err(CertError::Spec(format!(
                "error bound must be finite and >= 0, got {}",
                self.e_or_d
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Decrease required on {|x| <= M} x {|d| <= D}.
    RssVsr,
    /// Decrease required on {rho(|e|) <= |x| <= M} x {|e| <= E}.
    SissVsr,
}

#[derive(Debug, Clone)]
pub struct CertGrid {
    pub x_points: usize,
    pub e_points: usize,
    pub t_points: usize,
    pub lhs_samples: usize,
    pub seed: u64,
    /// Lipschitz constant of x -> V(F(x,e,T)) - V(x) + T a3(|x|), when known.
    /// Margins are compared against L * (x cell diameter) / 2.
    pub lipschitz: Option<f64>,
}

impl Default for CertGrid {
    fn default() -> Self {
        CertGrid {
            x_points: 33,
            e_points: 33,
            t_points: 32,
            lhs_samples: 4096,
            seed: 0,
            lipschitz: None,
        }
    }
}

pub const GRID_EVIDENCE_CAVEAT: &str =
    "grid evidence only: conditions were checked at finitely many points, not proved";

fn lex_less(ax: &[f64], ae: &[f64], at: f64, bx: &[f64], be: &[f64], bt: f64) -> bool {
    for (a, b) in ax.iter().zip(bx.iter()) {
        match a.total_cmp(b) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    for (a, b) in ae.iter().zip(be.iter()) {
        match a.total_cmp(b) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    at.total_cmp(&bt) == std::cmp::Ordering::Less
}

#[derive(Clone, Default)]
pub(crate) struct SweepAcc {
    pub(crate) margin: f64,
    pub(crate) witness: Option<Witness>,
    pub(crate) checked: usize,
    pub(crate) inconclusive: usize,
    pub(crate) escaped: bool,
}

impl SweepAcc {
    pub(crate) fn new() -> Self {
        SweepAcc {
            margin: f64::INFINITY,
            witness: None,
            checked: 0,
            inconclusive: 0,
            escaped: false,
        }
    }

    pub(crate) fn offer(&mut self, margin: f64, x: &[f64], e: &[f64], t: f64) {
        self.checked += 1;
        let better = match margin.total_cmp(&self.margin) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => match &self.witness {
                None => true,
                Some(w) => lex_less(x, e, t, &w.x, &w.e, w.t),
            },
        };
        if better {
            self.margin = margin;
            self.witness = Some(Witness {
                x: x.to_vec(),
                e: e.to_vec(),
                t,
            });
        }
    }

    pub(crate) fn merge(mut self, other: SweepAcc) -> SweepAcc {
        self.checked += other.checked;
        self.inconclusive += other.inconclusive;
        self.escaped |= other.escaped;
        let take_other = match other.margin.total_cmp(&self.margin) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => match (&other.witness, &self.witness) {
                (Some(ow), Some(sw)) => lex_less(&ow.x, &ow.e, ow.t, &sw.x, &sw.e, sw.t),
                (Some(_), None) => true,
                _ => false,
            },
        };
        if take_other {
            self.margin = other.margin;
            self.witness = other.witness;
        }
        self
    }
}

/// Margin of the per-step decrease condition at one point, in the exact
/// floating-point evaluation order used everywhere margins are compared.
/// Nonnegative means the condition held at the point.
#[inline]
pub fn decrease_margin(v_next: f64, v_x: f64, t: f64, a3_x: f64) -> f64 {
    -(v_next - v_x + t * a3_x)
}

/// Checks the two-sided comparison bounds on V over a grid of the state ball:
/// the lower bound must hold everywhere, the upper bound on |x| <= M.
pub fn check_sandwich(
    cand: &LyapunovCandidate,
    n: usize,
    grid: &CertGrid,
) -> Result<CertificationReport, CertError> {
    cand.validate()?;
    let x_set = ball_points(
        cand.m,
        n,
        grid.x_points,
        grid.lhs_samples,
        derive_seed(grid.seed, crate::rng::TAG_INIT, 1),
    );
    if x_set.is_empty() {
        return Ok(CertificationReport::empty_inconclusive(0.0, "empty state grid"));
    }
    let mut acc = SweepAcc::new();
    for (x, &r) in x_set.points.iter().zip(x_set.norms.iter()) {
        let vx = cand.v.eval(x);
        if vx.is_nan() {
            acc.inconclusive += 1;
            continue;
        }
        let lower = vx - cand.alpha1.eval(r);
        acc.offer(lower, x, &[], 0.0);
        if r <= cand.m * (1.0 + 1e-12) {
            // +inf sentinel fails here by design: alpha2 is finite.
            let upper = cand.alpha2.eval(r) - vx;
            acc.offer(upper, x, &[], 0.0);
        }
    }
    let mut caveats = vec![GRID_EVIDENCE_CAVEAT.to_string()];
    if acc.inconclusive > 0 {
        caveats.push(format!("{} grid points gave NaN values of V", acc.inconclusive));
    }
    let verdict = if acc.checked == 0 {
        Verdict::Inconclusive
    } else if acc.margin >= 0.0 {
        Verdict::CertifiedOnGrid
    } else {
        Verdict::ViolatedAt
    };
    Ok(CertificationReport {
        verdict,
        min_margin: acc.margin,
        witness: acc.witness,
        grid: GridStats {
            x_points: x_set.len(),
            e_points: 0,
            t_points: 0,
            points_checked: acc.checked,
            inconclusive_points: acc.inconclusive,
            x_radius: cand.m,
            e_radius: 0.0,
        },
        t_used: 0.0,
        t_max_certified: None,
        caveats,
    })
}

/// Sweeps the per-step decrease condition over a grid of states, errors, and
/// open-interval periods, reporting the minimum margin and its witness.
pub fn certify_decrease(
    model: &ClosedLoopModel,
    cand: &LyapunovCandidate,
    mode: Mode,
    t_bound: f64,
    grid: &CertGrid,
) -> Result<CertificationReport, CertError> {
    cand.validate()?;
    if !(t_bound.is_finite() && t_bound > 0.0) {
        return Err(CertError::Spec(format!("T bound must be positive, got {t_bound}")));
    }
    let rho = match mode {
        Mode::SissVsr => Some(
            cand.rho
                .as_ref()
                .ok_or_else(|| CertError::Spec("state-dependent mode needs rho".into()))?,
        ),
        Mode::RssVsr => None,
    };
    let x_set = ball_points(
        cand.m,
        model.n,
        grid.x_points,
        grid.lhs_samples,
        derive_seed(grid.seed, crate::rng::TAG_INIT, 1),
    );
    let e_set = ball_points(
        cand.e_or_d,
        model.q,
        grid.e_points,
        grid.lhs_samples,
        derive_seed(grid.seed, crate::rng::TAG_INIT, 2),
    );
    let ts = open_t_grid(t_bound, grid.t_points);
    if x_set.is_empty() || e_set.is_empty() || ts.is_empty() {
        return Ok(CertificationReport::empty_inconclusive(t_bound, "empty grid"));
    }

    let vx_all: Vec<f64> = x_set.points.iter().map(|x| cand.v.eval(x)).collect();
    let a3_all: Vec<f64> = x_set.norms.iter().map(|&r| cand.alpha3.eval(r)).collect();
    let rho_e: Vec<f64> = match rho {
        Some(rho) => e_set.norms.iter().map(|&r| rho.eval(r)).collect(),
        None => Vec::new(),
    };

    let acc = (0..x_set.len())
        .into_par_iter()
        .map(|i| {
            let x = &x_set.points[i];
            let rx = x_set.norms[i];
            let vx = vx_all[i];
            let a3x = a3_all[i];
            let mut local = SweepAcc::new();
            let mut scratch = model.scratch();
            let mut xnext = vec![0.0_f64; model.n];
            for (j, e) in e_set.points.iter().enumerate() {
                if let Mode::SissVsr = mode {
                    // Condition only claimed where rho(|e|) <= |x| <= M.
                    if !(rho_e[j] <= rx && rx <= cand.m * (1.0 + 1e-12)) {
                        continue;
                    }
                }
                for &t in &ts {
                    if !vx.is_finite() {
                        local.inconclusive += 1;
                        continue;
                    }
                    match model.step_into(x, e, t, &mut xnext, &mut scratch) {
                        Ok(()) => {
                            let vnext = cand.v.eval(&xnext);
                            if vnext.is_nan() || vnext == f64::INFINITY {
                                local.inconclusive += 1;
                                continue;
                            }
                            let margin = decrease_margin(vnext, vx, t, a3x);
                            if margin.is_nan() {
                                local.inconclusive += 1;
                            } else {
                                local.offer(margin, x, e, t);
                            }
                        }
                        Err(_) => {
                            local.escaped = true;
                            local.offer(f64::NEG_INFINITY, x, e, t);
                        }
                    }
                }
            }
            local
        })
        .reduce(SweepAcc::new, SweepAcc::merge);

    let mut caveats = vec![GRID_EVIDENCE_CAVEAT.to_string()];
    if acc.escaped {
        caveats.push(
            "model evaluation failed inside the sweep; failures were scored as violations"
                .to_string(),
        );
    }
    if acc.inconclusive > 0 {
        caveats.push(format!(
            "{} grid points were inconclusive (V infinite or NaN)",
            acc.inconclusive
        ));
    }
    if let Some(l) = grid.lipschitz {
        if model.n <= 2 && grid.x_points >= 2 && cand.m > 0.0 {
            let h = 2.0 * cand.m / (grid.x_points as f64 - 1.0) * (model.n as f64).sqrt();
            let slack = l * h / 2.0;
            if acc.margin >= slack {
                caveats.push(format!(
                    "min_margin {:.6e} covers the Lipschitz slack {:.6e}; the decrease holds on the whole state ball (errors and periods still gridded)",
                    acc.margin, slack
                ));
            } else {
                caveats.push(format!(
                    "min_margin {:.6e} does not cover the Lipschitz slack {:.6e}; grid may be too coarse",
                    acc.margin, slack
                ));
            }
        } else {
            caveats.push("Lipschitz slack check needs an axis grid (state dim <= 2)".to_string());
        }
    }
    let verdict = if acc.checked == 0 {
        caveats.push("no grid points satisfied the mode's domain restriction".to_string());
        Verdict::Inconclusive
    } else if acc.margin >= 0.0 {
        Verdict::CertifiedOnGrid
    } else {
        Verdict::ViolatedAt
    };
    Ok(CertificationReport {
        verdict,
        min_margin: acc.margin,
        witness: acc.witness,
        grid: GridStats {
            x_points: x_set.len(),
            e_points: e_set.len(),
            t_points: ts.len(),
            points_checked: acc.checked,
            inconclusive_points: acc.inconclusive,
            x_radius: cand.m,
            e_radius: cand.e_or_d,
        },
        t_used: t_bound,
        t_max_certified: None,
        caveats,
    })
}

#[derive(Debug, Clone)]
pub struct ScanSpec {
    pub t_hi: f64,
    pub coarse: usize,
    pub refine_tol: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec {
            t_hi: 1.0,
            coarse: 16,
            refine_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaxPeriodResult {
    pub t_max_certified: f64,
    pub report: CertificationReport,
}

/// Searches for the largest period bound whose decrease sweep certifies.
/// Coarse scan first; certified periods are expected to form a prefix of the
/// scan (an interval reaching down to 0), and any non-prefix pattern is
/// reported instead of silently bisected over.
pub fn max_sampling_period(
    model: &ClosedLoopModel,
    cand: &LyapunovCandidate,
    mode: Mode,
    scan: &ScanSpec,
    grid: &CertGrid,
) -> Result<MaxPeriodResult, CertError> {
    if !(scan.t_hi.is_finite() && scan.t_hi > 0.0) {
        return Err(CertError::Spec(format!("T_hi must be positive, got {}", scan.t_hi)));
    }
    if scan.coarse < 2 {
        return Err(CertError::Spec("coarse scan needs at least 2 points".into()));
    }
    let coarse: Vec<f64> = (1..=scan.coarse)
        .map(|j| scan.t_hi * j as f64 / scan.coarse as f64)
        .collect();
    let mut certified = Vec::with_capacity(coarse.len());
    for &t in &coarse {
        let rep = certify_decrease(model, cand, mode, t, grid)?;
        certified.push(rep.verdict == Verdict::CertifiedOnGrid);
    }
    if !certified[0] {
        return Err(CertError::NoneCertified { t: coarse[0] });
    }
    let prefix_len = certified.iter().take_while(|&&c| c).count();
    let non_prefix = certified[prefix_len..].iter().any(|&c| c);

    let mut caveats = Vec::new();
    if non_prefix {
        let stray: Vec<String> = coarse
            .iter()
            .zip(certified.iter())
            .skip(prefix_len)
            .filter(|(_, &c)| c)
            .map(|(t, _)| format!("{t:.6e}"))
            .collect();
        caveats.push(format!(
            "certified periods are not an interval from 0: also certified at {} beyond the first failure; reporting the prefix boundary",
            stray.join(", ")
        ));
    }

    let t_max = if prefix_len == coarse.len() {
        caveats.push(format!("certified up to the scan limit T_hi = {:.6e}", scan.t_hi));
        coarse[prefix_len - 1]
    } else {
        let mut lo = coarse[prefix_len - 1];
        let mut hi = coarse[prefix_len];
        while hi - lo > scan.refine_tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let rep = certify_decrease(model, cand, mode, mid, grid)?;
            if rep.verdict == Verdict::CertifiedOnGrid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    let mut report = certify_decrease(model, cand, mode, t_max, grid)?;
    report.t_max_certified = Some(t_max);
    report.caveats.extend(caveats);
    Ok(MaxPeriodResult {
        t_max_certified: t_max,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct StructuralGrid {
    pub axis_points: usize,
    pub lhs_samples: usize,
    pub t_points: usize,
    pub delta_candidates: usize,
    pub delta_min: f64,
    pub delta_axis_points: usize,
    pub delta_lhs_samples: usize,
    pub seed: u64,
}

impl Default for StructuralGrid {
    fn default() -> Self {
        StructuralGrid {
            axis_points: 33,
            lhs_samples: 512,
            t_points: 32,
            delta_candidates: 40,
            delta_min: 1e-6,
            delta_axis_points: 9,
            delta_lhs_samples: 96,
            seed: 0,
        }
    }
}

fn sup_step_norm(
    model: &ClosedLoopModel,
    xs: &PointSet,
    es: &PointSet,
    ts: &[f64],
) -> (f64, bool) {
    let results: Vec<(f64, bool)> = xs
        .points
        .par_iter()
        .map(|x| {
            let mut scratch = model.scratch();
            let mut xnext = vec![0.0_f64; model.n];
            let mut sup = 0.0_f64;
            let mut escaped = false;
            for e in &es.points {
                for &t in ts {
                    match model.step_into(x, e, t, &mut xnext, &mut scratch) {
                        Ok(()) => sup = sup.max(norm2(&xnext)),
                        Err(_) => {
                            escaped = true;
                            sup = f64::INFINITY;
                        }
                    }
                }
            }
            (sup, escaped)
        })
        .collect();
    results
        .into_iter()
        .fold((0.0, false), |(s, esc), (s2, esc2)| (s.max(s2), esc || esc2))
}

/// Checks the structural side conditions of the characterization: the origin
/// stays fixed for every period, the step map is uniformly small near the
/// origin, and it is bounded on products of balls with the bound monotone in
/// both radii.
pub fn check_structural(
    model: &ClosedLoopModel,
    t_probe: f64,
    eps_grid: &[f64],
    m_values: &[f64],
    e_values: &[f64],
    grid: &StructuralGrid,
) -> Result<StructuralReport, CertError> {
    if !(t_probe.is_finite() && t_probe > 0.0) {
        return Err(CertError::Spec(format!("T_probe must be positive, got {t_probe}")));
    }
    let mut caveats = vec![GRID_EVIDENCE_CAVEAT.to_string()];

    let origin_x = vec![0.0_f64; model.n];
    let origin_e = vec![0.0_f64; model.q];
    let mut residual = 0.0_f64;
    let mut xnext = vec![0.0_f64; model.n];
    let mut scratch = model.scratch();
    for &t in &open_t_grid(t_probe, 64) {
        match model.step_into(&origin_x, &origin_e, t, &mut xnext, &mut scratch) {
            Ok(()) => residual = residual.max(norm2(&xnext)),
            Err(_) => residual = f64::INFINITY,
        }
    }
    if residual > ORIGIN_ATOL {
        return Err(CertError::OriginNotFixed { residual });
    }

    let ts = open_t_grid(t_probe, grid.t_points);

    // Smallness near the origin: candidate radii, grid sup of |F| on each,
    // then for every eps the largest candidate whose sup stays below it.
    // Prefix max keeps the sup table monotone (balls nest; grids are fresh
    // per candidate, so raw sups need not be).
    let delta_max = m_values
        .iter()
        .chain(e_values.iter())
        .fold(1.0_f64, |a, &b| a.max(b));
    let n_cand = grid.delta_candidates.max(2);
    let ratio = (delta_max / grid.delta_min).max(1.0);
    let deltas: Vec<f64> = (0..n_cand)
        .map(|i| grid.delta_min * ratio.powf(i as f64 / (n_cand as f64 - 1.0)))
        .collect();
    let mut sups = Vec::with_capacity(deltas.len());
    let mut any_escape = false;
    for (i, &d) in deltas.iter().enumerate() {
        let xs = ball_points(
            d,
            model.n,
            grid.delta_axis_points,
            grid.delta_lhs_samples,
            derive_seed(grid.seed, crate::rng::TAG_INIT, 100 + i as u64),
        );
        let es = ball_points(
            d,
            model.q,
            grid.delta_axis_points,
            grid.delta_lhs_samples,
            derive_seed(grid.seed, crate::rng::TAG_INIT, 200 + i as u64),
        );
        let (sup, esc) = sup_step_norm(model, &xs, &es, &ts);
        any_escape |= esc;
        let prev = sups.last().copied().unwrap_or(0.0_f64);
        sups.push(sup.max(prev));
    }
    let delta_table: Vec<DeltaEntry> = eps_grid
        .iter()
        .map(|&eps| {
            let best = deltas
                .iter()
                .zip(sups.iter())
                .filter(|(_, &s)| s < eps)
                .next_back();
            DeltaEntry {
                eps,
                delta: best.map(|(&d, _)| d),
                sup_at_delta: best.map(|(_, &s)| s),
            }
        })
        .collect();

    // Boundedness table over one master grid: per-point sups sorted by radius
    // with a 2D running max make C(M, E) monotone by construction.
    let m_max = m_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    let e_max = e_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    let xs = ball_points(
        m_max,
        model.n,
        grid.axis_points,
        grid.lhs_samples,
        derive_seed(grid.seed, crate::rng::TAG_INIT, 300),
    );
    let es = ball_points(
        e_max,
        model.q,
        grid.axis_points,
        grid.lhs_samples,
        derive_seed(grid.seed, crate::rng::TAG_INIT, 301),
    );
    let mut x_order: Vec<usize> = (0..xs.len()).collect();
    x_order.sort_by(|&a, &b| xs.norms[a].total_cmp(&xs.norms[b]));
    let mut e_order: Vec<usize> = (0..es.len()).collect();
    e_order.sort_by(|&a, &b| es.norms[a].total_cmp(&es.norms[b]));

    let rows: Vec<Vec<f64>> = x_order
        .par_iter()
        .map(|&xi| {
            let mut scratch = model.scratch();
            let mut xnext = vec![0.0_f64; model.n];
            let x = &xs.points[xi];
            e_order
                .iter()
                .map(|&ej| {
                    let mut sup = 0.0_f64;
                    for &t in &ts {
                        match model.step_into(x, &es.points[ej], t, &mut xnext, &mut scratch) {
                            Ok(()) => sup = sup.max(norm2(&xnext)),
                            Err(_) => sup = f64::INFINITY,
                        }
                    }
                    sup
                })
                .collect()
        })
        .collect();
    let mut running = vec![vec![0.0_f64; e_order.len()]; x_order.len()];
    for i in 0..x_order.len() {
        for j in 0..e_order.len() {
            let mut v = rows[i][j];
            if i > 0 {
                v = v.max(running[i - 1][j]);
            }
            if j > 0 {
                v = v.max(running[i][j - 1]);
            }
            running[i][j] = v;
        }
    }
    if running.iter().flatten().any(|v| v.is_infinite()) {
        any_escape = true;
    }
    let x_radii: Vec<f64> = x_order.iter().map(|&i| xs.norms[i]).collect();
    let e_radii: Vec<f64> = e_order.iter().map(|&j| es.norms[j]).collect();
    let c_table: Vec<Vec<f64>> = m_values
        .iter()
        .map(|&m| {
            let i = last_index_within(&x_radii, m);
            e_values
                .iter()
                .map(|&e| {
                    let j = last_index_within(&e_radii, e);
                    match (i, j) {
                        (Some(i), Some(j)) => running[i][j],
                        _ => 0.0,
                    }
                })
                .collect()
        })
        .collect();
    for row in &c_table {
        for w in row.windows(2) {
            debug_assert!(w[1] >= w[0]);
        }
    }
    for cols in c_table.windows(2) {
        for (a, b) in cols[0].iter().zip(cols[1].iter()) {
            debug_assert!(b >= a);
        }
    }
    if any_escape {
        caveats.push("model evaluation failed somewhere in the probed region; affected sups are infinite".to_string());
    }
    caveats.push(
        "smallness radii are only verified for the probed state bound; uniformity across larger bounds is not checkable on a finite grid"
            .to_string(),
    );
    Ok(StructuralReport {
        origin_residual: residual,
        t_probe,
        delta_table,
        m_values: m_values.to_vec(),
        e_values: e_values.to_vec(),
        c_table,
        caveats,
    })
}

fn last_index_within(sorted_radii: &[f64], bound: f64) -> Option<usize> {
    let lim = bound * (1.0 + 1e-12);
    match sorted_radii.partition_point(|&r| r <= lim) {
        0 => None,
        k => Some(k - 1),
    }
}
