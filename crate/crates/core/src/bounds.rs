//! Turns decrease certificates into explicit trajectory envelopes: the
//! comparison-flow decay bound, the overshoot gain built from step-map sups,
//! the inflated certification radius, a converse value-function estimator,
//! ensemble envelope checking, and empirical epsilon-delta tables.

use rayon::prelude::*;
use thiserror::Error;

use crate::comparison::{
    isotonic_upper_envelope, ComparisonError, ComparisonFn, KLFn, Kind,
};
use crate::grid::{ball_points, open_t_grid};
use crate::integrate::flow_decay;
use crate::models::{norm2, ClosedLoopModel};
use crate::report::{EnvelopeReport, EnvelopeViolation};
use crate::rng::{derive_seed, indexed_rng, TAG_ERRORS, TAG_INIT, TAG_PERIODS, TAG_SCENARIO};
use crate::trajectory::{
    ball_draw, gen_errors, gen_sampling, simulate, ErrorMode, ErrorSpec, SamplingMode,
    SamplingSpec, Trajectory,
};

/// Slope floor used when upgrading sup-tables into strictly increasing gains.
const ENVELOPE_SLOPE_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("{0}")]
    Spec(String),
    #[error(transparent)]
    Comparison(#[from] ComparisonError),
    #[error("trajectory setup failed: {0}")]
    Trajectory(#[from] crate::trajectory::TrajError),
}

/// Positive root of T = 1 - exp(-2 T), the threshold below which one-step
/// decrease sums telescope into an exponential envelope.
pub fn tbar_threshold() -> f64 {
    let f = |t: f64| 1.0 - (-2.0 * t).exp() - t;
    let mut lo = 0.5_f64;
    let mut hi = 1.0_f64;
    debug_assert!(f(lo) > 0.0 && f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-15 {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// y(t) for dy/dt = -alpha(y), y(0) = s. Clamped at zero; errors surface as
/// an infinite sentinel so callers fail conservative.
pub fn comparison_ode(alpha: &ComparisonFn, s: f64, t: f64) -> Result<f64, BoundsError> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(BoundsError::Spec(format!(
            "initial value must be finite and nonnegative, got {s}"
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(BoundsError::Spec(format!(
            "time must be finite and nonnegative, got {t}"
        )));
    }
    let a = |y: f64| alpha.eval_k(y).unwrap_or(f64::NAN);
    let vals = flow_decay(&a, s, &[t], 1e-10);
    Ok(vals[0])
}

/// Decay envelope from a sandwich (alpha1, alpha2) and a decrease rate
/// alpha3: beta(s, t) = alpha1^{-1}(y(t)) where y flows under
/// -alpha3(alpha2^{-1}(.)) from alpha2(s). Probes the composition on a few
/// points first so incompatible domains fail here, not at eval time.
pub fn beta_from_certificate(
    alpha1: &ComparisonFn,
    alpha2: &ComparisonFn,
    alpha3: &ComparisonFn,
) -> Result<KLFn, BoundsError> {
    let a2 = alpha2.clone();
    let a3 = alpha3.clone();
    let label = format!("{}({}^-1(y))", alpha3.label(), alpha2.label());
    let alpha = ComparisonFn::native(&label, Kind::ClassKInfinity, move |y| {
        match a2.invert_k(y) {
            Ok(s) => a3.eval_k(s).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    });
    for &probe in &[0.0, 1e-3, 0.1, 1.0, 10.0] {
        let y = alpha.eval_k(probe).map_err(|e| ComparisonError::DomainMismatch {
            detail: format!("decrease rate undefined at y = {probe}: {e}"),
        })?;
        if !y.is_finite() {
            return Err(BoundsError::Comparison(ComparisonError::DomainMismatch {
                detail: format!("decrease rate not finite at y = {probe}"),
            }));
        }
    }
    for &probe in &[0.0, 1e-3, 0.1, 1.0, 10.0] {
        alpha1
            .eval_k(probe)
            .and(alpha2.eval_k(probe))
            .map_err(|e| ComparisonError::DomainMismatch {
                detail: format!("sandwich undefined at s = {probe}: {e}"),
            })?;
    }
    Ok(KLFn::chained(alpha1.clone(), alpha2.clone(), alpha))
}

/// Gain from the error bound to the state overshoot:
/// gamma(s) = alpha1^{-1}(2 alpha2(eta(s))).
pub fn gamma_from_certificate(
    alpha1: &ComparisonFn,
    alpha2: &ComparisonFn,
    eta: &ComparisonFn,
) -> Result<ComparisonFn, BoundsError> {
    for &probe in &[0.0, 1e-3, 0.1, 1.0] {
        let v = eta
            .eval_k(probe)
            .and_then(|h| alpha2.eval_k(h))
            .and_then(|y| alpha1.invert_k(2.0 * y))
            .map_err(|e| ComparisonError::DomainMismatch {
                detail: format!("gain chain undefined at s = {probe}: {e}"),
            })?;
        if !v.is_finite() {
            return Err(BoundsError::Comparison(ComparisonError::DomainMismatch {
                detail: format!("gain chain not finite at s = {probe}"),
            }));
        }
    }
    let a1 = alpha1.clone();
    let a2 = alpha2.clone();
    let et = eta.clone();
    let label = format!(
        "{}^-1(2 {}({}))",
        alpha1.label(),
        alpha2.label(),
        eta.label()
    );
    Ok(ComparisonFn::native(&label, Kind::ClassKInfinity, move |s| {
        et.eval_k(s)
            .and_then(|h| a2.eval_k(h))
            .and_then(|y| a1.invert_k(2.0 * y))
            .unwrap_or(f64::NAN)
    }))
}

/// Radius the certificate must cover so that overshoot from ball(m0) initial
/// states under errors up to e0 stays inside: alpha1^{-1}(alpha2(max{m0,
/// eta(e0)})).
pub fn inflate_domain(
    alpha1: &ComparisonFn,
    alpha2: &ComparisonFn,
    eta: &ComparisonFn,
    m0: f64,
    e0: f64,
) -> Result<f64, BoundsError> {
    if !(m0 >= 0.0 && m0.is_finite()) || !(e0 >= 0.0 && e0.is_finite()) {
        return Err(BoundsError::Spec(format!(
            "radii must be finite and nonnegative, got m0 = {m0}, e0 = {e0}"
        )));
    }
    let reach = eta.eval_k(e0)?.max(m0);
    let inflated = alpha1.invert_k(alpha2.eval_k(reach)?)?;
    if !inflated.is_finite() {
        return Err(BoundsError::Spec(format!(
            "inflated radius not finite (reach {reach})"
        )));
    }
    Ok(inflated)
}

/// Grids for the step-map sup sweep behind `sigma_eta_estimate`.
#[derive(Debug, Clone)]
pub struct SigmaGrids {
    /// Sampling periods are swept over (0, t_bound).
    pub t_bound: f64,
    pub axis_points: usize,
    pub lhs_samples: usize,
    pub t_points: usize,
    pub seed: u64,
}

impl Default for SigmaGrids {
    fn default() -> Self {
        SigmaGrids {
            t_bound: 0.05,
            axis_points: 17,
            lhs_samples: 256,
            t_points: 16,
            seed: 0,
        }
    }
}

/// Raw sup-table, its increasing majorant, and the combined gain.
pub struct SigmaEta {
    /// (s, sup |step(x, e, T)|) over |x| <= rho(s), |e| <= s, T in (0, t_bound).
    pub sigma: Vec<(f64, f64)>,
    /// Strictly increasing unbounded majorant of the sup-table.
    pub zeta: ComparisonFn,
    /// max{zeta(s), rho(s)}: dominates both the step image and the deadzone.
    pub eta: ComparisonFn,
    pub skipped_points: usize,
    pub caveats: Vec<String>,
}

/// Sup of the one-step image norm over state/error balls scaled by `rho` and
/// the identity, per abscissa in `s_grid`. Points where the step map fails
/// are skipped and counted rather than poisoning the table.
pub fn sigma_eta_estimate(
    model: &ClosedLoopModel,
    rho: &ComparisonFn,
    s_grid: &[f64],
    grids: &SigmaGrids,
) -> Result<SigmaEta, BoundsError> {
    if s_grid.is_empty() {
        return Err(BoundsError::Spec("empty abscissa grid".into()));
    }
    for w in s_grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(BoundsError::Spec(format!(
                "abscissa grid must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if !(s_grid[0] > 0.0) || !s_grid[s_grid.len() - 1].is_finite() {
        return Err(BoundsError::Spec(
            "abscissa grid must be positive and finite".into(),
        ));
    }
    if !(grids.t_bound > 0.0 && grids.t_bound.is_finite()) {
        return Err(BoundsError::Spec(format!(
            "period bound must be positive and finite, got {}",
            grids.t_bound
        )));
    }
    let ts = open_t_grid(grids.t_bound, grids.t_points.max(1));

    let mut rho_vals = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        rho_vals.push(rho.eval_k(s)?);
    }

    let per_s: Vec<(f64, usize)> = s_grid
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let xs = ball_points(
                rho_vals[i],
                model.n,
                grids.axis_points,
                grids.lhs_samples,
                derive_seed(grids.seed, TAG_INIT, 1000 + i as u64),
            );
            let es = ball_points(
                s,
                model.q,
                grids.axis_points,
                grids.lhs_samples,
                derive_seed(grids.seed, TAG_INIT, 2000 + i as u64),
            );
            let mut scratch = model.scratch();
            let mut out = vec![0.0_f64; model.n];
            let mut sup = 0.0_f64;
            let mut skipped = 0usize;
            for x in &xs.points {
                for e in &es.points {
                    for &t in &ts {
                        match model.step_into(x, e, t, &mut out, &mut scratch) {
                            Ok(()) => {
                                let r = norm2(&out);
                                if r.is_nan() {
                                    skipped += 1;
                                } else {
                                    sup = sup.max(r);
                                }
                            }
                            Err(_) => skipped += 1,
                        }
                    }
                }
            }
            (sup, skipped)
        })
        .collect();

    let sigma: Vec<(f64, f64)> = s_grid
        .iter()
        .zip(per_s.iter())
        .map(|(&s, &(sup, _))| (s, sup))
        .collect();
    let skipped_points: usize = per_s.iter().map(|&(_, k)| k).sum();

    let table = isotonic_upper_envelope(&sigma, ENVELOPE_SLOPE_FLOOR)?;
    let zeta = ComparisonFn::from_table(table, Kind::ClassKInfinity)
        .with_label("step-image majorant");
    let zc = zeta.clone();
    let rc = rho.clone();
    let eta_label = format!("max{{zeta, {}}}", rho.label());
    let eta = ComparisonFn::native(&eta_label, Kind::ClassKInfinity, move |s| {
        let a = zc.eval_k(s).unwrap_or(f64::NAN);
        let b = rc.eval_k(s).unwrap_or(f64::NAN);
        if a.is_nan() || b.is_nan() {
            f64::NAN
        } else {
            a.max(b)
        }
    });

    let mut caveats = vec![format!(
        "sup-table sampled on {} abscissae x {} periods with {} axis points; \
         values below the true sup are possible between samples",
        s_grid.len(),
        ts.len(),
        grids.axis_points
    )];
    if skipped_points > 0 {
        caveats.push(format!(
            "{skipped_points} step evaluations failed and were skipped; \
             the sup-table underestimates wherever the map escapes"
        ));
    }
    Ok(SigmaEta {
        sigma,
        zeta,
        eta,
        skipped_points,
        caveats,
    })
}

/// Sampling budget for the converse value estimator.
#[derive(Debug, Clone)]
pub struct ConverseBudget {
    pub horizon: usize,
    pub scenarios: usize,
    pub d_bound: f64,
    pub seed: u64,
}

impl Default for ConverseBudget {
    fn default() -> Self {
        ConverseBudget {
            horizon: 200,
            scenarios: 64,
            d_bound: 0.0,
            seed: 0,
        }
    }
}

/// Lower estimate of the converse value function at xi:
/// sup over sampled scenarios of alpha1(|x_k|) exp(2 sum T_i). Scenario k = 0
/// contributes alpha1(|xi|), so the estimate never undercuts the sandwich
/// floor. Monotone in the scenario count under a fixed seed.
pub fn converse_lyapunov_estimate(
    model: &ClosedLoopModel,
    alpha1: &ComparisonFn,
    xi: &[f64],
    t_star: f64,
    budget: &ConverseBudget,
) -> Result<f64, BoundsError> {
    if xi.len() != model.n {
        return Err(BoundsError::Spec(format!(
            "state has dim {}, model expects {}",
            xi.len(),
            model.n
        )));
    }
    if !(t_star > 0.0 && t_star.is_finite()) {
        return Err(BoundsError::Spec(format!(
            "period bound must be positive and finite, got {t_star}"
        )));
    }
    if budget.horizon == 0 {
        return Err(BoundsError::Spec("horizon must be at least 1".into()));
    }
    let base = alpha1.eval_k(norm2(xi))?;
    if !base.is_finite() {
        return Err(BoundsError::Spec(format!(
            "sandwich floor not finite at |xi| = {}",
            norm2(xi)
        )));
    }

    let scenario_best: Vec<f64> = (0..budget.scenarios)
        .into_par_iter()
        .map(|i| {
            let sseed = derive_seed(budget.seed, TAG_SCENARIO, i as u64);
            let periods = match gen_sampling(&SamplingSpec {
                mode: SamplingMode::IIDUniform,
                t_max: t_star,
                len: budget.horizon,
                seed: sseed,
            }) {
                Ok(p) => p,
                Err(_) => return f64::NEG_INFINITY,
            };
            let mode = if budget.d_bound == 0.0 {
                ErrorMode::Zero
            } else {
                match i % 3 {
                    0 => ErrorMode::Zero,
                    1 => {
                        let mut v = vec![0.0; model.q];
                        if !v.is_empty() {
                            v[0] = budget.d_bound;
                        }
                        ErrorMode::ConstantVector(v)
                    }
                    _ => ErrorMode::IIDBall,
                }
            };
            let errors = match gen_errors(&ErrorSpec {
                mode,
                bound: budget.d_bound,
                q: model.q,
                len: budget.horizon,
                seed: sseed,
            }) {
                Ok(e) => e,
                Err(_) => return f64::NEG_INFINITY,
            };
            let traj = match simulate(model, xi, &periods, &errors) {
                Ok(t) => t,
                Err(_) => return f64::NEG_INFINITY,
            };
            let mut best = f64::NEG_INFINITY;
            for (k, x) in traj.states.iter().enumerate() {
                let r = norm2(x);
                let val = match alpha1.eval_k(r) {
                    Ok(v) => v * (2.0 * traj.elapsed[k]).exp(),
                    Err(_) => continue,
                };
                if !val.is_nan() {
                    best = best.max(val);
                }
            }
            best
        })
        .collect();

    let mut vhat = base;
    for b in scenario_best {
        vhat = vhat.max(b);
    }
    Ok(vhat)
}

/// Checks |x_k| <= beta(|x0|, elapsed_k) + gamma(sup_{i<k} |e_i|) + r for
/// every state of every trajectory. Violations are strict and listed in
/// (scenario, step) order; an unevaluable envelope (infinite sentinel) never
/// reports a violation.
pub fn envelope_check(
    trajs: &[Trajectory],
    beta: &KLFn,
    gamma: Option<&ComparisonFn>,
    r: f64,
) -> EnvelopeReport {
    let per: Vec<(Vec<EnvelopeViolation>, usize, f64, f64)> = trajs
        .par_iter()
        .enumerate()
        .map(|(si, tr)| {
            let s0 = norm2(&tr.states[0]);
            let betas = beta.eval_along(s0, &tr.elapsed);
            let mut sup_e = 0.0_f64;
            let mut viols = Vec::new();
            let mut max_excess = f64::NEG_INFINITY;
            let mut worst_ratio = 0.0_f64;
            for (k, x) in tr.states.iter().enumerate() {
                if k > 0 {
                    sup_e = sup_e.max(norm2(&tr.errors[k - 1]));
                }
                let g = match gamma {
                    Some(g) => g.eval_k(sup_e).unwrap_or(f64::INFINITY),
                    None => 0.0,
                };
                let rhs = betas[k] + g + r;
                let lhs = norm2(x);
                let excess = lhs - rhs;
                if excess.is_nan() {
                    continue;
                }
                if excess > max_excess {
                    max_excess = excess;
                }
                if rhs > 0.0 && lhs / rhs > worst_ratio {
                    worst_ratio = lhs / rhs;
                }
                if excess > 0.0 {
                    viols.push(EnvelopeViolation {
                        scenario: si,
                        k,
                        lhs,
                        rhs,
                        excess,
                    });
                }
            }
            (viols, tr.states.len(), max_excess, worst_ratio)
        })
        .collect();

    let mut report = EnvelopeReport {
        violations: Vec::new(),
        checked_points: 0,
        max_excess: f64::NEG_INFINITY,
        worst_ratio: 0.0,
    };
    for (viols, checked, mx, wr) in per {
        report.violations.extend(viols);
        report.checked_points += checked;
        report.max_excess = report.max_excess.max(mx);
        report.worst_ratio = report.worst_ratio.max(wr);
    }
    report
}

/// Sampling budget for the empirical epsilon-delta probe.
#[derive(Debug, Clone)]
pub struct ProbeBudget {
    pub scenarios: usize,
    pub horizon: usize,
    pub delta_candidates: usize,
    /// Smallest delta candidate as a fraction of the ball radius.
    pub delta_min_frac: f64,
    pub seed: u64,
}

impl Default for ProbeBudget {
    fn default() -> Self {
        ProbeBudget {
            scenarios: 64,
            horizon: 200,
            delta_candidates: 16,
            delta_min_frac: 1e-4,
            seed: 0,
        }
    }
}

/// Empirical boundedness and attractivity tables over a scenario ensemble.
pub struct ProbeTables {
    /// Per epsilon: the largest delta candidate whose ensemble stayed within
    /// epsilon for the whole horizon, or None when no candidate worked.
    pub delta_table: Vec<(f64, Option<f64>)>,
    /// Per elapsed-time budget L: the largest state norm observed while the
    /// running time was at most L.
    pub c_table: Vec<(f64, f64)>,
    /// Per epsilon: the largest elapsed time after which every sampled
    /// trajectory stayed within epsilon, or None when some trajectory still
    /// exceeded it at the end of the horizon (or diverged).
    pub attract_table: Vec<(f64, Option<f64>)>,
    pub diverged_scenarios: usize,
    pub caveats: Vec<String>,
}

fn probe_scenario(
    model: &ClosedLoopModel,
    radius: f64,
    d_bound: f64,
    t_probe: f64,
    horizon: usize,
    seed: u64,
    i: usize,
    salt: u64,
) -> Result<Trajectory, BoundsError> {
    let sseed = derive_seed(seed, TAG_SCENARIO, salt.wrapping_mul(1_000_003) ^ i as u64);
    let x0 = if i == 0 {
        let mut v = vec![0.0; model.n];
        v[0] = radius;
        v
    } else if i == 1 {
        let mut v = vec![0.0; model.n];
        v[0] = -radius;
        v
    } else {
        let mut rng = indexed_rng(sseed, TAG_INIT, i as u64);
        ball_draw(&mut rng, model.n, radius)
    };
    let periods = if i % 4 == 0 {
        gen_sampling(&SamplingSpec {
            mode: SamplingMode::Constant(0.999_999),
            t_max: t_probe,
            len: horizon,
            seed: derive_seed(sseed, TAG_PERIODS, i as u64),
        })?
    } else {
        gen_sampling(&SamplingSpec {
            mode: SamplingMode::IIDUniform,
            t_max: t_probe,
            len: horizon,
            seed: derive_seed(sseed, TAG_PERIODS, i as u64),
        })?
    };
    let mode = if d_bound == 0.0 {
        ErrorMode::Zero
    } else {
        match i % 3 {
            0 => ErrorMode::Zero,
            1 => {
                let mut v = vec![0.0; model.q];
                if !v.is_empty() {
                    v[0] = d_bound;
                }
                ErrorMode::ConstantVector(v)
            }
            _ => ErrorMode::IIDBall,
        }
    };
    let errors = gen_errors(&ErrorSpec {
        mode,
        bound: d_bound,
        q: model.q,
        len: horizon,
        seed: derive_seed(sseed, TAG_ERRORS, i as u64),
    })?;
    Ok(simulate(model, &x0, &periods, &errors)?)
}

/// Largest ensemble sup of |x_k| per scenario set started in ball(radius).
fn ensemble_sup(trajs: &[Trajectory]) -> f64 {
    let mut sup = 0.0_f64;
    for tr in trajs {
        if tr.diverged() {
            return f64::INFINITY;
        }
        for x in &tr.states {
            let r = norm2(x);
            if r.is_nan() {
                return f64::INFINITY;
            }
            sup = sup.max(r);
        }
    }
    sup
}

/// Runs a scenario ensemble from ball(m) and distills it into empirical
/// boundedness (c_table), smallness (delta_table), and attractivity
/// (attract_table) evidence. All tables are deterministic in the seed.
pub fn lemma1_probe(
    model: &ClosedLoopModel,
    m: f64,
    d_bound: f64,
    t_probe: f64,
    eps_grid: &[f64],
    l_grid: &[f64],
    budget: &ProbeBudget,
) -> Result<ProbeTables, BoundsError> {
    if !(m >= 0.0 && m.is_finite()) {
        return Err(BoundsError::Spec(format!("ball radius must be finite and nonnegative, got {m}")));
    }
    if !(d_bound >= 0.0 && d_bound.is_finite()) {
        return Err(BoundsError::Spec(format!("error bound must be finite and nonnegative, got {d_bound}")));
    }
    if !(t_probe > 0.0 && t_probe.is_finite()) {
        return Err(BoundsError::Spec(format!("period bound must be positive and finite, got {t_probe}")));
    }
    if budget.scenarios == 0 || budget.horizon == 0 {
        return Err(BoundsError::Spec("budget must include at least one scenario and one step".into()));
    }
    for &eps in eps_grid {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(BoundsError::Spec(format!("epsilon values must be positive and finite, got {eps}")));
        }
    }
    for &l in l_grid {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(BoundsError::Spec(format!("time budgets must be finite and nonnegative, got {l}")));
        }
    }

    // Main ensemble from ball(m): feeds the boundedness and attractivity
    // tables.
    let main: Vec<Trajectory> = (0..budget.scenarios)
        .into_par_iter()
        .map(|i| probe_scenario(model, m, d_bound, t_probe, budget.horizon, budget.seed, i, 0))
        .collect::<Result<_, _>>()?;
    let diverged_scenarios = main.iter().filter(|t| t.diverged()).count();

    // c_table: prefix max of |x| over states sorted by elapsed time.
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for tr in &main {
        for (k, x) in tr.states.iter().enumerate() {
            let r = norm2(x);
            pairs.push((tr.elapsed[k], if r.is_nan() { f64::INFINITY } else { r }));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut prefix = Vec::with_capacity(pairs.len());
    let mut run = 0.0_f64;
    for &(_, r) in &pairs {
        run = run.max(r);
        prefix.push(run);
    }
    let c_table: Vec<(f64, f64)> = l_grid
        .iter()
        .map(|&l| {
            let idx = pairs.partition_point(|&(t, _)| t <= l);
            let val = if idx == 0 { 0.0 } else { prefix[idx - 1] };
            (l, val)
        })
        .collect();

    // attract_table: per trajectory, the elapsed time of the first state
    // after which the norm never exceeds epsilon again. A trajectory that
    // still exceeds epsilon at its final state, or that diverged, admits no
    // finite settle time.
    let attract_table: Vec<(f64, Option<f64>)> = eps_grid
        .iter()
        .map(|&eps| {
            let mut worst = 0.0_f64;
            for tr in &main {
                let last_exceed = tr
                    .states
                    .iter()
                    .rposition(|x| !(norm2(x) <= eps));
                let tau = match last_exceed {
                    None => {
                        if tr.diverged() {
                            return (eps, None);
                        }
                        0.0
                    }
                    Some(k) => {
                        if k + 1 >= tr.states.len() || tr.diverged() {
                            return (eps, None);
                        }
                        tr.elapsed[k + 1]
                    }
                };
                worst = worst.max(tau);
            }
            (eps, Some(worst))
        })
        .collect();

    // delta_table: fresh ensembles from shrinking initial balls, sups
    // prefix-maxed over ascending candidates so smaller candidates never
    // look worse than larger ones.
    let mut candidates: Vec<f64> = Vec::new();
    if m > 0.0 {
        let lo = (m * budget.delta_min_frac).max(f64::MIN_POSITIVE);
        let n_cand = budget.delta_candidates.max(1);
        for j in 0..n_cand {
            let frac = if n_cand == 1 {
                1.0
            } else {
                j as f64 / (n_cand - 1) as f64
            };
            candidates.push(lo * (m / lo).powf(frac));
        }
    } else {
        candidates.push(0.0);
    }
    let cand_sups: Vec<f64> = candidates
        .par_iter()
        .enumerate()
        .map(|(ci, &delta)| {
            let trajs: Result<Vec<Trajectory>, BoundsError> = (0..budget.scenarios)
                .map(|i| {
                    probe_scenario(
                        model,
                        delta,
                        d_bound,
                        t_probe,
                        budget.horizon,
                        budget.seed,
                        i,
                        1 + ci as u64,
                    )
                })
                .collect();
            match trajs {
                Ok(ts) => ensemble_sup(&ts),
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    let mut pm = Vec::with_capacity(cand_sups.len());
    let mut run = f64::NEG_INFINITY;
    for &s in &cand_sups {
        run = run.max(s);
        pm.push(run);
    }
    // pm[i] is not what we want: a larger candidate ball contains the smaller
    // ones, so sup must be nondecreasing in the candidate. Enforce it by a
    // running max from the left (ascending candidates).
    let delta_table: Vec<(f64, Option<f64>)> = eps_grid
        .iter()
        .map(|&eps| {
            let mut best = None;
            for (ci, &delta) in candidates.iter().enumerate() {
                if pm[ci] <= eps {
                    best = Some(delta);
                }
            }
            (eps, best)
        })
        .collect();

    let mut caveats = vec![format!(
        "tables estimated from {} scenarios over {} steps; they bound nothing \
         outside the sampled ensemble",
        budget.scenarios, budget.horizon
    )];
    if diverged_scenarios > 0 {
        caveats.push(format!(
            "{diverged_scenarios} scenarios diverged; boundedness and \
             attractivity entries reflect that"
        ));
    }
    Ok(ProbeTables {
        delta_table,
        c_table,
        attract_table,
        diverged_scenarios,
        caveats,
    })
}
