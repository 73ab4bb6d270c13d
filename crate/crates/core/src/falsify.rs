//! Counterexample search against a claimed trajectory envelope or a claimed
//! one-step decrease. Random restarts probe physically extremal scenarios
//! (boundary states, bang-bang errors, near-maximal periods), then
//! coordinate-wise hill climbing sharpens the worst incumbent. Every witness
//! is replayed through the public evaluation path before it is reported.

use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::bounds::envelope_check;
use crate::certifier::{decrease_margin, LyapunovCandidate, Mode};
use crate::comparison::{ComparisonFn, KLFn};
use crate::models::{norm2, ClosedLoopModel};
use crate::report::{FalsifyOutcome, FalsifyReport, ViolationRecord, WitnessScenario};
use crate::rng::{indexed_rng, TAG_SCENARIO};
use crate::trajectory::{ball_draw, simulate};

#[derive(Debug, Error)]
pub enum FalsifyError {
    #[error("{0}")]
    Spec(String),
}

/// The statement under attack.
pub enum Claim {
    /// |x_k| <= beta(|x0|, t_k) + gamma(sup_{i<k} |e_i|) + r for scenarios
    /// with |x0| <= m0, |e_i| <= e0, T_i in (0, t_bound).
    Envelope {
        beta: KLFn,
        gamma: Option<ComparisonFn>,
        r: f64,
        m0: f64,
        e0: f64,
        t_bound: f64,
    },
    /// One-step decrease of the candidate over its sweep domain with
    /// T in (0, t_bound).
    Decrease {
        candidate: LyapunovCandidate,
        mode: Mode,
        t_bound: f64,
    },
}

impl Claim {
    fn t_bound(&self) -> f64 {
        match self {
            Claim::Envelope { t_bound, .. } => *t_bound,
            Claim::Decrease { t_bound, .. } => *t_bound,
        }
    }

    fn describe(&self) -> serde_json::Value {
        match self {
            Claim::Envelope {
                beta,
                gamma,
                r,
                m0,
                e0,
                t_bound,
            } => json!({
                "type": "envelope",
                "beta": beta.label(),
                "gamma": gamma.as_ref().map(|g| g.label().to_string()),
                "R": r,
                "M0": m0,
                "E0": e0,
                "T_bound": t_bound,
            }),
            Claim::Decrease {
                candidate,
                mode,
                t_bound,
            } => json!({
                "type": "decrease",
                "V": candidate.v.label(),
                "alpha3": candidate.alpha3.label(),
                "mode": match mode {
                    Mode::RssVsr => "robust",
                    Mode::SissVsr => "input-to-state",
                },
                "M": candidate.m,
                "E_or_D": candidate.e_or_d,
                "T_bound": t_bound,
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FalsifyBudget {
    pub restarts: usize,
    pub local_iters: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for FalsifyBudget {
    fn default() -> Self {
        FalsifyBudget {
            restarts: 256,
            local_iters: 64,
            horizon: 200,
            seed: 0,
        }
    }
}

pub struct FalsificationProblem<'a> {
    pub model: &'a ClosedLoopModel,
    pub claim: Claim,
    pub budget: FalsifyBudget,
}

#[derive(Clone)]
struct Scenario {
    x0: Vec<f64>,
    periods: Vec<f64>,
    errors: Vec<Vec<f64>>,
}

/// Score plus supporting record for one scenario evaluation. Higher score is
/// closer to (or further past) a violation; positive means the claim failed.
struct Eval {
    score: f64,
    ratio: f64,
    violation: Option<ViolationRecord>,
}

fn eval_envelope(
    model: &ClosedLoopModel,
    beta: &KLFn,
    gamma: Option<&ComparisonFn>,
    r: f64,
    sc: &Scenario,
) -> Eval {
    let traj = match simulate(model, &sc.x0, &sc.periods, &sc.errors) {
        Ok(t) => t,
        Err(_) => {
            return Eval {
                score: f64::NEG_INFINITY,
                ratio: f64::NEG_INFINITY,
                violation: None,
            }
        }
    };
    let rep = envelope_check(std::slice::from_ref(&traj), beta, gamma, r);
    let mut violation = None;
    let mut best = f64::NEG_INFINITY;
    for v in &rep.violations {
        if v.excess > best {
            best = v.excess;
            violation = Some(ViolationRecord {
                k: v.k,
                lhs: v.lhs,
                rhs: v.rhs,
            });
        }
    }
    Eval {
        score: rep.max_excess,
        ratio: rep.worst_ratio,
        violation,
    }
}

fn eval_decrease(
    model: &ClosedLoopModel,
    cand: &LyapunovCandidate,
    mode: Mode,
    t_bound: f64,
    sc: &Scenario,
) -> Eval {
    let infeasible = Eval {
        score: f64::NEG_INFINITY,
        ratio: f64::NEG_INFINITY,
        violation: None,
    };
    let (x, e, t) = (&sc.x0, &sc.errors[0], sc.periods[0]);
    if !(t > 0.0 && t < t_bound) {
        return infeasible;
    }
    let rx = norm2(x);
    let re = norm2(e);
    let tol = 1.0 + 1e-12;
    if rx > cand.m * tol || re > cand.e_or_d * tol {
        return infeasible;
    }
    if mode == Mode::SissVsr {
        if let Some(rho) = &cand.rho {
            match rho.eval_k(re) {
                Ok(v) if v <= rx * tol => {}
                _ => return infeasible,
            }
        }
    }
    let v_x = cand.v.eval(x);
    let a3x = match cand.alpha3.eval_k(rx) {
        Ok(v) => v,
        Err(_) => return infeasible,
    };
    let next = match model.step(x, e, t) {
        Ok(n) => n,
        Err(_) => return infeasible,
    };
    let v_next = cand.v.eval(&next);
    if !v_x.is_finite() || v_next.is_nan() {
        return infeasible;
    }
    let margin = decrease_margin(v_next, v_x, t, a3x);
    let lhs = v_next;
    let rhs = v_x - t * a3x;
    let score = -margin;
    Eval {
        score,
        ratio: score,
        violation: if score > 0.0 {
            Some(ViolationRecord { k: 0, lhs, rhs })
        } else {
            None
        },
    }
}

fn eval_scenario(model: &ClosedLoopModel, claim: &Claim, sc: &Scenario) -> Eval {
    match claim {
        Claim::Envelope {
            beta, gamma, r, ..
        } => eval_envelope(model, beta, gamma.as_ref(), *r, sc),
        Claim::Decrease {
            candidate,
            mode,
            t_bound,
        } => eval_decrease(model, candidate, *mode, *t_bound, sc),
    }
}

/// Scale a vector in place so its norm is at most `cap`.
fn clamp_norm(v: &mut [f64], cap: f64) {
    let r = norm2(v);
    if r > cap {
        let f = if r > 0.0 { cap / r } else { 0.0 };
        for c in v.iter_mut() {
            *c *= f;
        }
    }
}

fn restart_scenario(
    model: &ClosedLoopModel,
    claim: &Claim,
    budget: &FalsifyBudget,
    i: usize,
) -> Scenario {
    let mut rng = indexed_rng(budget.seed, TAG_SCENARIO, i as u64);
    let t_bound = claim.t_bound();
    let t_hi = t_bound * (1.0 - 1e-9);
    let t_lo = t_bound * 1e-9;
    let (radius, e_bound, steps) = match claim {
        Claim::Envelope { m0, e0, .. } => (*m0, *e0, budget.horizon),
        Claim::Decrease { candidate, .. } => (candidate.m, candidate.e_or_d, 1),
    };
    let mut x0 = if i % 4 == 0 {
        let mut v = vec![0.0; model.n];
        v[0] = radius;
        v
    } else if i % 4 == 1 {
        let mut v = vec![0.0; model.n];
        v[0] = -radius;
        v
    } else {
        ball_draw(&mut rng, model.n, radius)
    };
    clamp_norm(&mut x0, radius);
    let periods: Vec<f64> = if (i / 4) % 2 == 0 {
        vec![t_hi; steps]
    } else {
        (0..steps)
            .map(|_| {
                let u: f64 = rand::Rng::gen(&mut rng);
                t_lo + (t_hi - t_lo) * u
            })
            .collect()
    };
    let errors: Vec<Vec<f64>> = match (i / 8) % 3 {
        0 => vec![vec![0.0; model.q]; steps],
        1 => {
            let mut v = vec![0.0; model.q];
            if !v.is_empty() {
                v[0] = e_bound;
            }
            vec![v; steps]
        }
        _ => (0..steps)
            .map(|_| {
                let mut e = ball_draw(&mut rng, model.q, e_bound);
                // Push to the sphere: extremal errors stress the claim most.
                let r = norm2(&e);
                if r > 0.0 {
                    let f = e_bound / r;
                    for c in e.iter_mut() {
                        *c *= f;
                    }
                }
                e
            })
            .collect(),
    };
    Scenario {
        x0,
        periods,
        errors,
    }
}

/// One restart: evaluate the seed scenario, then coordinate-wise hill climb
/// with shrinking steps. Returns the best evaluation, the scenario that
/// achieved it, the largest closeness ratio seen, and the evaluation count.
fn run_restart(
    model: &ClosedLoopModel,
    claim: &Claim,
    budget: &FalsifyBudget,
    i: usize,
) -> (f64, f64, usize, Scenario, Option<ViolationRecord>) {
    let t_bound = claim.t_bound();
    let t_hi = t_bound * (1.0 - 1e-9);
    let t_lo = t_bound * 1e-9;
    let (radius, e_bound) = match claim {
        Claim::Envelope { m0, e0, .. } => (*m0, *e0),
        Claim::Decrease { candidate, .. } => (candidate.m, candidate.e_or_d),
    };
    let mut best_sc = restart_scenario(model, claim, budget, i);
    let mut best = eval_scenario(model, claim, &best_sc);
    let mut evals = 1usize;
    let mut ratio = best.ratio;

    let n = model.n;
    let steps = best_sc.periods.len();
    let q = model.q;
    // Coordinates: x0 components, then per-step periods, then per-step error
    // components. Coordinates with zero scale are skipped.
    let n_coords = n + steps + steps * q;
    let mut scale = 1.0_f64;
    let mut trials = 0usize;
    let mut coord = 0usize;
    let mut since_improvement = 0usize;
    while trials < budget.local_iters && scale > 1e-6 {
        let c = coord % n_coords;
        coord += 1;
        let (base_step, skip) = if c < n {
            (0.25 * radius * scale, radius == 0.0)
        } else if c < n + steps {
            (0.25 * t_bound * scale, false)
        } else {
            (0.5 * e_bound * scale, e_bound == 0.0)
        };
        if skip {
            // Count the pass so degenerate problems still terminate.
            since_improvement += 1;
            if since_improvement >= n_coords {
                scale *= 0.7;
                since_improvement = 0;
            }
            continue;
        }
        trials += 1;
        let mut improved = false;
        for dir in [1.0, -1.0] {
            let mut sc = best_sc.clone();
            if c < n {
                sc.x0[c] += dir * base_step;
                clamp_norm(&mut sc.x0, radius);
            } else if c < n + steps {
                let k = c - n;
                sc.periods[k] = (sc.periods[k] + dir * base_step).clamp(t_lo, t_hi);
            } else {
                let k = (c - n - steps) / q;
                let j = (c - n - steps) % q;
                sc.errors[k][j] += dir * base_step;
                clamp_norm(&mut sc.errors[k], e_bound);
            }
            let ev = eval_scenario(model, claim, &sc);
            evals += 1;
            ratio = ratio.max(ev.ratio);
            if ev.score > best.score {
                best = ev;
                best_sc = sc;
                improved = true;
            }
        }
        if improved {
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= n_coords {
                scale *= 0.7;
                since_improvement = 0;
            }
        }
    }
    (best.score, ratio, evals, best_sc, best.violation)
}

/// Search for a scenario violating the claim. A returned witness has been
/// replayed through the same evaluation path used for scoring; a run that
/// finds nothing reports how close the search came.
pub fn falsify(problem: &FalsificationProblem) -> Result<FalsifyReport, FalsifyError> {
    let model = problem.model;
    let claim = &problem.claim;
    let budget = &problem.budget;
    if budget.restarts == 0 || budget.horizon == 0 {
        return Err(FalsifyError::Spec(
            "budget must include at least one restart and one step".into(),
        ));
    }
    let t_bound = claim.t_bound();
    if !(t_bound > 0.0 && t_bound.is_finite()) {
        return Err(FalsifyError::Spec(format!(
            "period bound must be positive and finite, got {t_bound}"
        )));
    }
    match claim {
        Claim::Envelope { m0, e0, r, .. } => {
            if !(*m0 >= 0.0 && m0.is_finite()) || !(*e0 >= 0.0 && e0.is_finite()) {
                return Err(FalsifyError::Spec(format!(
                    "ball radii must be finite and nonnegative, got M0 = {m0}, E0 = {e0}"
                )));
            }
            if !r.is_finite() {
                return Err(FalsifyError::Spec(format!("offset must be finite, got {r}")));
            }
        }
        Claim::Decrease { candidate, .. } => {
            if !(candidate.m >= 0.0 && candidate.m.is_finite()) {
                return Err(FalsifyError::Spec(format!(
                    "candidate radius must be finite and nonnegative, got {}",
                    candidate.m
                )));
            }
        }
    }

    let results: Vec<(f64, f64, usize, Scenario, Option<ViolationRecord>)> = (0..budget
        .restarts)
        .into_par_iter()
        .map(|i| run_restart(model, claim, budget, i))
        .collect();

    let mut best_idx = 0usize;
    let mut closeness = f64::NEG_INFINITY;
    let mut scenarios_evaluated = 0usize;
    for (i, r) in results.iter().enumerate() {
        scenarios_evaluated += r.2;
        closeness = closeness.max(r.1);
        if r.0 > results[best_idx].0 {
            best_idx = i;
        }
    }
    let (best_score, _, _, best_sc, best_violation) = &results[best_idx];

    let mut caveats = vec![format!(
        "search evidence from {} restarts with {} local trials each; \
         absence of a witness is not a proof",
        budget.restarts, budget.local_iters
    )];

    if *best_score > 0.0 {
        // Replay through the public path before reporting. The replayed
        // violation must reproduce the stored one exactly; anything else
        // means the witness does not stand on its own and is withheld.
        let replay = eval_scenario(model, claim, best_sc);
        let stands = match (&replay.violation, best_violation) {
            (Some(a), Some(b)) => a.k == b.k && a.lhs == b.lhs && a.rhs == b.rhs,
            _ => false,
        };
        if stands {
            return Ok(FalsifyReport {
                outcome: FalsifyOutcome::CounterexampleFound,
                witness: Some(WitnessScenario {
                    x0: best_sc.x0.clone(),
                    periods: best_sc.periods.clone(),
                    errors: best_sc.errors.clone(),
                    claim: claim.describe(),
                    violation: replay.violation.unwrap(),
                }),
                closeness,
                scenarios_evaluated,
                caveats,
            });
        }
        caveats.push("a candidate witness failed replay and was withheld".into());
    }
    Ok(FalsifyReport {
        outcome: FalsifyOutcome::NoCounterexampleFound,
        witness: None,
        closeness,
        scenarios_evaluated,
        caveats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certifier::StateFn;
    use crate::comparison::Kind;
    use crate::models::build_model;

    fn square() -> ComparisonFn {
        ComparisonFn::native("s^2", Kind::ClassKInfinity, |s| s * s)
    }

    fn example_candidate(m: f64, k: f64) -> LyapunovCandidate {
        crate::example::ExampleCertificate::new(m, k).unwrap().candidate()
    }

    #[test]
    fn unstable_growth_is_caught_in_first_restarts() {
        let model = build_model("euler:x1", None, 1e-10).unwrap();
        let claim = Claim::Envelope {
            beta: KLFn::from_expr("2 * s * exp(-t)").unwrap(),
            gamma: None,
            r: 0.0,
            m0: 1.0,
            e0: 0.0,
            t_bound: 0.5,
        };
        let problem = FalsificationProblem {
            model: &model,
            claim,
            budget: FalsifyBudget {
                restarts: 4,
                local_iters: 4,
                horizon: 40,
                seed: 0,
            },
        };
        let rep = falsify(&problem).unwrap();
        assert_eq!(rep.outcome, FalsifyOutcome::CounterexampleFound);
        let w = rep.witness.unwrap();
        assert!(w.violation.lhs > w.violation.rhs);
        assert!(rep.closeness > 1.0);
    }

    #[test]
    fn witness_replays_to_identical_values() {
        let model = build_model("euler:x1", None, 1e-10).unwrap();
        let beta = KLFn::from_expr("2 * s * exp(-t)").unwrap();
        let claim = Claim::Envelope {
            beta: beta.clone(),
            gamma: None,
            r: 0.0,
            m0: 1.0,
            e0: 0.0,
            t_bound: 0.5,
        };
        let problem = FalsificationProblem {
            model: &model,
            claim,
            budget: FalsifyBudget {
                restarts: 4,
                local_iters: 8,
                horizon: 30,
                seed: 1,
            },
        };
        let rep = falsify(&problem).unwrap();
        let w = rep.witness.expect("witness expected");
        let traj = simulate(&model, &w.x0, &w.periods, &w.errors).unwrap();
        let check = envelope_check(&[traj], &beta, None, 0.0);
        let worst = check
            .violations
            .iter()
            .max_by(|a, b| a.excess.total_cmp(&b.excess))
            .unwrap();
        assert_eq!(worst.k, w.violation.k);
        assert_eq!(worst.lhs, w.violation.lhs);
        assert_eq!(worst.rhs, w.violation.rhs);
    }

    #[test]
    fn certified_envelope_resists_search() {
        // The workbench example under its own certificate envelope: gamma
        // absorbs the error deadzone, so no scenario in the claim's domain
        // violates.
        let model = build_model("paper_example", None, 1e-10).unwrap();
        let a3 = ComparisonFn::native("3 s^4 + s^2", Kind::ClassKInfinity, |s| {
            let s2 = s * s;
            3.0 * s2 * s2 + s2
        });
        let beta = crate::bounds::beta_from_certificate(&square(), &square(), &a3).unwrap();
        let eta = ComparisonFn::native("s / 0.025", Kind::ClassKInfinity, |s| s / 0.025);
        let gamma = crate::bounds::gamma_from_certificate(&square(), &square(), &eta).unwrap();
        let claim = Claim::Envelope {
            beta,
            gamma: Some(gamma),
            r: 1e-9,
            m0: 1.0,
            e0: 0.025,
            t_bound: 0.06,
        };
        let problem = FalsificationProblem {
            model: &model,
            claim,
            budget: FalsifyBudget {
                restarts: 24,
                local_iters: 24,
                horizon: 60,
                seed: 0,
            },
        };
        let rep = falsify(&problem).unwrap();
        assert_eq!(rep.outcome, FalsifyOutcome::NoCounterexampleFound);
        assert!(rep.witness.is_none());
        assert!(rep.closeness < 1.0, "closeness {}", rep.closeness);
        assert!(rep.scenarios_evaluated >= 24);
    }

    #[test]
    fn oversized_period_breaks_the_decrease() {
        // T far beyond the certified range makes the Euler step overshoot.
        let model = build_model("paper_example", None, 1e-10).unwrap();
        let claim = Claim::Decrease {
            candidate: example_candidate(1.0, 0.025),
            mode: Mode::SissVsr,
            t_bound: 2.0,
        };
        let problem = FalsificationProblem {
            model: &model,
            claim,
            budget: FalsifyBudget {
                restarts: 8,
                local_iters: 16,
                horizon: 1,
                seed: 0,
            },
        };
        let rep = falsify(&problem).unwrap();
        assert_eq!(rep.outcome, FalsifyOutcome::CounterexampleFound);
        let w = rep.witness.unwrap();
        assert_eq!(w.violation.k, 0);
        assert_eq!(w.periods.len(), 1);
        // Replay the one-step claim by hand.
        let cand = example_candidate(1.0, 0.025);
        let next = model.step(&w.x0, &w.errors[0], w.periods[0]).unwrap();
        let lhs = next[0] * next[0];
        let rhs = w.x0[0] * w.x0[0]
            - w.periods[0] * cand.alpha3.eval(norm2(&w.x0));
        assert_eq!(lhs, w.violation.lhs);
        assert_eq!(rhs, w.violation.rhs);
        assert!(lhs > rhs);
    }

    #[test]
    fn certified_decrease_resists_search() {
        let model = build_model("paper_example", None, 1e-10).unwrap();
        let cand = example_candidate(1.0, 0.025);
        let ttilde = crate::example::ExampleCertificate::new(1.0, 0.025)
            .unwrap()
            .ttilde;
        let claim = Claim::Decrease {
            candidate: cand,
            mode: Mode::SissVsr,
            t_bound: ttilde,
        };
        let problem = FalsificationProblem {
            model: &model,
            claim,
            budget: FalsifyBudget {
                restarts: 32,
                local_iters: 32,
                horizon: 1,
                seed: 5,
            },
        };
        let rep = falsify(&problem).unwrap();
        assert_eq!(rep.outcome, FalsifyOutcome::NoCounterexampleFound);
        // Deficit stays strictly negative: every feasible probe decreased.
        assert!(rep.closeness < 0.0, "closeness {}", rep.closeness);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let model = build_model("paper_example", None, 1e-10).unwrap();
        let mk = || FalsificationProblem {
            model: &model,
            claim: Claim::Decrease {
                candidate: example_candidate(1.0, 0.025),
                mode: Mode::SissVsr,
                t_bound: 2.0,
            },
            budget: FalsifyBudget {
                restarts: 12,
                local_iters: 12,
                horizon: 1,
                seed: 9,
            },
        };
        let a = falsify(&mk()).unwrap();
        let b = falsify(&mk()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn zero_state_claim_survives_degenerate_search() {
        // Radius-zero ball: the only feasible state is the origin, which the
        // example map fixes. Search must terminate and find nothing.
        let model = build_model("paper_example", None, 1e-10).unwrap();
        let claim = Claim::Decrease {
            candidate: LyapunovCandidate {
                v: StateFn::native("x^2", |x: &[f64]| x[0] * x[0]),
                alpha1: square(),
                alpha2: square(),
                alpha3: square(),
                rho: None,
                m: 0.0,
                e_or_d: 0.0,
            },
            mode: Mode::RssVsr,
            t_bound: 0.1,
        };
        let problem = FalsificationProblem {
            model: &model,
            claim,
            budget: FalsifyBudget {
                restarts: 4,
                local_iters: 8,
                horizon: 1,
                seed: 0,
            },
        };
        let rep = falsify(&problem).unwrap();
        assert_eq!(rep.outcome, FalsifyOutcome::NoCounterexampleFound);
    }
}
