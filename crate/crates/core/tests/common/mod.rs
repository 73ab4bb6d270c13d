//! Property suites shared between the standalone property target and the
//! acceptance target. Each suite runs a fixed number of random cases from a
//! deterministic seed and panics on the first failing case.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestError, TestRng, TestRunner};

use vsr_stability::bounds::{converse_lyapunov_estimate, ConverseBudget};
use vsr_stability::certifier::{certify_decrease, CertGrid, Mode};
use vsr_stability::comparison::{ComparisonFn, KLFn, Kind};
use vsr_stability::example::{example_ttilde, ExampleCertificate};
use vsr_stability::models::build_model;

fn runner(cases: u32, label: u64) -> TestRunner {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&label.to_le_bytes());
    seed[8..16].copy_from_slice(&label.rotate_left(17).to_le_bytes());
    let cfg = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(cfg, TestRng::from_seed(RngAlgorithm::ChaCha, &seed))
}

fn unwrap_run<T: std::fmt::Debug>(what: &str, r: Result<(), TestError<T>>) {
    if let Err(e) = r {
        panic!("{what}: {e}");
    }
}

/// Class-K evaluations are nondecreasing and vanish at zero; chained KL
/// evaluations are nondecreasing in the first argument and nonincreasing in
/// the elapsed time. The 1e-9 slack absorbs the flow solver tolerance.
pub fn comparison_monotonicity_suite(cases: u32) {
    let strat = (
        0.1..10.0f64,
        0.0..10.0f64,
        0.0..5.0f64,
        1e-3..5.0f64,
        0.0..3.0f64,
        1e-3..3.0f64,
        0.2..3.0f64,
    );
    unwrap_run(
        "comparison/KL monotonicity",
        runner(cases, 0x70726f70_0001).run(&strat, |(c1, c3, s1, gap, t1, dt, lam)| {
            let f = ComparisonFn::from_expr(
                &format!("{c1} * s + {c3} * pow(s, 3)"),
                Kind::ClassKInfinity,
            )
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let s2 = s1 + gap;
            let f0 = f.eval(0.0);
            let f1 = f.eval(s1);
            let f2 = f.eval(s2);
            prop_assert_eq!(f0, 0.0);
            prop_assert!(f1 <= f2, "K order broke: f({}) = {} > f({}) = {}", s1, f1, s2, f2);

            let a1 = ComparisonFn::from_expr("pow(s, 2)", Kind::ClassKInfinity).unwrap();
            let a2 = ComparisonFn::from_expr(&format!("{lam} * pow(s, 2)"), Kind::ClassKInfinity)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let alpha = ComparisonFn::from_expr("s", Kind::ClassKInfinity).unwrap();
            let beta = KLFn::chained(a1, a2, alpha);
            let b11 = beta.eval(s1, t1);
            let b21 = beta.eval(s2, t1);
            let b22 = beta.eval(s2, t1 + dt);
            prop_assert!(
                b11 <= b21 + 1e-9,
                "KL s-order broke: beta({}, {}) = {} > beta({}, {}) = {}",
                s1, t1, b11, s2, t1, b21
            );
            prop_assert!(
                b22 <= b21 + 1e-9,
                "KL t-order broke: beta({}, {}) = {} > beta({}, {}) = {}",
                s2, t1 + dt, b22, s2, t1, b21
            );
            Ok(())
        }),
    );
}

/// Certifying the same candidate twice over the same grid spec gives
/// bit-identical margins and identical serialized reports.
pub fn margin_reproducibility_suite(cases: u32) {
    let model = build_model("paper_example", None, 1e-10).unwrap();
    let strat = (
        0.3..1.0f64,
        0.1..1.0f64,
        any::<u64>(),
        3..9usize,
        3..6usize,
        2..7usize,
        8..33usize,
    );
    unwrap_run(
        "margin reproducibility",
        runner(cases, 0x70726f70_0002).run(
            &strat,
            |(m, t_frac, seed, x_points, e_points, t_points, lhs_samples)| {
                let cert = ExampleCertificate::new(m, 0.025)
                    .map_err(|e| TestCaseError::fail(e.to_string()))?;
                let grid = CertGrid {
                    x_points,
                    e_points,
                    t_points,
                    lhs_samples,
                    seed,
                    lipschitz: None,
                };
                let t_bound = t_frac * cert.ttilde;
                let r1 =
                    certify_decrease(&model, &cert.candidate(), Mode::SissVsr, t_bound, &grid)
                        .map_err(|e| TestCaseError::fail(e.to_string()))?;
                let r2 =
                    certify_decrease(&model, &cert.candidate(), Mode::SissVsr, t_bound, &grid)
                        .map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(r1.min_margin.to_bits(), r2.min_margin.to_bits());
                prop_assert_eq!(
                    serde_json::to_string(&r1).unwrap(),
                    serde_json::to_string(&r2).unwrap()
                );
                Ok(())
            },
        ),
    );
}

/// Doubling every axis keeps all old grid points, so the reported minimum
/// margin can only move down.
pub fn grid_refinement_suite(cases: u32) {
    let model = build_model("paper_example", None, 1e-10).unwrap();
    let strat = (
        0.3..1.0f64,
        0.1..1.0f64,
        any::<u64>(),
        3..8usize,
        3..6usize,
        2..6usize,
        8..17usize,
    );
    unwrap_run(
        "grid refinement",
        runner(cases, 0x70726f70_0003).run(
            &strat,
            |(m, t_frac, seed, x_points, e_points, t_points, lhs_samples)| {
                let cert = ExampleCertificate::new(m, 0.025)
                    .map_err(|e| TestCaseError::fail(e.to_string()))?;
                let coarse = CertGrid {
                    x_points,
                    e_points,
                    t_points,
                    lhs_samples,
                    seed,
                    lipschitz: None,
                };
                let refined = CertGrid {
                    x_points: 2 * x_points - 1,
                    e_points: 2 * e_points - 1,
                    t_points: 2 * t_points + 1,
                    lhs_samples,
                    seed,
                    lipschitz: None,
                };
                let t_bound = t_frac * cert.ttilde;
                let rc =
                    certify_decrease(&model, &cert.candidate(), Mode::SissVsr, t_bound, &coarse)
                        .map_err(|e| TestCaseError::fail(e.to_string()))?;
                let rr =
                    certify_decrease(&model, &cert.candidate(), Mode::SissVsr, t_bound, &refined)
                        .map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert!(
                    rr.min_margin <= rc.min_margin,
                    "refined min {} > coarse min {}",
                    rr.min_margin,
                    rc.min_margin
                );
                Ok(())
            },
        ),
    );
}

/// The converse estimate includes the zero-step term, so it never falls
/// below alpha1 of the start norm.
pub fn converse_lower_bound_suite(cases: u32) {
    let model = build_model("paper_example", None, 1e-10).unwrap();
    let alpha1 = ComparisonFn::from_expr("pow(s, 2)", Kind::ClassKInfinity).unwrap();
    let ttilde = example_ttilde(1.0, 0.025);
    let strat = (
        -1.0..1.0f64,
        0.1..1.0f64,
        2..8usize,
        5..30usize,
        any::<u64>(),
        0.0..0.02f64,
    );
    unwrap_run(
        "converse lower bound",
        runner(cases, 0x70726f70_0004).run(
            &strat,
            |(xi, t_frac, scenarios, horizon, seed, d_bound)| {
                let budget = ConverseBudget {
                    horizon,
                    scenarios,
                    d_bound,
                    seed,
                };
                let vhat =
                    converse_lyapunov_estimate(&model, &alpha1, &[xi], t_frac * ttilde, &budget)
                        .map_err(|e| TestCaseError::fail(e.to_string()))?;
                let floor = alpha1.eval(xi.abs());
                prop_assert!(
                    vhat >= floor,
                    "estimate {} fell below the sandwich floor {}",
                    vhat,
                    floor
                );
                Ok(())
            },
        ),
    );
}
