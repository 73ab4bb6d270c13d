//! End-to-end acceptance checks. Each test covers one numbered criterion and
//! prints a single pass line with the measured evidence; a failed assert is
//! the corresponding fail line.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vsr_stability::bounds::{
    beta_from_certificate, comparison_ode, envelope_check, inflate_domain, tbar_threshold,
};
use vsr_stability::certifier::{check_structural, Mode, StructuralGrid};
use vsr_stability::comparison::{ComparisonFn, KLFn, Kind};
use vsr_stability::example::{example_model, verify_example, ExampleCertificate, ExampleGrid};
use vsr_stability::falsify::{falsify, Claim, FalsificationProblem, FalsifyBudget};
use vsr_stability::grid::linspace;
use vsr_stability::models::{
    build_model, existence_horizon, DiscreteStepMap, ModelScratch, StepMethod, VectorField,
};
use vsr_stability::report::{FalsifyOutcome, Verdict};
use vsr_stability::rng::{derive_seed, indexed_rng, TAG_INIT, TAG_SCENARIO};
use vsr_stability::trajectory::{
    gen_errors, gen_sampling, simulate, ErrorMode, ErrorSpec, SamplingMode, SamplingSpec,
};

fn rel(err: f64, reference: f64) -> f64 {
    (err - reference).abs() / reference.abs()
}

fn single_worker<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn criterion_01_certificate_reproduction() {
    let t0 = Instant::now();
    let v = single_worker(|| verify_example(1.0, 0.025, &ExampleGrid::default()).unwrap());
    let elapsed = t0.elapsed();
    let c = &v.certificate;
    assert!(rel(c.a, 6.325896486572265625) <= 1e-9, "a = {}", c.a);
    assert!(rel(c.b, 4.57287734375) <= 1e-9, "b = {}", c.b);
    assert!(rel(c.c, 1.050625) <= 1e-9, "c = {}", c.c);
    assert!(rel(c.d, 0.45009375) <= 1e-9, "d = {}", c.d);
    assert!(
        rel(c.ttilde, 0.067782626392421835) <= 1e-6,
        "T_tilde = {}",
        c.ttilde
    );
    assert_eq!(v.report.verdict, Verdict::CertifiedOnGrid);
    assert!(v.report.min_margin >= 0.0, "min_margin = {}", v.report.min_margin);
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "criterion 01: PASS (a..d and T_tilde reproduced, min_margin = {:.3e}, {:?} single-worker)",
        v.report.min_margin, elapsed
    );
}

#[test]
fn criterion_02_cross_model_identity() {
    let composed = build_model(
        "euler:pow(x1, 3) + u1",
        Some("0 - (x1 + e1) - 3 * pow(x1 + e1, 3)"),
        1e-10,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let t0 = Instant::now();
    let mut worst = 0.0_f64;
    for _ in 0..100_000 {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let e: f64 = rng.gen_range(-0.1..0.1);
        let t: f64 = rng.gen_range(1e-6..0.1);
        let closed = example_model(x, e, t);
        let stepped = composed.step(&[x], &[e], t).unwrap()[0];
        worst = worst.max((closed - stepped).abs());
    }
    let elapsed = t0.elapsed();
    assert!(worst <= 1e-14, "worst |difference| = {worst:e}");
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "criterion 02: PASS (10^5 points, worst |difference| = {worst:.2e}, {elapsed:?})"
    );
}

#[test]
fn criterion_03_envelope_soundness() {
    let t0 = Instant::now();
    let alpha1 = ComparisonFn::from_expr("pow(s, 2)", Kind::ClassKInfinity).unwrap();
    let alpha2 = ComparisonFn::from_expr("pow(s, 2)", Kind::ClassKInfinity).unwrap();
    let alpha3 =
        ComparisonFn::from_expr("3 * pow(s, 4) + pow(s, 2)", Kind::ClassKInfinity).unwrap();
    let rho = ComparisonFn::from_expr("s / 0.025", Kind::ClassK).unwrap();
    let beta = beta_from_certificate(&alpha1, &alpha2, &alpha3).unwrap();
    let m = inflate_domain(&alpha1, &alpha2, &rho, 1.0, 0.0).unwrap();
    assert!((m - 1.0).abs() <= 1e-9, "inflated radius = {m}");

    let model = build_model("paper_example", None, 1e-10).unwrap();
    let mut trajs = Vec::with_capacity(1000);
    for i in 0..1000u64 {
        let x0: f64 = indexed_rng(0, TAG_INIT, i).gen_range(-1.0..=1.0);
        let sseed = derive_seed(0, TAG_SCENARIO, i);
        let periods = gen_sampling(&SamplingSpec {
            mode: SamplingMode::IIDUniform,
            t_max: 0.06,
            len: 200,
            seed: sseed,
        })
        .unwrap();
        let errors = gen_errors(&ErrorSpec {
            mode: ErrorMode::Zero,
            bound: 0.0,
            q: model.q,
            len: 200,
            seed: sseed,
        })
        .unwrap();
        trajs.push(simulate(&model, &[x0], &periods, &errors).unwrap());
    }
    let report = envelope_check(&trajs, &beta, None, 0.0);
    let elapsed = t0.elapsed();
    assert!(
        report.violations.is_empty(),
        "violations: {:?}",
        &report.violations[..report.violations.len().min(3)]
    );
    assert_eq!(report.checked_points, 1000 * 201);
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "criterion 03: PASS (1000 scenarios x 201 states, zero violations, worst ratio {:.3}, {:?})",
        report.worst_ratio, elapsed
    );
}

#[test]
fn criterion_04_falsifier_sanity() {
    let t0 = Instant::now();

    let growth = build_model("euler:x1", None, 1e-10).unwrap();
    let decaying = KLFn::from_expr("2 * s * exp(-t)").unwrap();
    let one_restart = falsify(&FalsificationProblem {
        model: &growth,
        claim: Claim::Envelope {
            beta: decaying,
            gamma: None,
            r: 0.0,
            m0: 1.0,
            e0: 0.0,
            t_bound: 0.05,
        },
        budget: FalsifyBudget {
            restarts: 1,
            local_iters: 64,
            horizon: 200,
            seed: 0,
        },
    })
    .unwrap();
    assert_eq!(one_restart.outcome, FalsifyOutcome::CounterexampleFound);

    let model = build_model("paper_example", None, 1e-10).unwrap();
    let cert = ExampleCertificate::new(1.0, 0.025).unwrap();
    let oversized = falsify(&FalsificationProblem {
        model: &model,
        claim: Claim::Decrease {
            candidate: cert.candidate(),
            mode: Mode::SissVsr,
            t_bound: 2.0,
        },
        budget: FalsifyBudget::default(),
    })
    .unwrap();
    assert_eq!(oversized.outcome, FalsifyOutcome::CounterexampleFound);

    let certified = falsify(&FalsificationProblem {
        model: &model,
        claim: Claim::Decrease {
            candidate: cert.candidate(),
            mode: Mode::SissVsr,
            t_bound: cert.ttilde,
        },
        budget: FalsifyBudget::default(),
    })
    .unwrap();
    let elapsed = t0.elapsed();
    assert_eq!(certified.outcome, FalsifyOutcome::NoCounterexampleFound);
    assert!(
        certified.scenarios_evaluated >= 10_000,
        "only {} scenarios",
        certified.scenarios_evaluated
    );
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "criterion 04: PASS (witness in 1 restart; witness at T_bound 2.0; certified claim survived {} scenarios; {:?} total)",
        certified.scenarios_evaluated, elapsed
    );
}

#[test]
fn criterion_05_comparison_ode_correctness() {
    let alpha = ComparisonFn::from_expr("s", Kind::ClassKInfinity).unwrap();
    let mut worst = 0.0_f64;
    for &s in &linspace(0.1, 2.0, 10) {
        for &t in &linspace(0.0, 3.0, 10) {
            let got = comparison_ode(&alpha, s, t).unwrap();
            worst = worst.max((got - s * (-t).exp()).abs());
        }
    }
    assert!(worst <= 1e-8, "worst |flow - s e^-t| = {worst:e}");

    let stiff = ComparisonFn::from_expr("3 * pow(s, 2) + s", Kind::ClassKInfinity).unwrap();
    let mut worst_semi = 0.0_f64;
    for a in [&alpha, &stiff] {
        for &s in &[0.3, 1.0, 1.7] {
            for &t1 in &[0.2, 0.7, 1.3] {
                for &t2 in &[0.2, 0.7, 1.3] {
                    let whole = comparison_ode(a, s, t1 + t2).unwrap();
                    let mid = comparison_ode(a, s, t1).unwrap();
                    let split = comparison_ode(a, mid, t2).unwrap();
                    worst_semi = worst_semi.max((whole - split).abs());
                }
            }
        }
    }
    assert!(worst_semi <= 1e-7, "worst semigroup gap = {worst_semi:e}");
    println!(
        "criterion 05: PASS (closed-form gap {worst:.2e}, semigroup gap {worst_semi:.2e})"
    );
}

#[test]
fn criterion_06_threshold() {
    let thr = tbar_threshold();
    assert!(
        (thr - 0.796812130020020046).abs() <= 1e-6,
        "threshold = {thr}"
    );
    println!("criterion 06: PASS (threshold = {thr:.12})");
}

#[test]
fn criterion_07_existence_horizon() {
    let field = VectorField::from_exprs("pow(x1, 3) + u1").unwrap();
    let h = existence_horizon(&field, &[(-1.0, 1.0)], &[(-4.0, 4.0)], 101, 1.0).unwrap();
    let target = 1.0 / 12.0;
    assert!(rel(h.t_star, target) <= 0.02, "T* = {}", h.t_star);

    let step = DiscreteStepMap::new(StepMethod::Tight { tol: 1e-12 }, field);
    let mut scratch = ModelScratch::default();
    let mut out = [0.0];
    let mut probes = 0;
    for &x0 in &linspace(-1.0, 1.0, 5) {
        for &u in &[-4.0, -4.0 / 3.0, 4.0 / 3.0, 4.0] {
            step.eval_into(&[x0], &[u], 0.99 * h.t_star, &mut out, &mut scratch)
                .unwrap();
            assert!(
                out[0].abs() <= 2.0 * h.r,
                "probe from x0 = {x0}, u = {u} reached {}",
                out[0]
            );
            probes += 1;
        }
    }
    assert_eq!(probes, 20);
    println!(
        "criterion 07: PASS (T* = {:.6} vs 1/12, 20 probes stayed inside the 2r ball)",
        h.t_star
    );
}

#[test]
fn criterion_08_structural_checks() {
    let model = build_model("paper_example", None, 1e-10).unwrap();
    let report = check_structural(
        &model,
        0.05,
        &[0.1, 0.25, 0.5, 1.0],
        &[0.25, 0.5, 1.0],
        &[0.0, 0.01, 0.025],
        &StructuralGrid::default(),
    )
    .unwrap();
    assert_eq!(report.origin_residual, 0.0);
    let deltas: Vec<f64> = report
        .delta_table
        .iter()
        .map(|d| d.delta.expect("every eps row should resolve a delta"))
        .collect();
    for w in deltas.windows(2) {
        assert!(w[0] <= w[1], "delta table not nondecreasing: {deltas:?}");
    }
    for row in &report.c_table {
        for w in row.windows(2) {
            assert!(w[0] <= w[1], "row not nondecreasing in E: {row:?}");
        }
    }
    for rows in report.c_table.windows(2) {
        for (lo, hi) in rows[0].iter().zip(&rows[1]) {
            assert!(lo <= hi, "column not nondecreasing in M");
        }
    }
    println!(
        "criterion 08: PASS (origin residual 0, delta table {:?} nondecreasing, C table monotone both ways)",
        deltas
    );
}

fn run_cli(args: &[&str], out_dir: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_vsrstab"))
        .args(args)
        .arg("--out-dir")
        .arg(out_dir)
        .status()
        .expect("spawning the workbench binary");
    status.code().expect("binary was signal-killed")
}

/// Byte map of a run directory, minus the config echo (it records the
/// requested worker count and therefore legitimately differs).
fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().into_string().unwrap();
        if name == "resolved_config.json" {
            continue;
        }
        out.insert(name, std::fs::read(entry.path()).unwrap());
    }
    out
}

#[test]
fn criterion_09_worker_count_invariance() {
    let base = std::env::temp_dir().join(format!("vsrstab-acceptance-{}", std::process::id()));
    let claim_path = base.join("claim.json");
    std::fs::create_dir_all(&base).unwrap();
    std::fs::write(
        &claim_path,
        r#"{"type": "envelope", "beta": "2 * s * exp(-t)", "R": 0.0, "M0": 1.0, "E0": 0.0, "T_bound": 0.05}"#,
    )
    .unwrap();
    let claim = claim_path.to_str().unwrap();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        (
            "example",
            vec!["example", "--M", "1", "--K", "0.025", "--x-points", "301", "--e-points", "21", "--t-points", "8"],
        ),
        (
            "falsify",
            vec!["falsify", "--model", "euler:x1", "--claim", claim, "--restarts", "16", "--K-steps", "80"],
        ),
        ("bounds", vec!["bounds", "--ensemble", "32", "--K-steps", "60"]),
        (
            "probe",
            vec!["probe", "--scenarios", "16", "--K-steps", "60", "--delta-candidates", "8"],
        ),
    ];
    let mut compared_files = 0;
    for (name, args) in &runs {
        let mut dirs: Vec<PathBuf> = Vec::new();
        let mut codes = Vec::new();
        for workers in ["1", "8"] {
            let dir = base.join(format!("{name}-w{workers}"));
            std::fs::create_dir_all(&dir).unwrap();
            let mut full = args.clone();
            full.push("--workers");
            full.push(workers);
            codes.push(run_cli(&full, &dir));
            dirs.push(dir);
        }
        assert_eq!(codes[0], codes[1], "{name}: exit codes differ");
        let a = dir_bytes(&dirs[0]);
        let b = dir_bytes(&dirs[1]);
        assert_eq!(
            a.keys().collect::<Vec<_>>(),
            b.keys().collect::<Vec<_>>(),
            "{name}: file sets differ"
        );
        for (file, bytes) in &a {
            assert_eq!(bytes, &b[file], "{name}/{file}: bytes differ between worker counts");
            compared_files += 1;
        }
    }
    std::fs::remove_dir_all(&base).ok();
    println!(
        "criterion 09: PASS (4 randomized runs, {compared_files} output files byte-identical at --workers 1 vs 8)"
    );
}

#[test]
fn criterion_10_property_suites() {
    common::comparison_monotonicity_suite(1000);
    common::margin_reproducibility_suite(1000);
    common::grid_refinement_suite(1000);
    common::converse_lower_bound_suite(1000);
    println!("criterion 10: PASS (4 property suites x 1000 cases)");
}
