//! The scalar benchmark loop used throughout: forward-Euler discretization
//! of dx/dt = x^3 + u under the feedback u = -xhat - 3 xhat^3 applied to the
//! error-corrupted measurement xhat = x + e. Expanding the composition gives
//! the closed-loop polynomial step
//!
//!   F(x, e, T) = x - T [2x^3 + 9 e x^2 + (9 e^2 + 1) x + 3 e^3 + e]
//!
//! together with a fully explicit decrease certificate for V(x) = x^2:
//! alpha1 = alpha2 = s^2, alpha3 = 3 s^4 + s^2, rho(s) = s / K. The
//! polynomial coefficient bounds a..d below dominate the cross terms on the
//! region |e| <= K |x|, and yield the admissible period bound
//! Ttilde(M, K) = min{ 1 / (2 b), 1 / (2 (a M^4 + c)) }.

use rayon::prelude::*;

use crate::certifier::{
    decrease_margin, CertError, LyapunovCandidate, StateFn, SweepAcc, GRID_EVIDENCE_CAVEAT,
};
use crate::comparison::{ComparisonFn, Kind};
use crate::grid::{linspace, open_t_grid};
use crate::models::ClosedLoopModel;
use crate::report::{CertificationReport, GridStats, Verdict};

/// The bracketed polynomial whose sign structure drives everything:
/// F(x,e,T) = x - T * bracket(x,e).
fn bracket(x: f64, e: f64) -> f64 {
    2.0 * x * x * x + 9.0 * e * x * x + (9.0 * e * e + 1.0) * x + 3.0 * e * e * e + e
}

/// One closed-loop step of the benchmark model.
pub fn example_model(x: f64, e: f64, t: f64) -> f64 {
    x - t * bracket(x, e)
}

/// The benchmark loop as a registry model (n = q = 1).
pub fn model() -> ClosedLoopModel {
    ClosedLoopModel::analytic_native("paper_example", 1, 1, |x, e, t, out| {
        out[0] = example_model(x[0], e[0], t);
    })
}

/// Polynomial coefficients (a, b, c, d) of the decrease-chain bounds at
/// gain-margin parameter K:
///   g(x,e) <= a x^6 + b x^4 + c x^2   whenever |e| <= K |x|,
///   h(x,e) <= -4x^4 - 2x^2 + d x^4 + 2K x^2.
pub fn example_coeffs(k: f64) -> (f64, f64, f64, f64) {
    let k2 = k * k;
    let a = ((((9.0 * k2 + 135.0) * k + 174.0) * k + 117.0) * k + 90.0) * k + 4.0;
    let b = (((6.0 * k + 24.0) * k + 36.0) * k + 22.0) * k + 4.0;
    let c = k2 + 2.0 * k + 1.0;
    let d = (6.0 * k2 + 18.0) * k;
    (a, b, c, d)
}

/// Admissible sampling-period bound making the decrease chain close on
/// {|e| <= K|x|, |x| <= M}.
pub fn example_ttilde(m: f64, k: f64) -> f64 {
    let (a, b, c, _) = example_coeffs(k);
    let m2 = m * m;
    (1.0 / (2.0 * b)).min(1.0 / (2.0 * (a * m2 * m2 + c)))
}

/// The decomposition V(F(x,e,T)) - V(x) = (h + g T) T for V(x) = x^2.
pub fn example_hg(x: f64, e: f64) -> (f64, f64) {
    let br = bracket(x, e);
    (-2.0 * x * br, br * br)
}

fn alpha3_value(s: f64) -> f64 {
    let s2 = s * s;
    3.0 * s2 * s2 + s2
}

/// The explicit decrease certificate of the benchmark loop at a given state
/// bound M and gain-margin parameter K.
#[derive(Debug, Clone)]
pub struct ExampleCertificate {
    pub k: f64,
    pub m: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub ttilde: f64,
}

impl ExampleCertificate {
    pub fn new(m: f64, k: f64) -> Result<Self, CertError> {
        if !(k.is_finite() && k > 0.0) {
            return Err(CertError::Spec(format!("K must be positive, got {k}")));
        }
        if !(m.is_finite() && m >= 0.0) {
            return Err(CertError::Spec(format!("M must be nonnegative, got {m}")));
        }
        let (a, b, c, d) = example_coeffs(k);
        Ok(ExampleCertificate {
            k,
            m,
            a,
            b,
            c,
            d,
            ttilde: example_ttilde(m, k),
        })
    }

    pub fn alpha1(&self) -> ComparisonFn {
        ComparisonFn::native("s^2", Kind::ClassKInfinity, |s| s * s)
    }

    pub fn alpha2(&self) -> ComparisonFn {
        self.alpha1()
    }

    pub fn alpha3(&self) -> ComparisonFn {
        ComparisonFn::native("3 s^4 + s^2", Kind::ClassKInfinity, alpha3_value)
    }

    pub fn rho(&self) -> ComparisonFn {
        let k = self.k;
        ComparisonFn::native("s / K", Kind::ClassKInfinity, move |s| s / k)
    }

    /// Error-ball radius induced by the region |e| <= K |x| <= K M.
    pub fn e_bound(&self) -> f64 {
        self.k * self.m
    }

    pub fn candidate(&self) -> LyapunovCandidate {
        LyapunovCandidate {
            v: StateFn::native("x^2", |x| x[0] * x[0]),
            alpha1: self.alpha1(),
            alpha2: self.alpha2(),
            alpha3: self.alpha3(),
            rho: Some(self.rho()),
            m: self.m,
            e_or_d: self.e_bound(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExampleGrid {
    pub x_points: usize,
    pub e_points: usize,
    pub t_points: usize,
}

impl Default for ExampleGrid {
    fn default() -> Self {
        ExampleGrid {
            x_points: 2001,
            e_points: 101,
            t_points: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExampleVerification {
    pub certificate: ExampleCertificate,
    pub report: CertificationReport,
    /// Minimum over the grid of -(h + g T + alpha3(|x|)); nonnegative means
    /// the polynomial chain closed at every sampled point.
    pub chain_min_margin: f64,
    /// Largest gap between the step-map margin and T times the chain margin,
    /// two routes to the same quantity.
    pub cross_check_max_diff: f64,
}

/// Sweeps the decrease inequality over {|e| <= K|x|, |x| <= M,
/// T in (0, Ttilde(M,K))}, scoring each point both through the step map and
/// through the h/g decomposition. Margins use the exact evaluation order of
/// the general certifier so shared points agree bitwise.
pub fn verify_example(m: f64, k: f64, grid: &ExampleGrid) -> Result<ExampleVerification, CertError> {
    let cert = ExampleCertificate::new(m, k)?;
    let xs = linspace(-m, m, grid.x_points);
    let ts = open_t_grid(cert.ttilde, grid.t_points);
    let chain = xs
        .par_iter()
        .map(|&x| {
            let ax = x.abs();
            let vx = x * x;
            let a3x = alpha3_value(ax);
            let es = linspace(-k * ax, k * ax, grid.e_points);
            let mut acc = SweepAcc::new();
            let mut chain_min = f64::INFINITY;
            let mut max_diff = 0.0_f64;
            for &e in &es {
                let (h, g) = example_hg(x, e);
                for &t in &ts {
                    let xnext = example_model(x, e, t);
                    let margin = decrease_margin(xnext * xnext, vx, t, a3x);
                    acc.offer(margin, &[x], &[e], t);
                    let chain_margin = -(h + g * t + a3x);
                    chain_min = chain_min.min(chain_margin);
                    max_diff = max_diff.max((margin - t * chain_margin).abs());
                }
            }
            (acc, chain_min, max_diff)
        })
        .reduce(
            || (SweepAcc::new(), f64::INFINITY, 0.0),
            |(a, ca, da), (b, cb, db)| (a.merge(b), ca.min(cb), da.max(db)),
        );
    let (acc, chain_min_margin, cross_check_max_diff) = chain;

    let mut caveats = vec![GRID_EVIDENCE_CAVEAT.to_string()];
    caveats.push(format!(
        "chain margin minimum {chain_min_margin:.6e}; step-vs-chain max gap {cross_check_max_diff:.3e}"
    ));
    if acc.margin < 0.0 && chain_min_margin >= 0.0 || acc.margin >= 0.0 && chain_min_margin < 0.0 {
        caveats.push("step-map and chain margins disagree in sign near zero".to_string());
    }
    let verdict = if acc.checked == 0 {
        Verdict::Inconclusive
    } else if acc.margin >= 0.0 {
        Verdict::CertifiedOnGrid
    } else {
        Verdict::ViolatedAt
    };
    let report = CertificationReport {
        verdict,
        min_margin: acc.margin,
        witness: acc.witness,
        grid: GridStats {
            x_points: xs.len(),
            e_points: grid.e_points,
            t_points: ts.len(),
            points_checked: acc.checked,
            inconclusive_points: acc.inconclusive,
            x_radius: m,
            e_radius: cert.e_bound(),
        },
        t_used: cert.ttilde,
        t_max_certified: None,
        caveats,
    };
    Ok(ExampleVerification {
        certificate: cert,
        report,
        chain_min_margin,
        cross_check_max_diff,
    })
}
