//! Comparison functions: class-K / class-K-infinity gain functions and
//! class-KL transient envelopes.
//!
//! A class-K function is continuous, strictly increasing, and zero at zero;
//! class-K-infinity additionally grows without bound. A class-KL function
//! beta(s, t) is class-K in s for fixed t and decays to zero as t grows.
//! These are the currency of every certificate and bound in this crate:
//! gains are composed, inverted, and majorized rather than assumed to have
//! closed-form inverses, so all shapes funnel through one bisection routine.
//!
//! Validation is sampled evidence, not proof: `validate` probes a grid and
//! rejects functions that visibly violate the class properties there.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprFn, ParseError};
use crate::integrate::flow_decay;

pub const INVERT_RTOL: f64 = 1e-10;
pub const INVERT_ATOL: f64 = 1e-14;
pub const INVERT_MAX_ITERS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComparisonError {
    #[error("negative argument {s}")]
    NegativeArgument { s: f64 },
    #[error("argument {s} exceeds table domain [0, {domain}]")]
    DomainExceeded { s: f64, domain: f64 },
    #[error("value {y} is not attained by the function on its domain")]
    RangeExceeded { y: f64 },
    #[error("f(0) = {value}, expected 0")]
    NotZeroAtZero { value: f64 },
    #[error("not increasing near s = {at}")]
    NotIncreasing { at: f64 },
    #[error("declared unbounded but plateaus near {plateau}")]
    NotUnbounded { plateau: f64 },
    #[error("does not decay in t: still {value:.3e} after a long horizon")]
    NoDecay { value: f64 },
    #[error("composition domain mismatch: {detail}")]
    DomainMismatch { detail: String },
    #[error("table needs at least two knots")]
    EmptyTable,
    #[error("bad table knots: {detail}")]
    BadKnots { detail: String },
    #[error("expression error: {0}")]
    Parse(#[from] ParseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    ClassK,
    ClassKInfinity,
}

/// Piecewise-linear increasing function through `knots`. The first knot must
/// be exactly (0, 0). Beyond the last knot the last segment's slope is
/// continued linearly when `extrapolate` is set; otherwise evaluation there
/// is a domain error.
#[derive(Debug, Clone)]
pub struct MonotoneTable {
    knots: Vec<(f64, f64)>,
    extrapolate: bool,
}

impl MonotoneTable {
    pub fn new(knots: Vec<(f64, f64)>, extrapolate: bool) -> Result<Self, ComparisonError> {
        if knots.len() < 2 {
            return Err(ComparisonError::EmptyTable);
        }
        if knots[0] != (0.0, 0.0) {
            return Err(ComparisonError::BadKnots {
                detail: format!("first knot must be (0, 0), got {:?}", knots[0]),
            });
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) || !(w[1].1 > w[0].1) {
                return Err(ComparisonError::BadKnots {
                    detail: format!("knots must strictly increase, got {:?} then {:?}", w[0], w[1]),
                });
            }
            if !w[1].0.is_finite() || !w[1].1.is_finite() {
                return Err(ComparisonError::BadKnots {
                    detail: "non-finite knot".to_string(),
                });
            }
        }
        Ok(MonotoneTable { knots, extrapolate })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn domain_end(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    fn eval(&self, s: f64) -> Result<f64, ComparisonError> {
        let last = self.knots.len() - 1;
        if s >= self.knots[last].0 {
            if s == self.knots[last].0 {
                return Ok(self.knots[last].1);
            }
            if !self.extrapolate {
                return Err(ComparisonError::DomainExceeded {
                    s,
                    domain: self.knots[last].0,
                });
            }
            let (s1, v1) = self.knots[last - 1];
            let (s2, v2) = self.knots[last];
            return Ok(v2 + (s - s2) * (v2 - v1) / (s2 - s1));
        }
        // Rightmost knot with s_i <= s.
        let idx = match self
            .knots
            .binary_search_by(|k| k.0.partial_cmp(&s).unwrap())
        {
            Ok(i) => return Ok(self.knots[i].1),
            Err(i) => i - 1,
        };
        let (s1, v1) = self.knots[idx];
        let (s2, v2) = self.knots[idx + 1];
        Ok(v1 + (s - s1) * (v2 - v1) / (s2 - s1))
    }
}

/// The smallest nondecreasing majorant of `samples` (ascending in s),
/// strictified with a minimum slope and anchored at (0, 0). Used to upgrade
/// raw sup-tables into class-K-infinity gains: the running maximum dominates
/// every sample, and the slope floor makes the result strictly increasing
/// and unbounded.
pub fn isotonic_upper_envelope(
    samples: &[(f64, f64)],
    slope_floor: f64,
) -> Result<MonotoneTable, ComparisonError> {
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(samples.len() + 1);
    knots.push((0.0, 0.0));
    let mut running = 0.0_f64;
    for &(s, v) in samples {
        if s <= knots[knots.len() - 1].0 {
            if s < 0.0 {
                return Err(ComparisonError::BadKnots {
                    detail: format!("sample abscissa {s} out of order"),
                });
            }
            // Duplicate or zero abscissa: fold into the running maximum.
            running = running.max(v);
            continue;
        }
        running = running.max(v);
        let prev = knots[knots.len() - 1];
        let value = running.max(prev.1 + slope_floor * (s - prev.0));
        knots.push((s, value));
    }
    MonotoneTable::new(knots, true)
}

#[derive(Clone)]
enum Repr {
    Expr(Arc<ExprFn>),
    Table(Arc<MonotoneTable>),
    Native(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Compose(Box<ComparisonFn>, Box<ComparisonFn>),
}

/// A candidate class-K (or class-K-infinity) gain.
#[derive(Clone)]
pub struct ComparisonFn {
    kind: Kind,
    repr: Repr,
    /// Largest argument the function has been validated/intended for.
    domain_hint: f64,
    label: String,
}

impl fmt::Debug for ComparisonFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComparisonFn")
            .field("label", &self.label)
            .field("kind", &self.kind)
            .field("domain_hint", &self.domain_hint)
            .finish()
    }
}

impl ComparisonFn {
    /// Parse an expression in the single variable `s`.
    pub fn from_expr(src: &str, kind: Kind) -> Result<Self, ComparisonError> {
        let f = ExprFn::parse(src, &["s"])?;
        Ok(ComparisonFn {
            kind,
            repr: Repr::Expr(Arc::new(f)),
            domain_hint: f64::INFINITY,
            label: src.trim().to_string(),
        })
    }

    pub fn from_table(table: MonotoneTable, kind: Kind) -> Self {
        let domain_hint = if table.extrapolate {
            f64::INFINITY
        } else {
            table.domain_end()
        };
        ComparisonFn {
            kind,
            repr: Repr::Table(Arc::new(table)),
            domain_hint,
            label: "table".to_string(),
        }
    }

    pub fn native(
        label: &str,
        kind: Kind,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ComparisonFn {
            kind,
            repr: Repr::Native(Arc::new(f)),
            domain_hint: f64::INFINITY,
            label: label.to_string(),
        }
    }

    pub fn with_domain_hint(mut self, domain_hint: f64) -> Self {
        self.domain_hint = domain_hint;
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn domain_hint(&self) -> f64 {
        self.domain_hint
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Evaluate at `s >= 0`.
    pub fn eval_k(&self, s: f64) -> Result<f64, ComparisonError> {
        if s < 0.0 || s.is_nan() {
            return Err(ComparisonError::NegativeArgument { s });
        }
        self.eval_inner(s)
    }

    fn eval_inner(&self, s: f64) -> Result<f64, ComparisonError> {
        match &self.repr {
            Repr::Expr(f) => Ok(f.eval(&[s])),
            Repr::Table(t) => t.eval(s),
            Repr::Native(f) => Ok(f(s)),
            Repr::Compose(outer, inner) => {
                let v = inner.eval_inner(s)?;
                outer.eval_inner(v)
            }
        }
    }

    /// Infallible evaluation for hot loops whose inputs were pre-validated
    /// against the domain hint.
    pub fn eval(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0, "comparison function argument {s} < 0");
        self.eval_inner(s)
            .expect("comparison function evaluated outside its validated domain")
    }

    /// Solve f(x) = y for x by bisection. Returns the upper endpoint of the
    /// terminal bracket, so results never undershoot the true preimage:
    /// downstream envelope bounds stay conservative.
    pub fn invert_k(&self, y: f64) -> Result<f64, ComparisonError> {
        if y < 0.0 || y.is_nan() {
            return Err(ComparisonError::NegativeArgument { s: y });
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        if y.is_infinite() {
            return Err(ComparisonError::RangeExceeded { y });
        }
        let mut lo = 0.0_f64;
        let mut hi = if self.domain_hint.is_finite() && self.domain_hint > 0.0 {
            self.domain_hint
        } else {
            1.0
        };
        let mut grow = 0;
        loop {
            match self.eval_inner(hi) {
                Ok(v) if v >= y => break,
                Ok(_) => {
                    lo = hi;
                    hi *= 2.0;
                    grow += 1;
                    if grow > 600 || !hi.is_finite() {
                        return Err(ComparisonError::RangeExceeded { y });
                    }
                }
                // A bounded-domain table never attains y.
                Err(ComparisonError::DomainExceeded { .. }) => {
                    return Err(ComparisonError::RangeExceeded { y })
                }
                Err(e) => return Err(e),
            }
        }
        for _ in 0..INVERT_MAX_ITERS {
            if hi - lo <= INVERT_RTOL * hi.abs() + INVERT_ATOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let v = self.eval_inner(mid)?;
            if v >= y {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Composition self(other(s)).
    pub fn compose_k(&self, inner: &ComparisonFn) -> Result<ComparisonFn, ComparisonError> {
        // Probe that the inner range stays inside the outer domain.
        let probe_end = if inner.domain_hint.is_finite() {
            inner.domain_hint
        } else {
            1.0
        };
        for i in 0..=16 {
            let s = probe_end * i as f64 / 16.0;
            let v = inner.eval_k(s).map_err(|e| ComparisonError::DomainMismatch {
                detail: format!("inner {} failed at {s}: {e}", inner.label),
            })?;
            self.eval_k(v).map_err(|e| ComparisonError::DomainMismatch {
                detail: format!("outer {} rejects {}({s}) = {v}: {e}", self.label, inner.label),
            })?;
        }
        let kind = if self.kind == Kind::ClassKInfinity && inner.kind == Kind::ClassKInfinity {
            Kind::ClassKInfinity
        } else {
            Kind::ClassK
        };
        let label = format!("{}({})", self.label, inner.label);
        Ok(ComparisonFn {
            kind,
            repr: Repr::Compose(Box::new(self.clone()), Box::new(inner.clone())),
            domain_hint: inner.domain_hint,
            label,
        })
    }

    /// Sampled check of the declared class properties: zero at zero, strictly
    /// increasing, and (for class-K-infinity) unbounded growth.
    pub fn validate(&self) -> Result<(), ComparisonError> {
        let v0 = self.eval_k(0.0)?;
        if v0 != 0.0 {
            return Err(ComparisonError::NotZeroAtZero { value: v0 });
        }
        let span = if self.domain_hint.is_finite() && self.domain_hint > 0.0 {
            self.domain_hint
        } else {
            1.0e3
        };
        // Coarse grid: strict increase required.
        let coarse = 48;
        let mut prev = 0.0;
        for i in 1..=coarse {
            let s = span * i as f64 / coarse as f64;
            let v = self.eval_k(s)?;
            if !v.is_finite() {
                return Err(ComparisonError::NotIncreasing { at: s });
            }
            if v <= prev {
                return Err(ComparisonError::NotIncreasing { at: s });
            }
            prev = v;
        }
        // Geometric tail toward zero: nondecreasing is enough; rounding can
        // flatten genuinely increasing functions at this scale.
        let mut s = span;
        let mut above = self.eval_k(s)?;
        for _ in 0..40 {
            s *= 0.25;
            let v = self.eval_k(s)?;
            if v > above {
                return Err(ComparisonError::NotIncreasing { at: s });
            }
            above = v;
        }
        if self.kind == Kind::ClassKInfinity {
            let mut s = span.max(1.0);
            let mut v = match self.eval_k(s) {
                Ok(v) => v,
                Err(ComparisonError::DomainExceeded { .. }) => {
                    return Err(ComparisonError::NotUnbounded { plateau: s })
                }
                Err(e) => return Err(e),
            };
            let mut flat = 0;
            for _ in 0..80 {
                if v >= 1e12 {
                    break;
                }
                s *= 2.0;
                let next = match self.eval_k(s) {
                    Ok(v) => v,
                    Err(ComparisonError::DomainExceeded { .. }) => {
                        return Err(ComparisonError::NotUnbounded { plateau: v })
                    }
                    Err(e) => return Err(e),
                };
                if next <= v * (1.0 + 1e-9) {
                    flat += 1;
                    if flat >= 3 {
                        return Err(ComparisonError::NotUnbounded { plateau: next });
                    }
                } else {
                    flat = 0;
                }
                v = next;
            }
        }
        Ok(())
    }
}

/// A candidate class-KL transient envelope.
#[derive(Clone)]
pub struct KLFn {
    repr: KLRepr,
    label: String,
}

#[derive(Clone)]
enum KLRepr {
    /// Expression in `s` and `t`.
    Expr(Arc<ExprFn>),
    /// beta(s, t) = y(t) where dy/dt = -alpha(y), y(0) = s.
    Flow { alpha: ComparisonFn, tol: f64 },
    /// beta(s, t) = alpha1^{-1}( y(t) ), dy/dt = -alpha(y), y(0) = alpha2(s).
    Chained {
        alpha1: ComparisonFn,
        alpha2: ComparisonFn,
        alpha: ComparisonFn,
        tol: f64,
    },
}

impl fmt::Debug for KLFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KLFn").field("label", &self.label).finish()
    }
}

impl KLFn {
    /// Parse an expression in the variables `s` and `t`.
    pub fn from_expr(src: &str) -> Result<Self, ComparisonError> {
        let f = ExprFn::parse(src, &["s", "t"])?;
        Ok(KLFn {
            repr: KLRepr::Expr(Arc::new(f)),
            label: src.trim().to_string(),
        })
    }

    pub fn from_flow(alpha: ComparisonFn) -> Self {
        let label = format!("flow[-{}]", alpha.label());
        KLFn {
            repr: KLRepr::Flow { alpha, tol: 1e-10 },
            label,
        }
    }

    pub fn chained(alpha1: ComparisonFn, alpha2: ComparisonFn, alpha: ComparisonFn) -> Self {
        let label = format!(
            "{}^-1(flow[-{}]({}(s), t))",
            alpha1.label(),
            alpha.label(),
            alpha2.label()
        );
        KLFn {
            repr: KLRepr::Chained {
                alpha1,
                alpha2,
                alpha,
                tol: 1e-10,
            },
            label,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        self.eval_along(s, &[t])[0]
    }

    /// Evaluate t -> beta(s, t) along ascending times in one integration
    /// pass. For flow-backed envelopes this is the only affordable way to
    /// score long trajectories.
    pub fn eval_along(&self, s: f64, ts: &[f64]) -> Vec<f64> {
        debug_assert!(s >= 0.0);
        debug_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        match &self.repr {
            KLRepr::Expr(f) => ts.iter().map(|&t| f.eval(&[s, t])).collect(),
            KLRepr::Flow { alpha, tol } => {
                let a = |y: f64| alpha.eval(y);
                flow_decay(&a, s, ts, *tol)
            }
            KLRepr::Chained {
                alpha1,
                alpha2,
                alpha,
                tol,
            } => {
                let y0 = alpha2.eval(s);
                let a = |y: f64| alpha.eval(y);
                let ys = flow_decay(&a, y0, ts, *tol);
                ys.iter()
                    .map(|&y| alpha1.invert_k(y).unwrap_or(f64::INFINITY))
                    .collect()
            }
        }
    }

    /// Sampled check that this is class-KL: class-K in s for fixed t,
    /// decaying toward zero in t for fixed s.
    pub fn validate(&self, s_span: f64) -> Result<(), ComparisonError> {
        let span = if s_span.is_finite() && s_span > 0.0 {
            s_span
        } else {
            10.0
        };
        for &t in &[0.0, 0.5, 3.0] {
            let v0 = self.eval(0.0, t);
            if v0 != 0.0 {
                return Err(ComparisonError::NotZeroAtZero { value: v0 });
            }
            let mut prev = 0.0;
            for i in 1..=16 {
                let s = span * i as f64 / 16.0;
                let v = self.eval(s, t);
                if v < prev {
                    return Err(ComparisonError::NotIncreasing { at: s });
                }
                prev = v;
            }
        }
        // Decay in t: nonincreasing along a doubling horizon, and clearly
        // below the initial value by the end of it.
        let s = span;
        let ts: Vec<f64> = (0..24).map(|i| (1 << i) as f64 * 1e-2).collect();
        let vals = self.eval_along(s, &ts);
        let start = self.eval(s, 0.0);
        for w in vals.windows(2) {
            if w[1] > w[0] * (1.0 + 1e-9) + 1e-12 {
                return Err(ComparisonError::NoDecay { value: w[1] });
            }
        }
        let end = vals[vals.len() - 1];
        if !(end < start * 0.5 + 1e-12) {
            return Err(ComparisonError::NoDecay { value: end });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq() -> ComparisonFn {
        ComparisonFn::from_expr("pow(s, 2)", Kind::ClassKInfinity).unwrap()
    }

    #[test]
    fn eval_square() {
        assert_eq!(sq().eval_k(3.0).unwrap(), 9.0);
        assert_eq!(sq().eval_k(0.0).unwrap(), 0.0);
        assert!(matches!(
            sq().eval_k(-1.0),
            Err(ComparisonError::NegativeArgument { .. })
        ));
    }

    #[test]
    fn invert_square() {
        let x = sq().invert_k(9.0).unwrap();
        assert!((x - 3.0).abs() <= 3.0 * INVERT_RTOL + INVERT_ATOL, "{x}");
        assert_eq!(sq().invert_k(0.0).unwrap(), 0.0);
        // Upper-endpoint convention: never undershoots the true preimage.
        assert!(x >= 3.0 - 1e-12);
    }

    #[test]
    fn invert_is_monotone_and_round_trips() {
        let f = sq();
        let mut prev = 0.0;
        for i in 1..60 {
            let y = i as f64 * 0.37;
            let x = f.invert_k(y).unwrap();
            assert!(x >= prev);
            prev = x;
            let back = f.eval_k(x).unwrap();
            assert!((back - y).abs() <= 1e-8 * y.max(1.0));
        }
    }

    #[test]
    fn invert_rejects_unreachable_values() {
        let bounded = ComparisonFn::from_expr("min(s, 1)", Kind::ClassK).unwrap();
        assert!(matches!(
            bounded.invert_k(2.0),
            Err(ComparisonError::RangeExceeded { .. })
        ));
    }

    #[test]
    fn compose_powers() {
        let cube = ComparisonFn::from_expr("pow(s, 3)", Kind::ClassKInfinity).unwrap();
        let f = sq().compose_k(&cube).unwrap();
        assert_eq!(f.kind(), Kind::ClassKInfinity);
        let v = f.eval_k(2.0).unwrap();
        assert_eq!(v, 64.0);
    }

    #[test]
    fn table_interpolates_and_extrapolates() {
        let t = MonotoneTable::new(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)], true).unwrap();
        let f = ComparisonFn::from_table(t, Kind::ClassKInfinity);
        assert_eq!(f.eval_k(1.5).unwrap(), 2.5);
        assert_eq!(f.eval_k(2.0).unwrap(), 3.0);
        // Slope 1 continuation past the last knot.
        assert_eq!(f.eval_k(3.0).unwrap(), 4.0);

        let t2 = MonotoneTable::new(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)], false).unwrap();
        let g = ComparisonFn::from_table(t2, Kind::ClassK);
        assert!(matches!(
            g.eval_k(2.5),
            Err(ComparisonError::DomainExceeded { .. })
        ));
    }

    #[test]
    fn table_rejects_bad_knots() {
        assert!(MonotoneTable::new(vec![(0.0, 0.0)], true).is_err());
        assert!(MonotoneTable::new(vec![(0.1, 0.1), (1.0, 1.0)], true).is_err());
        assert!(MonotoneTable::new(vec![(0.0, 0.0), (1.0, 1.0), (1.0, 2.0)], true).is_err());
        assert!(MonotoneTable::new(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 0.5)], true).is_err());
    }

    #[test]
    fn upper_envelope_dominates_and_strictifies() {
        let samples = [(0.5, 1.0), (1.0, 0.5), (1.5, 0.9), (2.0, 2.0)];
        let t = isotonic_upper_envelope(&samples, 1e-9).unwrap();
        let f = ComparisonFn::from_table(t, Kind::ClassKInfinity);
        for &(s, v) in &samples {
            assert!(f.eval_k(s).unwrap() >= v);
        }
        assert_eq!(f.eval_k(0.0).unwrap(), 0.0);
        assert!(f.validate().is_ok());
    }

    #[test]
    fn validate_catches_violations() {
        let not_zero = ComparisonFn::from_expr("s + 1", Kind::ClassK).unwrap();
        assert!(matches!(
            not_zero.validate(),
            Err(ComparisonError::NotZeroAtZero { .. })
        ));
        let decreasing = ComparisonFn::from_expr("0 - s", Kind::ClassK).unwrap();
        assert!(matches!(
            decreasing.validate(),
            Err(ComparisonError::NegativeArgument { .. }) | Err(ComparisonError::NotIncreasing { .. })
        ));
        // Bounded but strictly increasing: fine as class-K, not K-infinity.
        let saturating = ComparisonFn::from_expr("s / (s + 1)", Kind::ClassKInfinity).unwrap();
        assert!(matches!(
            saturating.validate(),
            Err(ComparisonError::NotUnbounded { .. })
        ));
        let saturating_k = ComparisonFn::from_expr("s / (s + 1)", Kind::ClassK).unwrap();
        assert!(saturating_k.validate().is_ok());
        // A plateau violates strict monotonicity outright.
        let plateau = ComparisonFn::from_expr("min(s, 1)", Kind::ClassK).unwrap();
        assert!(matches!(
            plateau.validate(),
            Err(ComparisonError::NotIncreasing { .. })
        ));
        assert!(sq().validate().is_ok());
    }

    #[test]
    fn kl_expr_and_flow() {
        let b = KLFn::from_expr("2 * s * exp(0 - t)").unwrap();
        assert!((b.eval(1.0, 0.0) - 2.0).abs() < 1e-15);
        assert!((b.eval(1.0, 1.0) - 2.0 * (-1.0_f64).exp()).abs() < 1e-12);
        assert!(b.validate(10.0).is_ok());

        // Flow of dy/dt = -y is exactly exponential decay.
        let alpha = ComparisonFn::from_expr("s", Kind::ClassKInfinity).unwrap();
        let f = KLFn::from_flow(alpha);
        let v = f.eval(1.0, 0.5);
        assert!((v - (-0.5_f64).exp()).abs() < 1e-8, "{v}");
    }

    #[test]
    fn kl_chained_identity_wrappers_reduce_to_flow() {
        // alpha1 = alpha2 = s^2, alpha = identity: beta(s, t) =
        // sqrt(s^2 exp(-t)) = s exp(-t/2).
        let a1 = sq();
        let a2 = sq();
        let alpha = ComparisonFn::from_expr("s", Kind::ClassKInfinity).unwrap();
        let b = KLFn::chained(a1, a2, alpha);
        let v = b.eval(1.0, 1.0);
        assert!((v - (-0.5_f64).exp()).abs() < 1e-7, "{v}");
        // At t = 0 the chain is alpha1^{-1}(alpha2(s)) = s, never below.
        assert!(b.eval(1.0, 0.0) >= 1.0 - 1e-12);
        let along = b.eval_along(1.0, &[0.0, 0.5, 1.0, 4.0]);
        for w in along.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn kl_validate_rejects_growth_in_t() {
        let growing = KLFn::from_expr("s * t").unwrap();
        assert!(growing.validate(10.0).is_err());
    }
}
