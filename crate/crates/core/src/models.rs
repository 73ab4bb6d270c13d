//! Plants, controllers, discretization step maps, and closed-loop models.
//!
//! The continuous-time plant dx/dt = f(x, u) is driven by a zero-order-hold
//! input computed once per sampling instant from the measured state x + e.
//! One discrete step of length T is x+ = F(x, u, T) under a chosen
//! discretization (exact forward Euler, classical RK4, or tight adaptive
//! integration standing in for the exact model, which is rarely available in
//! closed form). Composing with a controller gives the closed-loop map
//! x+ = F(x, U(x, e, T), T), the object every certification and search
//! routine in this crate interrogates.
//!
//! All evaluation is pure and reentrant; per-call scratch buffers are held by
//! the caller in a [`ModelScratch`].

use std::sync::Arc;

use thiserror::Error;

use crate::expr::ExprFn;
use crate::integrate::{integrate_to, IntegrateError, IntegratorOpts};

/// Norm threshold beyond which a state counts as escaped.
pub const ESCAPE_NORM: f64 = 1e9;

/// Grid suprema are optimistic; estimates are inflated by this by default.
pub const DEFAULT_SAFETY: f64 = 1.1;

/// Floor for grid-estimated field bounds, so horizons stay finite numbers.
pub const FIELD_BOUND_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model specification error: {0}")]
    Spec(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("finite escape at t = {t:.6e} (norm {norm:.3e})")]
    FiniteEscape { t: f64, norm: f64 },
    #[error("empty domain")]
    EmptyDomain,
    #[error("unknown model {name:?}")]
    UnknownModel { name: String },
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Variable source for one slot of a compiled component expression.
#[derive(Debug, Clone, Copy)]
enum Slot {
    X(usize),
    U(usize),
    E(usize),
    Period,
}

#[derive(Debug, Clone)]
struct Component {
    expr: ExprFn,
    slots: Vec<Slot>,
}

impl Component {
    fn eval(&self, x: &[f64], u: &[f64], e: &[f64], t: f64, env: &mut Vec<f64>) -> f64 {
        env.clear();
        for s in &self.slots {
            env.push(match *s {
                Slot::X(i) => x[i],
                Slot::U(i) => u[i],
                Slot::E(i) => e[i],
                Slot::Period => t,
            });
        }
        self.expr.eval(env)
    }
}

/// Indexed variable: "x3" -> (`x`, 2). Indices are 1-based in source text.
fn parse_indexed(name: &str, prefix: char) -> Option<usize> {
    let mut chars = name.chars();
    if chars.next() != Some(prefix) {
        return None;
    }
    let rest = chars.as_str();
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let idx: usize = rest.parse().ok()?;
    if idx == 0 {
        None
    } else {
        Some(idx - 1)
    }
}

/// Compile semicolon-separated component expressions, admitting variables
/// according to `allow` ('x' always, plus any of "uet"), and report the
/// highest index used per variable family.
struct Compiled {
    comps: Vec<Component>,
    max_x: usize,
    max_u: usize,
    max_e: usize,
}

fn compile_components(src: &str, allow: &str) -> Result<Compiled, ModelError> {
    let mut comps = Vec::new();
    let (mut max_x, mut max_u, mut max_e) = (0usize, 0usize, 0usize);
    for part in src.split(';') {
        let part = part.trim();
        if part.is_empty() {
            return Err(ModelError::Spec(format!("empty component in {src:?}")));
        }
        let expr = ExprFn::parse_dynamic(part, |name| {
            parse_indexed(name, 'x').is_some()
                || (allow.contains('u') && parse_indexed(name, 'u').is_some())
                || (allow.contains('e') && parse_indexed(name, 'e').is_some())
                || (allow.contains('t') && name == "T")
        })
        .map_err(|e| ModelError::Spec(format!("{part:?}: {e}")))?;
        let mut slots = Vec::with_capacity(expr.vars().len());
        for v in expr.vars() {
            let slot = if let Some(i) = parse_indexed(v, 'x') {
                max_x = max_x.max(i + 1);
                Slot::X(i)
            } else if allow.contains('u') && parse_indexed(v, 'u').is_some() {
                let i = parse_indexed(v, 'u').unwrap();
                max_u = max_u.max(i + 1);
                Slot::U(i)
            } else if allow.contains('e') && parse_indexed(v, 'e').is_some() {
                let i = parse_indexed(v, 'e').unwrap();
                max_e = max_e.max(i + 1);
                Slot::E(i)
            } else {
                Slot::Period
            };
            slots.push(slot);
        }
        comps.push(Component { expr, slots });
    }
    Ok(Compiled {
        comps,
        max_x,
        max_u,
        max_e,
    })
}

type NativeField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Continuous-time plant dx/dt = f(x, u).
#[derive(Clone)]
pub struct VectorField {
    pub n: usize,
    pub m: usize,
    imp: FieldImpl,
    label: String,
}

#[derive(Clone)]
enum FieldImpl {
    Exprs(Arc<Vec<Component>>),
    Native(NativeField),
}

impl VectorField {
    pub fn from_exprs(src: &str) -> Result<Self, ModelError> {
        let c = compile_components(src, "u")?;
        let n = c.comps.len();
        if c.max_x > n {
            return Err(ModelError::DimensionMismatch(format!(
                "field has {n} component(s) but references x{}",
                c.max_x
            )));
        }
        Ok(VectorField {
            n,
            m: c.max_u,
            imp: FieldImpl::Exprs(Arc::new(c.comps)),
            label: src.trim().to_string(),
        })
    }

    pub fn native(
        label: &str,
        n: usize,
        m: usize,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        VectorField {
            n,
            m,
            imp: FieldImpl::Native(Arc::new(f)),
            label: label.to_string(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64], env: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(u.len(), self.m);
        debug_assert_eq!(out.len(), self.n);
        match &self.imp {
            FieldImpl::Exprs(comps) => {
                for (i, c) in comps.iter().enumerate() {
                    out[i] = c.eval(x, u, &[], 0.0, env);
                }
            }
            FieldImpl::Native(f) => f(x, u, out),
        }
    }
}

type NativeController = Arc<dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync>;

/// Sampled-data feedback law u = U(x + e context, T); receives the true
/// state and the measurement error separately so structured laws can be
/// expressed directly.
#[derive(Clone)]
pub struct Controller {
    pub q: usize,
    pub m: usize,
    imp: CtrlImpl,
    label: String,
}

#[derive(Clone)]
enum CtrlImpl {
    Exprs(Arc<Vec<Component>>),
    Native(NativeController),
}

impl Controller {
    pub fn from_exprs(src: &str) -> Result<Self, ModelError> {
        let c = compile_components(src, "et")?;
        Ok(Controller {
            q: c.max_e,
            m: c.comps.len(),
            imp: CtrlImpl::Exprs(Arc::new(c.comps)),
            label: src.trim().to_string(),
        })
    }

    pub fn native(
        label: &str,
        q: usize,
        m: usize,
        f: impl Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Controller {
            q,
            m,
            imp: CtrlImpl::Native(Arc::new(f)),
            label: label.to_string(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval_into(&self, x: &[f64], e: &[f64], t: f64, out: &mut [f64], env: &mut Vec<f64>) {
        debug_assert_eq!(out.len(), self.m);
        match &self.imp {
            CtrlImpl::Exprs(comps) => {
                for (i, c) in comps.iter().enumerate() {
                    out[i] = c.eval(x, &[], e, t, env);
                }
            }
            CtrlImpl::Native(f) => f(x, e, t, out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMethod {
    Euler,
    Rk4,
    /// Adaptive integration with the given local tolerance; surrogate for
    /// the exact discrete-time model.
    Tight { tol: f64 },
}

/// One zero-order-hold step x+ = F(x, u, T).
#[derive(Clone)]
pub struct DiscreteStepMap {
    pub method: StepMethod,
    pub field: VectorField,
}

impl DiscreteStepMap {
    pub fn new(method: StepMethod, field: VectorField) -> Self {
        DiscreteStepMap { method, field }
    }

    pub fn eval_into(
        &self,
        x: &[f64],
        u: &[f64],
        t: f64,
        out: &mut [f64],
        scratch: &mut ModelScratch,
    ) -> Result<(), ModelError> {
        let n = self.field.n;
        debug_assert!(t >= 0.0);
        scratch.ensure_state(n);
        match self.method {
            StepMethod::Euler => {
                self.field.eval_into(x, u, &mut scratch.k1[..n], &mut scratch.env);
                for i in 0..n {
                    out[i] = x[i] + t * scratch.k1[i];
                }
            }
            StepMethod::Rk4 => {
                let half = 0.5 * t;
                self.field.eval_into(x, u, &mut scratch.k1[..n], &mut scratch.env);
                for i in 0..n {
                    scratch.stage[i] = x[i] + half * scratch.k1[i];
                }
                self.field
                    .eval_into(&scratch.stage[..n], u, &mut scratch.k2[..n], &mut scratch.env);
                for i in 0..n {
                    scratch.stage[i] = x[i] + half * scratch.k2[i];
                }
                self.field
                    .eval_into(&scratch.stage[..n], u, &mut scratch.k3[..n], &mut scratch.env);
                for i in 0..n {
                    scratch.stage[i] = x[i] + t * scratch.k3[i];
                }
                self.field
                    .eval_into(&scratch.stage[..n], u, &mut scratch.k4[..n], &mut scratch.env);
                let w = t / 6.0;
                for i in 0..n {
                    out[i] = x[i]
                        + w * (scratch.k1[i]
                            + 2.0 * scratch.k2[i]
                            + 2.0 * scratch.k3[i]
                            + scratch.k4[i]);
                }
            }
            StepMethod::Tight { tol } => {
                if t == 0.0 {
                    out.copy_from_slice(x);
                    return Ok(());
                }
                let opts = IntegratorOpts {
                    rtol: tol,
                    atol: tol,
                    escape_norm: ESCAPE_NORM,
                    max_steps: 1_000_000,
                };
                let field = &self.field;
                // Scratch env cannot be threaded through the Fn interface;
                // keep a local one. Tight steps are not the hot path.
                let rhs = move |y: &[f64], dy: &mut [f64]| {
                    let mut env = Vec::with_capacity(8);
                    field.eval_into(y, u, dy, &mut env);
                };
                let y = integrate_to(&rhs, x, t, &opts).map_err(|e| match e {
                    IntegrateError::Escape { t, norm } => ModelError::FiniteEscape { t, norm },
                    IntegrateError::StepUnderflow { t } | IntegrateError::StepBudget { t } => {
                        ModelError::FiniteEscape {
                            t,
                            norm: f64::INFINITY,
                        }
                    }
                })?;
                out.copy_from_slice(&y);
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::FiniteEscape {
                t,
                norm: f64::INFINITY,
            });
        }
        Ok(())
    }
}

type NativeLoop = Arc<dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync>;

/// Closed-loop one-step map x+ = F(x, U(x, e, T), T), or a directly given
/// analytic map (x, e, T) -> x+.
#[derive(Clone)]
pub struct ClosedLoopModel {
    pub n: usize,
    pub q: usize,
    kind: LoopKind,
    label: String,
}

#[derive(Clone)]
enum LoopKind {
    Composed {
        step: DiscreteStepMap,
        controller: Controller,
    },
    AnalyticExprs(Arc<Vec<Component>>),
    AnalyticNative(NativeLoop),
}

/// Reusable per-call buffers for model evaluation. Buffers grow on demand,
/// so `ModelScratch::default()` works for any model.
#[derive(Debug, Default, Clone)]
pub struct ModelScratch {
    env: Vec<f64>,
    u: Vec<f64>,
    stage: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
}

impl ModelScratch {
    fn ensure_state(&mut self, n: usize) {
        if self.stage.len() < n {
            self.stage.resize(n, 0.0);
            self.k1.resize(n, 0.0);
            self.k2.resize(n, 0.0);
            self.k3.resize(n, 0.0);
            self.k4.resize(n, 0.0);
        }
    }

    fn ensure_input(&mut self, m: usize) {
        if self.u.len() < m {
            self.u.resize(m, 0.0);
        }
    }
}

impl ClosedLoopModel {
    pub fn composed(step: DiscreteStepMap, controller: Controller, label: &str) -> Result<Self, ModelError> {
        if controller.m != step.field.m {
            return Err(ModelError::DimensionMismatch(format!(
                "controller outputs {} input(s), field consumes {}",
                controller.m, step.field.m
            )));
        }
        Ok(ClosedLoopModel {
            n: step.field.n,
            q: controller.q,
            kind: LoopKind::Composed { step, controller },
            label: label.to_string(),
        })
    }

    pub fn analytic_exprs(src: &str) -> Result<Self, ModelError> {
        let c = compile_components(src, "et")?;
        let n = c.comps.len();
        if c.max_x > n {
            return Err(ModelError::DimensionMismatch(format!(
                "map has {n} component(s) but references x{}",
                c.max_x
            )));
        }
        Ok(ClosedLoopModel {
            n,
            q: c.max_e,
            kind: LoopKind::AnalyticExprs(Arc::new(c.comps)),
            label: src.trim().to_string(),
        })
    }

    pub fn analytic_native(
        label: &str,
        n: usize,
        q: usize,
        f: impl Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        ClosedLoopModel {
            n,
            q,
            kind: LoopKind::AnalyticNative(Arc::new(f)),
            label: label.to_string(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn scratch(&self) -> ModelScratch {
        let mut s = ModelScratch::default();
        s.ensure_state(self.n);
        if let LoopKind::Composed { step, .. } = &self.kind {
            s.ensure_input(step.field.m);
        }
        s
    }

    pub fn step_into(
        &self,
        x: &[f64],
        e: &[f64],
        t: f64,
        out: &mut [f64],
        scratch: &mut ModelScratch,
    ) -> Result<(), ModelError> {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        match &self.kind {
            LoopKind::Composed { step, controller } => {
                let m = controller.m;
                scratch.ensure_input(m);
                // Split scratch.u out so env can be borrowed alongside.
                let mut u = std::mem::take(&mut scratch.u);
                controller.eval_into(x, e, t, &mut u[..m], &mut scratch.env);
                let r = step.eval_into(x, &u[..m], t, out, scratch);
                scratch.u = u;
                r
            }
            LoopKind::AnalyticExprs(comps) => {
                for (i, c) in comps.iter().enumerate() {
                    out[i] = c.eval(x, &[], e, t, &mut scratch.env);
                }
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::FiniteEscape {
                        t,
                        norm: f64::INFINITY,
                    });
                }
                Ok(())
            }
            LoopKind::AnalyticNative(f) => {
                f(x, e, t, out);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::FiniteEscape {
                        t,
                        norm: f64::INFINITY,
                    });
                }
                Ok(())
            }
        }
    }

    pub fn step(&self, x: &[f64], e: &[f64], t: f64) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; self.n];
        let mut scratch = self.scratch();
        self.step_into(x, e, t, &mut out, &mut scratch)?;
        Ok(out)
    }
}

/// Existence horizon for solutions started in a compact box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub t_star: f64,
    pub r: f64,
    pub c: f64,
}

fn box_corners(b: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for &(lo, hi) in b {
        let mut next = Vec::with_capacity(out.len() * 2);
        for v in &out {
            let mut a = v.clone();
            a.push(lo);
            next.push(a);
            if hi != lo {
                let mut b2 = v.clone();
                b2.push(hi);
                next.push(b2);
            }
        }
        out = next;
    }
    out
}

fn box_grid(b: &[(f64, f64)], pts_per_axis: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = b
        .iter()
        .map(|&(lo, hi)| {
            if lo == hi || pts_per_axis < 2 {
                vec![lo]
            } else {
                (0..pts_per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / (pts_per_axis - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut out = vec![vec![]];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for v in &out {
            for &p in axis {
                let mut a = v.clone();
                a.push(p);
                next.push(a);
            }
        }
        out = next;
    }
    out
}

fn check_box(b: &[(f64, f64)], dim: usize, what: &str) -> Result<(), ModelError> {
    if b.len() != dim {
        return Err(ModelError::DimensionMismatch(format!(
            "{what} box has {} axis/axes, expected {dim}",
            b.len()
        )));
    }
    if b.iter().any(|&(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(ModelError::EmptyDomain);
    }
    Ok(())
}

/// Horizon over which solutions from the box are guaranteed (up to grid
/// resolution) to exist: with r = max{1, max |x| over the start box} and C a
/// safety-inflated grid bound on |f| over {|x| <= 2r} x u_box, solutions
/// cannot leave the 2r-ball before t_star = r/C.
pub fn existence_horizon(
    f: &VectorField,
    x_box: &[(f64, f64)],
    u_box: &[(f64, f64)],
    pts_per_axis: usize,
    safety: f64,
) -> Result<Horizon, ModelError> {
    check_box(x_box, f.n, "state")?;
    check_box(u_box, f.m, "input")?;
    // Box norm maximum is attained at a corner.
    let r = box_corners(x_box)
        .iter()
        .map(|c| norm2(c))
        .fold(1.0_f64, f64::max);
    let big: Vec<(f64, f64)> = (0..f.n).map(|_| (-2.0 * r, 2.0 * r)).collect();
    let xs = box_grid(&big, pts_per_axis);
    let us = box_grid(u_box, pts_per_axis);
    let mut env = Vec::with_capacity(16);
    let mut val = vec![0.0; f.n];
    let mut c_raw = 0.0_f64;
    for x in &xs {
        if norm2(x) > 2.0 * r * (1.0 + 1e-12) {
            continue;
        }
        for u in &us {
            f.eval_into(x, u, &mut val, &mut env);
            c_raw = c_raw.max(norm2(&val));
        }
    }
    let c = (c_raw * safety).max(FIELD_BOUND_FLOOR);
    Ok(Horizon {
        t_star: r / c,
        r,
        c,
    })
}

/// Grid estimate of a Lipschitz constant for x -> f(x, u) over a box:
/// largest difference quotient between adjacent grid points along each
/// coordinate axis, safety-inflated.
pub fn lipschitz_estimate(
    f: &VectorField,
    x_box: &[(f64, f64)],
    u: &[f64],
    pts_per_axis: usize,
    safety: f64,
) -> Result<f64, ModelError> {
    check_box(x_box, f.n, "state")?;
    if u.len() != f.m {
        return Err(ModelError::DimensionMismatch(format!(
            "input has {} component(s), field consumes {}",
            u.len(),
            f.m
        )));
    }
    let pts = pts_per_axis.max(2);
    let axes: Vec<Vec<f64>> = x_box
        .iter()
        .map(|&(lo, hi)| {
            (0..pts)
                .map(|i| lo + (hi - lo) * i as f64 / (pts - 1) as f64)
                .collect()
        })
        .collect();
    let grid = box_grid(x_box, pts);
    let mut env = Vec::with_capacity(16);
    let mut fa = vec![0.0; f.n];
    let mut fb = vec![0.0; f.n];
    let mut l = 0.0_f64;
    for x in &grid {
        f.eval_into(x, u, &mut fa, &mut env);
        for d in 0..f.n {
            let axis = &axes[d];
            let pos = axis
                .iter()
                .position(|&a| a == x[d])
                .expect("grid point lies on its axis");
            if pos + 1 >= axis.len() {
                continue;
            }
            let mut y = x.clone();
            y[d] = axis[pos + 1];
            let h = y[d] - x[d];
            if h <= 0.0 {
                continue;
            }
            f.eval_into(&y, u, &mut fb, &mut env);
            let diff: f64 = fa
                .iter()
                .zip(&fb)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            l = l.max(diff / h);
        }
    }
    Ok(l * safety)
}

/// Build a model from a registry name. Recognized forms:
/// `paper_example`, `identity`, `analytic:<g1;..;gn>`, `euler:<f1;..;fn>`,
/// `rk4:<f1;..;fn>`, `exact:<f1;..;fn>` (tight integration at `tight_tol`).
/// Field-based forms take their feedback law from `controller` expressions
/// (components `u1..um` as functions of `x*`, `e*`, `T`).
pub fn build_model(
    name: &str,
    controller: Option<&str>,
    tight_tol: f64,
) -> Result<ClosedLoopModel, ModelError> {
    match name {
        "paper_example" => return Ok(crate::example::model()),
        "identity" => {
            return Ok(ClosedLoopModel::analytic_native(
                "identity",
                1,
                1,
                |x, _e, _t, out| out.copy_from_slice(x),
            ))
        }
        _ => {}
    }
    let Some((kind, rest)) = name.split_once(':') else {
        return Err(ModelError::UnknownModel {
            name: name.to_string(),
        });
    };
    if kind == "analytic" {
        if controller.is_some() {
            return Err(ModelError::Spec(
                "analytic models embed their feedback law; no controller applies".to_string(),
            ));
        }
        return ClosedLoopModel::analytic_exprs(rest);
    }
    let method = match kind {
        "euler" => StepMethod::Euler,
        "rk4" => StepMethod::Rk4,
        "exact" => StepMethod::Tight { tol: tight_tol },
        _ => {
            return Err(ModelError::UnknownModel {
                name: name.to_string(),
            })
        }
    };
    let field = VectorField::from_exprs(rest)?;
    let ctrl = match controller {
        Some(src) => Controller::from_exprs(src)?,
        None if field.m == 0 => Controller::native("none", 0, 0, |_x, _e, _t, _out| {}),
        None => {
            return Err(ModelError::Spec(format!(
                "field references u1..u{} but no controller was given",
                field.m
            )))
        }
    };
    let label = match controller {
        Some(c) => format!("{name} | {c}"),
        None => name.to_string(),
    };
    ClosedLoopModel::composed(DiscreteStepMap::new(method, field), ctrl, &label)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic_field() -> VectorField {
        VectorField::from_exprs("pow(x1, 3) + u1").unwrap()
    }

    fn example_style_loop(method: StepMethod) -> ClosedLoopModel {
        // Feedback -xhat - 3 xhat^3 with xhat = x + e.
        let ctrl = Controller::from_exprs(
            "0 - (x1 + e1) - 3 * pow(x1 + e1, 3)",
        )
        .unwrap();
        ClosedLoopModel::composed(DiscreteStepMap::new(method, cubic_field()), ctrl, "test loop")
            .unwrap()
    }

    #[test]
    fn euler_step_hand_value() {
        let step = DiscreteStepMap::new(StepMethod::Euler, cubic_field());
        let mut out = [0.0];
        let mut scratch = ModelScratch::default();
        step.eval_into(&[1.0], &[-4.0], 0.1, &mut out, &mut scratch).unwrap();
        assert!((out[0] - 0.7).abs() < 1e-15, "{}", out[0]);
    }

    #[test]
    fn zero_horizon_is_identity() {
        for method in [StepMethod::Euler, StepMethod::Rk4, StepMethod::Tight { tol: 1e-10 }] {
            let model = example_style_loop(method);
            let y = model.step(&[0.37], &[0.01], 1e-10).unwrap();
            assert!((y[0] - 0.37).abs() < 1e-8);
        }
    }

    #[test]
    fn tight_matches_linear_closed_form() {
        let f = VectorField::from_exprs("0 - x1").unwrap();
        let step = DiscreteStepMap::new(StepMethod::Tight { tol: 1e-10 }, f);
        let mut out = [0.0];
        let mut scratch = ModelScratch::default();
        step.eval_into(&[1.0], &[], 0.5, &mut out, &mut scratch).unwrap();
        assert!((out[0] - (-0.5_f64).exp()).abs() < 1e-8, "{}", out[0]);
    }

    #[test]
    fn closed_loop_hand_values() {
        let model = example_style_loop(StepMethod::Euler);
        let y = model.step(&[1.0], &[0.0], 0.1).unwrap();
        assert!((y[0] - 0.7).abs() < 1e-15);
        let z = model.step(&[0.0], &[0.0], 0.05).unwrap();
        assert_eq!(z[0], 0.0);
        let w = model.step(&[1.0], &[0.1], 0.05).unwrap();
        assert!((w[0] - 0.79535).abs() < 1e-12, "{}", w[0]);
    }

    #[test]
    fn composition_matches_manual_pipeline_bitwise() {
        let model = example_style_loop(StepMethod::Euler);
        let (x, e, t) = (0.73, -0.02, 0.041);
        let composed = model.step(&[x], &[e], t).unwrap()[0];
        let xhat = x + e;
        let u = -xhat - 3.0 * xhat * xhat * xhat;
        let step = DiscreteStepMap::new(StepMethod::Euler, cubic_field());
        let mut out = [0.0];
        let mut scratch = ModelScratch::default();
        step.eval_into(&[x], &[u], t, &mut out, &mut scratch).unwrap();
        assert_eq!(composed, out[0]);
    }

    #[test]
    fn existence_horizon_cubic_example() {
        let h = existence_horizon(&cubic_field(), &[(-1.0, 1.0)], &[(-4.0, 4.0)], 101, 1.0).unwrap();
        assert_eq!(h.r, 1.0);
        assert!((h.c - 12.0).abs() < 1e-12, "{}", h.c);
        assert!((h.t_star - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn existence_horizon_zero_field_effectively_unbounded() {
        let f = VectorField::from_exprs("x1 * 0").unwrap();
        let h = existence_horizon(&f, &[(-1.0, 1.0)], &[], 33, 1.1).unwrap();
        assert_eq!(h.c, FIELD_BOUND_FLOOR);
        assert_eq!(h.t_star, 1.0 / FIELD_BOUND_FLOOR);
    }

    #[test]
    fn existence_horizon_linear_decay() {
        let f = VectorField::from_exprs("0 - x1").unwrap();
        let h = existence_horizon(&f, &[(-1.0, 1.0)], &[], 101, 1.0).unwrap();
        assert_eq!(h.r, 1.0);
        assert!((h.c - 2.0).abs() < 1e-12);
        assert!((h.t_star - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_estimates() {
        let cubic = VectorField::from_exprs("pow(x1, 3)").unwrap();
        let l = lipschitz_estimate(&cubic, &[(-2.0, 2.0)], &[], 101, 1.0).unwrap();
        assert!((l - 12.0).abs() / 12.0 < 0.05, "{l}");

        let linear = VectorField::from_exprs("0 - x1").unwrap();
        let l1 = lipschitz_estimate(&linear, &[(-1.0, 1.0)], &[], 7, 1.0).unwrap();
        assert!((l1 - 1.0).abs() < 1e-12);

        // Fixed input shifts the field; differences cancel it.
        let with_u = cubic_field();
        let l2 = lipschitz_estimate(&with_u, &[(-2.0, 2.0)], &[1.7], 101, 1.0).unwrap();
        let l3 = lipschitz_estimate(&cubic, &[(-2.0, 2.0)], &[], 101, 1.0).unwrap();
        assert!((l2 - l3).abs() < 1e-12);
    }

    #[test]
    fn consistency_orders() {
        // Local truncation vs tight integration: Euler error ~ c T^2,
        // RK4 error ~ c T^5. Halving T should shrink errors by ~4 and ~32.
        let f = cubic_field();
        let x = [0.8];
        let u = [-1.3];
        let err = |method: StepMethod, t: f64| {
            let approx = DiscreteStepMap::new(method, f.clone());
            let tight = DiscreteStepMap::new(StepMethod::Tight { tol: 1e-13 }, f.clone());
            let mut a = [0.0];
            let mut b = [0.0];
            let mut s = ModelScratch::default();
            approx.eval_into(&x, &u, t, &mut a, &mut s).unwrap();
            tight.eval_into(&x, &u, t, &mut b, &mut s).unwrap();
            (a[0] - b[0]).abs()
        };
        let (e1, e2) = (err(StepMethod::Euler, 0.08), err(StepMethod::Euler, 0.04));
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.5, "euler ratio {ratio}");
        let (r1, r2) = (err(StepMethod::Rk4, 0.08), err(StepMethod::Rk4, 0.04));
        let ratio4 = r1 / r2;
        assert!(ratio4 > 16.0 && ratio4 < 64.0, "rk4 ratio {ratio4}");
    }

    #[test]
    fn tight_tolerance_halving_is_convergent() {
        let f = cubic_field();
        let x = [0.9];
        let u = [-2.0];
        let at = |tol: f64| {
            let step = DiscreteStepMap::new(StepMethod::Tight { tol }, f.clone());
            let mut out = [0.0];
            let mut s = ModelScratch::default();
            step.eval_into(&x, &u, 0.3, &mut out, &mut s).unwrap();
            out[0]
        };
        let coarse = at(1e-6);
        let fine = at(5e-7);
        assert!((coarse - fine).abs() < 1e-6);
    }

    #[test]
    fn registry_builds_and_rejects() {
        let m = build_model("paper_example", None, 1e-10).unwrap();
        assert_eq!((m.n, m.q), (1, 1));
        let id = build_model("identity", None, 1e-10).unwrap();
        assert_eq!(id.step(&[0.3], &[0.0], 0.1).unwrap()[0], 0.3);
        let a = build_model("analytic:x1 + T * x1", None, 1e-10).unwrap();
        assert!((a.step(&[1.0], &[], 0.1).unwrap()[0] - 1.1).abs() < 1e-15);
        let e = build_model(
            "euler:pow(x1, 3) + u1",
            Some("0 - (x1 + e1) - 3 * pow(x1 + e1, 3)"),
            1e-10,
        )
        .unwrap();
        assert!((e.step(&[1.0], &[0.0], 0.1).unwrap()[0] - 0.7).abs() < 1e-15);

        assert!(matches!(
            build_model("nope", None, 1e-10),
            Err(ModelError::UnknownModel { .. })
        ));
        assert!(matches!(
            build_model("euler:pow(x1, 3) + u1", None, 1e-10),
            Err(ModelError::Spec(_))
        ));
        assert!(build_model("euler:x2", None, 1e-10).is_err());
    }

    #[test]
    fn escape_reported_by_tight_integration() {
        // dx/dt = x^2 from 2 blows up before t = 1.
        let f = VectorField::from_exprs("pow(x1, 2)").unwrap();
        let step = DiscreteStepMap::new(StepMethod::Tight { tol: 1e-8 }, f);
        let mut out = [0.0];
        let mut s = ModelScratch::default();
        let r = step.eval_into(&[2.0], &[], 1.0, &mut out, &mut s);
        assert!(matches!(r, Err(ModelError::FiniteEscape { .. })));
    }
}
