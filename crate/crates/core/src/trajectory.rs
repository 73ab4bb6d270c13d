//! Sampling-period and error-sequence generation plus closed-loop
//! simulation with elapsed-time bookkeeping. Divergence is recorded in the
//! trajectory, never thrown: falsification treats diverging runs as
//! first-class results.

use std::f64::consts::TAU;

use rand::Rng;
use thiserror::Error;

use crate::models::{norm2, ClosedLoopModel, ESCAPE_NORM};
use crate::rng::{indexed_rng, TAG_ERRORS, TAG_PERIODS};

/// Random modes stay strictly inside the open interval by sampling
/// [T * OPEN_MARGIN, T * (1 - OPEN_MARGIN)].
pub const OPEN_MARGIN: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone)]
pub enum SamplingMode {
    /// Every period equals `fraction * t_max`; fraction must lie in (0, 1).
    Constant(f64),
    IIDUniform,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SamplingSpec {
    pub mode: SamplingMode,
    /// Open-interval bound: every period satisfies 0 < T_i < t_max.
    pub t_max: f64,
    pub len: usize,
    pub seed: u64,
}

pub fn gen_sampling(spec: &SamplingSpec) -> Result<Vec<f64>, TrajError> {
    if !(spec.t_max.is_finite() && spec.t_max > 0.0) {
        return Err(TrajError::InvalidSpec(format!(
            "period bound must be positive, got {}",
            spec.t_max
        )));
    }
    if spec.len == 0 {
        return Err(TrajError::InvalidSpec("sequence length must be >= 1".into()));
    }
    let out = match &spec.mode {
        SamplingMode::Constant(theta) => {
            if !(theta.is_finite() && *theta > 0.0 && *theta < 1.0) {
                return Err(TrajError::InvalidSpec(format!(
                    "constant fraction must lie in (0,1), got {theta}"
                )));
            }
            vec![theta * spec.t_max; spec.len]
        }
        SamplingMode::IIDUniform => {
            let lo = spec.t_max * OPEN_MARGIN;
            let hi = spec.t_max * (1.0 - OPEN_MARGIN);
            (0..spec.len)
                .map(|i| {
                    let mut rng = indexed_rng(spec.seed, TAG_PERIODS, i as u64);
                    let u: f64 = rng.gen();
                    lo + (hi - lo) * u
                })
                .collect()
        }
        SamplingMode::Explicit(list) => {
            if list.len() != spec.len {
                return Err(TrajError::InvalidSpec(format!(
                    "explicit period list has length {}, spec says {}",
                    list.len(),
                    spec.len
                )));
            }
            list.clone()
        }
    };
    for (i, &t) in out.iter().enumerate() {
        if !(t.is_finite() && t > 0.0 && t < spec.t_max) {
            return Err(TrajError::InvalidSpec(format!(
                "period {i} = {t} falls outside (0, {})",
                spec.t_max
            )));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub enum ErrorMode {
    Zero,
    /// The same vector at every step.
    ConstantVector(Vec<f64>),
    /// Uniform draws from the closed ball of radius `bound`.
    IIDBall,
    /// Explicit per-step vectors, validated against the bound.
    WorstCaseList(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct ErrorSpec {
    pub mode: ErrorMode,
    pub bound: f64,
    pub q: usize,
    pub len: usize,
    pub seed: u64,
}

pub fn gen_errors(spec: &ErrorSpec) -> Result<Vec<Vec<f64>>, TrajError> {
    if !(spec.bound.is_finite() && spec.bound >= 0.0) {
        return Err(TrajError::InvalidSpec(format!(
            "error bound must be >= 0, got {}",
            spec.bound
        )));
    }
    if spec.len == 0 {
        return Err(TrajError::InvalidSpec("sequence length must be >= 1".into()));
    }
    let out: Vec<Vec<f64>> = match &spec.mode {
        ErrorMode::Zero => vec![vec![0.0; spec.q]; spec.len],
        ErrorMode::ConstantVector(v) => {
            if v.len() != spec.q {
                return Err(TrajError::InvalidSpec(format!(
                    "constant error vector has dim {}, spec says {}",
                    v.len(),
                    spec.q
                )));
            }
            vec![v.clone(); spec.len]
        }
        ErrorMode::IIDBall => (0..spec.len)
            .map(|i| {
                let mut rng = indexed_rng(spec.seed, TAG_ERRORS, i as u64);
                ball_draw(&mut rng, spec.q, spec.bound)
            })
            .collect(),
        ErrorMode::WorstCaseList(list) => {
            if list.len() != spec.len {
                return Err(TrajError::InvalidSpec(format!(
                    "error list has length {}, spec says {}",
                    list.len(),
                    spec.len
                )));
            }
            for (i, v) in list.iter().enumerate() {
                if v.len() != spec.q {
                    return Err(TrajError::InvalidSpec(format!(
                        "error {i} has dim {}, spec says {}",
                        v.len(),
                        spec.q
                    )));
                }
            }
            list.clone()
        }
    };
    for (i, v) in out.iter().enumerate() {
        let r = norm2(v);
        if !(r.is_finite() && r <= spec.bound * (1.0 + 1e-12)) {
            return Err(TrajError::InvalidSpec(format!(
                "error {i} has norm {r}, above the bound {}",
                spec.bound
            )));
        }
    }
    Ok(out)
}

/// Uniform draw from the closed q-ball: gaussian direction via Box-Muller,
/// radius bound * u^(1/q).
pub(crate) fn ball_draw(rng: &mut impl Rng, q: usize, bound: f64) -> Vec<f64> {
    if q == 0 || bound == 0.0 {
        return vec![0.0; q];
    }
    let mut z = Vec::with_capacity(q + 1);
    while z.len() < q {
        let u1: f64 = rng.gen_range(1e-300..1.0_f64);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        z.push(r * c);
        z.push(r * s);
    }
    z.truncate(q);
    let zn = norm2(&z);
    if zn < 1e-150 {
        let mut v = vec![0.0; q];
        v[0] = bound;
        return v;
    }
    let u: f64 = rng.gen();
    let radius = bound * u.powf(1.0 / q as f64);
    let scale = radius / zn;
    z.iter().map(|&x| x * scale).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// states[k] is x_k; one more entry than steps taken.
    pub states: Vec<Vec<f64>>,
    pub periods: Vec<f64>,
    pub errors: Vec<Vec<f64>>,
    /// elapsed[k] = sum of periods before step k; elapsed[0] = 0.
    pub elapsed: Vec<f64>,
    /// Index of the first state that breached the blow-up cap, or the index
    /// a failed step would have produced (that state is then absent).
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Header `k,t,x1..xn,e1..eq,T`, one row per state; the final state's
    /// error and period columns are empty. A trailing comment marks
    /// divergence.
    pub fn to_csv(&self, n: usize, q: usize) -> String {
        let mut out = String::from("k,t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for i in 1..=q {
            out.push_str(&format!(",e{i}"));
        }
        out.push_str(",T\n");
        for (k, x) in self.states.iter().enumerate() {
            out.push_str(&format!("{k},{}", crate::report::fmt_f64(self.elapsed[k])));
            for v in x {
                out.push_str(&format!(",{}", crate::report::fmt_f64(*v)));
            }
            if k < self.periods.len() {
                for v in &self.errors[k] {
                    out.push_str(&format!(",{}", crate::report::fmt_f64(*v)));
                }
                out.push_str(&format!(",{}", crate::report::fmt_f64(self.periods[k])));
            } else {
                for _ in 0..q {
                    out.push(',');
                }
                out.push(',');
            }
            out.push('\n');
        }
        if let Some(k) = self.diverged_at {
            out.push_str(&format!("# diverged_at={k}\n"));
        }
        out
    }
}

/// Iterates the closed loop from x0 under the given period and error
/// sequences. Stops early when the state norm passes the blow-up cap or the
/// step map fails; the truncation point lands in `diverged_at`.
pub fn simulate(
    model: &ClosedLoopModel,
    x0: &[f64],
    periods: &[f64],
    errors: &[Vec<f64>],
) -> Result<Trajectory, TrajError> {
    if x0.len() != model.n {
        return Err(TrajError::InvalidSpec(format!(
            "x0 has dim {}, model expects {}",
            x0.len(),
            model.n
        )));
    }
    if periods.len() != errors.len() {
        return Err(TrajError::InvalidSpec(format!(
            "{} periods vs {} errors",
            periods.len(),
            errors.len()
        )));
    }
    for (i, e) in errors.iter().enumerate() {
        if e.len() != model.q {
            return Err(TrajError::InvalidSpec(format!(
                "error {i} has dim {}, model expects {}",
                e.len(),
                model.q
            )));
        }
    }

    let mut states = Vec::with_capacity(periods.len() + 1);
    let mut elapsed = Vec::with_capacity(periods.len() + 1);
    states.push(x0.to_vec());
    elapsed.push(0.0);
    let mut diverged_at = None;
    let mut scratch = model.scratch();
    let mut next = vec![0.0_f64; model.n];
    // Compensated running time so long horizons keep full precision.
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut steps_taken = 0;
    for (k, (&t, e)) in periods.iter().zip(errors.iter()).enumerate() {
        let cur = &states[k];
        match model.step_into(cur, e, t, &mut next, &mut scratch) {
            Ok(()) => {
                let y = t - comp;
                let s = sum + y;
                comp = (s - sum) - y;
                sum = s;
                states.push(next.clone());
                elapsed.push(sum);
                steps_taken = k + 1;
                if norm2(&next) > ESCAPE_NORM {
                    diverged_at = Some(k + 1);
                    break;
                }
            }
            Err(_) => {
                diverged_at = Some(k + 1);
                break;
            }
        }
    }
    Ok(Trajectory {
        states,
        periods: periods[..steps_taken].to_vec(),
        errors: errors[..steps_taken].to_vec(),
        elapsed,
        diverged_at,
    })
}
