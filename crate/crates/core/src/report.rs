//! Report schemas shared by the certifier, bound constructor, and falsifier,
//! plus small output helpers. All analysis results funnel into these types
//! so the CLI can serialize every outcome the same way.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    CertifiedOnGrid,
    ViolatedAt,
    Inconclusive,
}

/// Worst grid point of a certification sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    #[serde(rename = "T")]
    pub t: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GridStats {
    pub x_points: usize,
    pub e_points: usize,
    pub t_points: usize,
    pub points_checked: usize,
    pub inconclusive_points: usize,
    pub x_radius: f64,
    pub e_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationReport {
    pub verdict: Verdict,
    /// Minimum over the grid of the condition margin; nonnegative margins
    /// everywhere mean the condition held on the grid.
    pub min_margin: f64,
    pub witness: Option<Witness>,
    pub grid: GridStats,
    #[serde(rename = "T_used")]
    pub t_used: f64,
    #[serde(rename = "T_max_certified", skip_serializing_if = "Option::is_none")]
    pub t_max_certified: Option<f64>,
    pub caveats: Vec<String>,
}

impl CertificationReport {
    pub fn empty_inconclusive(t_used: f64, reason: &str) -> Self {
        CertificationReport {
            verdict: Verdict::Inconclusive,
            min_margin: f64::INFINITY,
            witness: None,
            grid: GridStats::default(),
            t_used,
            t_max_certified: None,
            caveats: vec![reason.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeViolation {
    pub scenario: usize,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub violations: Vec<EnvelopeViolation>,
    pub checked_points: usize,
    /// Largest lhs - rhs over all checked points (negative when the bound
    /// held everywhere; the headroom indicator).
    pub max_excess: f64,
    /// Largest lhs / rhs over points with rhs > 0.
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub eps: f64,
    /// Largest candidate radius whose sup stayed below eps; absent when even
    /// the smallest candidate failed.
    pub delta: Option<f64>,
    pub sup_at_delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructuralReport {
    /// Max |F(0, 0, T)| over the probed period grid.
    pub origin_residual: f64,
    #[serde(rename = "T_probe")]
    pub t_probe: f64,
    pub delta_table: Vec<DeltaEntry>,
    pub m_values: Vec<f64>,
    pub e_values: Vec<f64>,
    /// c_table[i][j] = grid sup of |F| over {|x| <= m_values[i],
    /// |e| <= e_values[j], T in (0, T_probe)}.
    pub c_table: Vec<Vec<f64>>,
    pub caveats: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

/// Replayable counterexample scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WitnessScenario {
    pub x0: Vec<f64>,
    pub periods: Vec<f64>,
    pub errors: Vec<Vec<f64>>,
    pub claim: serde_json::Value,
    pub violation: ViolationRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FalsifyReport {
    pub outcome: FalsifyOutcome,
    pub witness: Option<WitnessScenario>,
    /// How close the search came to a violation: best lhs/rhs ratio for
    /// envelope claims, worst margin deficit (-min margin) for decrease
    /// claims. Values above 1 (resp. 0) would be violations.
    pub closeness: f64,
    pub scenarios_evaluated: usize,
    pub caveats: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FalsifyOutcome {
    CounterexampleFound,
    NoCounterexampleFound,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub m: f64,
    pub d_bound: f64,
    #[serde(rename = "T_probe")]
    pub t_probe: f64,
    pub scenarios: usize,
    pub horizon: usize,
    /// (eps, delta): largest starting radius keeping all sampled
    /// trajectories within eps; None when none of the candidates worked.
    pub delta_table: Vec<(f64, Option<f64>)>,
    /// (L, C): largest |x_k| seen while elapsed time <= L.
    pub c_table: Vec<(f64, f64)>,
    /// (eps, time): earliest elapsed time after which every sampled
    /// trajectory stayed within eps; None when not attained on the horizon.
    pub attract_table: Vec<(f64, Option<f64>)>,
    pub caveats: Vec<String>,
}

/// Two-column CSV used for all monotone tables. Non-finite values print as
/// `inf`/`-inf`/`nan`.
pub fn write_table_csv(path: &Path, header: (&str, &str), rows: &[(f64, f64)]) -> std::io::Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{},{}\n", header.0, header.1));
    for &(a, v) in rows {
        out.push_str(&format!("{},{}\n", fmt_f64(a), fmt_f64(v)));
    }
    std::fs::write(path, out)
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        let mut s = format!("{v}");
        if !s.contains('.') && !s.contains('e') && !s.contains("inf") {
            s.push_str(".0");
        }
        s
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn witness_serializes_with_capital_t() {
        let w = Witness {
            x: vec![1.0],
            e: vec![0.5],
            t: 0.05,
        };
        let s = serde_json::to_string(&w).unwrap();
        assert!(s.contains("\"T\":0.05"), "{s}");
        let back: Witness = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn fmt_handles_special_values() {
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(1.0), "1.0");
        assert_eq!(fmt_f64(0.25), "0.25");
    }
}
