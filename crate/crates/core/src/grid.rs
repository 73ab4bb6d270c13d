//! Evaluation grids: tensor products for low dimension, Latin hypercube
//! samples for high dimension, open-interval period grids.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::{indexed_rng, TAG_LHS};

pub const DEFAULT_AXIS_POINTS: usize = 33;
pub const DEFAULT_LHS_SAMPLES: usize = 4096;
pub const DEFAULT_T_POINTS: usize = 32;

/// Inclusive endpoints; `count == 1` collapses to the midpoint.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 1);
    if count == 1 || lo == hi {
        return vec![0.5 * (lo + hi)];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Interior samples of the open interval (0, bound): bound * j / (count + 1).
pub fn open_t_grid(bound: f64, count: usize) -> Vec<f64> {
    assert!(bound > 0.0);
    (1..=count)
        .map(|j| bound * j as f64 / (count + 1) as f64)
        .collect()
}

#[derive(Debug, Clone)]
pub struct PointSet {
    pub points: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Latin hypercube samples of [lo, hi]^dim: one stratum per sample and
/// dimension, jittered, deterministically keyed by seed.
pub fn latin_hypercube(dim: usize, samples: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for d in 0..dim {
        let mut rng = indexed_rng(seed, TAG_LHS, d as u64);
        let mut perm: Vec<usize> = (0..samples).collect();
        perm.shuffle(&mut rng);
        let col: Vec<f64> = perm
            .iter()
            .map(|&p| {
                let u: f64 = rng.gen();
                lo + (hi - lo) * (p as f64 + u) / samples as f64
            })
            .collect();
        cols.push(col);
    }
    (0..samples)
        .map(|i| (0..dim).map(|d| cols[d][i]).collect())
        .collect()
}

/// Points covering the closed ball of the given radius: a filtered tensor
/// grid for dim <= 2, Latin hypercube samples above that. The origin is
/// always included.
pub fn ball_points(
    radius: f64,
    dim: usize,
    pts_per_axis: usize,
    lhs_samples: usize,
    seed: u64,
) -> PointSet {
    if dim == 0 {
        return PointSet {
            points: vec![vec![]],
            norms: vec![0.0],
        };
    }
    if radius == 0.0 {
        return PointSet {
            points: vec![vec![0.0; dim]],
            norms: vec![0.0],
        };
    }
    let slack = radius * (1.0 + 1e-12);
    let mut points: Vec<Vec<f64>> = Vec::new();
    if dim <= 2 {
        let axis = linspace(-radius, radius, pts_per_axis);
        if dim == 1 {
            points.extend(axis.iter().map(|&x| vec![x]));
        } else {
            for &x in &axis {
                for &y in &axis {
                    if (x * x + y * y).sqrt() <= slack {
                        points.push(vec![x, y]);
                    }
                }
            }
        }
    } else {
        points.push(vec![0.0; dim]);
        for p in latin_hypercube(dim, lhs_samples, -radius, radius, seed) {
            if norm2(&p) <= slack {
                points.push(p);
            }
        }
    }
    let norms = points.iter().map(|p| norm2(p)).collect();
    PointSet { points, norms }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints_and_refinement_is_superset() {
        let a = linspace(-1.0, 1.0, 33);
        assert_eq!(a[0], -1.0);
        assert_eq!(a[32], 1.0);
        assert_eq!(a[16], 0.0);
        let b = linspace(-1.0, 1.0, 65);
        for (i, v) in a.iter().enumerate() {
            assert_eq!(b[2 * i], *v, "refined grid must contain coarse points bitwise");
        }
    }

    #[test]
    fn t_grid_is_open_and_refines_to_superset() {
        let t = open_t_grid(0.1, 32);
        assert_eq!(t.len(), 32);
        assert!(t[0] > 0.0);
        assert!(t[31] < 0.1);
        let fine = open_t_grid(0.1, 65);
        for (j, v) in t.iter().enumerate() {
            // j/(33) = 2j/(66): entry j of the coarse grid is entry 2j+1 of
            // the refined one (1-based j shifts by one).
            assert_eq!(fine[2 * (j + 1) - 1], *v);
        }
    }

    #[test]
    fn ball_points_edge_cases() {
        let empty_dim = ball_points(1.0, 0, 33, 64, 0);
        assert_eq!(empty_dim.points, vec![Vec::<f64>::new()]);
        let origin = ball_points(0.0, 3, 33, 64, 0);
        assert_eq!(origin.points, vec![vec![0.0; 3]]);
        let one = ball_points(2.0, 1, 33, 64, 0);
        assert_eq!(one.len(), 33);
        let two = ball_points(1.0, 2, 9, 64, 0);
        assert!(two.points.iter().all(|p| norm2(p) <= 1.0 + 1e-9));
        assert!(two.points.contains(&vec![0.0, 0.0]));
        assert!(two.points.contains(&vec![1.0, 0.0]));
    }

    #[test]
    fn lhs_is_stratified_and_deterministic() {
        let pts = latin_hypercube(3, 64, -1.0, 1.0, 7);
        assert_eq!(pts.len(), 64);
        for d in 0..3 {
            let mut strata: Vec<usize> = pts
                .iter()
                .map(|p| (((p[d] + 1.0) / 2.0) * 64.0).floor() as usize)
                .collect();
            strata.sort_unstable();
            let expect: Vec<usize> = (0..64).collect();
            assert_eq!(strata, expect);
        }
        assert_eq!(pts, latin_hypercube(3, 64, -1.0, 1.0, 7));
        assert_ne!(pts, latin_hypercube(3, 64, -1.0, 1.0, 8));
    }

    #[test]
    fn high_dim_ball_contains_origin_and_respects_radius() {
        let b = ball_points(0.5, 4, 33, 256, 3);
        assert_eq!(b.points[0], vec![0.0; 4]);
        assert!(b.points.iter().all(|p| norm2(p) <= 0.5 + 1e-9));
        assert!(b.len() > 10);
    }
}
