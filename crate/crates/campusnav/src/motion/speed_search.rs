//! Coarse speed-profile search: a layered pass over the s-t graph with a
//! discrete acceleration alphabet.
//!
//! States live on an exact lattice: every alphabet value times the layer
//! duration must be an integer multiple of the smallest one, so velocities
//! and positions reconstruct bit-identically from integer state keys. The
//! pass is exhaustive over the layered graph: per layer it keeps the
//! cheapest accumulated effort for every reachable (velocity, position)
//! lattice state, which preserves the optimal total cost because the
//! terminal shortfall depends only on the final state.

use super::StGraph;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarsePoint {
    pub t: f64,
    pub s: f64,
    pub v: f64,
    /// Acceleration applied from this point to the next (0 at the last).
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseProfile {
    pub points: Vec<CoarsePoint>,
    pub cost: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("no admissible speed profile through the s-t graph")]
    Infeasible,
    #[error("acceleration alphabet is not commensurate: {0} vs quantum {1}")]
    BadAlphabet(f64, f64),
}

struct Lattice {
    /// Velocity quantum: min nonzero |a| * dt.
    dv: f64,
    dt: f64,
    v0: f64,
    /// Acceleration alphabet as (value, velocity-steps).
    steps: Vec<(f64, i64)>,
}

impl Lattice {
    fn new(accel_set: &[f64], dt: f64, v0: f64) -> Result<Self, SearchError> {
        let dv = accel_set
            .iter()
            .filter(|a| **a != 0.0)
            .map(|a| a.abs() * dt)
            .fold(f64::INFINITY, f64::min);
        assert!(dv.is_finite(), "alphabet needs a nonzero entry");
        let mut steps = Vec::with_capacity(accel_set.len());
        for &a in accel_set {
            let k = a * dt / dv;
            if (k - k.round()).abs() > 1e-9 {
                return Err(SearchError::BadAlphabet(a, dv / dt));
            }
            steps.push((a, k.round() as i64));
        }
        Ok(Lattice { dv, dt, v0, steps })
    }

    fn velocity(&self, n: i64) -> f64 {
        self.v0 + self.dv * n as f64
    }

    /// Position after `k` layers with cumulative-index sum `m` and current
    /// index `n` (trapezoidal integration of the lattice velocities).
    fn position(&self, k: usize, m: i64, n: i64) -> f64 {
        self.dt * (k as f64 * self.v0) + self.dt * self.dv * (m as f64 + n as f64 / 2.0)
    }
}

#[derive(Clone, Copy)]
struct NodeBest {
    effort: f64,
    parent: (i64, i64),
    accel: f64,
}

/// Cells swept by a transition from `s_lo` to `s_hi` (inclusive indices).
fn swept_cells(s_lo: f64, s_hi: f64, ds: f64) -> (i64, i64) {
    let lo = ((s_lo + 1e-9) / ds).floor() as i64;
    let hi = ((s_hi + 1e-9) / ds).floor() as i64;
    (lo, hi)
}

/// Layered search for the cheapest admissible coarse profile.
///
/// `cell_limits[i]` caps the velocity while sweeping cell `i` (cells past
/// the array are unconstrained). Cost = `w_t * max(0, s_target - s_final)
/// + w_a * sum a^2`. Deterministic: states are visited in key order and
/// strict improvement is required to replace a candidate.
pub fn search_speed_profile(
    g: &StGraph,
    cell_limits: &[f64],
    v0: f64,
    s_target: f64,
    accel_set: &[f64],
    w_t: f64,
    w_a: f64,
) -> Result<CoarseProfile, SearchError> {
    let lat = Lattice::new(accel_set, g.dt, v0)?;
    let layers = g.n_t;
    // Layer maps keyed by (n, m); value is the cheapest accumulated effort.
    let mut levels: Vec<BTreeMap<(i64, i64), NodeBest>> = Vec::with_capacity(layers + 1);
    let mut start = BTreeMap::new();
    start.insert(
        (0i64, 0i64),
        NodeBest { effort: 0.0, parent: (0, 0), accel: 0.0 },
    );
    levels.push(start);

    for k in 0..layers {
        let mut next: BTreeMap<(i64, i64), NodeBest> = BTreeMap::new();
        let current = &levels[k];
        for (&(n, m), node) in current.iter() {
            let s = lat.position(k, m, n);
            let v = lat.velocity(n);
            for &(a, dn) in &lat.steps {
                let n2 = n + dn;
                let v2 = lat.velocity(n2);
                if v2 < -1e-9 {
                    continue;
                }
                let m2 = m + n;
                let s2 = lat.position(k + 1, m2, n2);
                let (c_lo, c_hi) = swept_cells(s.min(s2), s.max(s2), g.ds);
                let mut blocked = false;
                let mut vmax = f64::INFINITY;
                for c in c_lo..=c_hi {
                    if c < 0 {
                        blocked = true;
                        break;
                    }
                    let cu = c as usize;
                    if cu < g.n_s && g.occupied(cu, k) {
                        blocked = true;
                        break;
                    }
                    if cu < cell_limits.len() {
                        vmax = vmax.min(cell_limits[cu]);
                    }
                }
                if blocked || v2 > vmax + 1e-9 {
                    continue;
                }
                let _ = v;
                let effort = node.effort + w_a * a * a;
                let key = (n2, m2);
                let better = match next.get(&key) {
                    Some(existing) => effort < existing.effort,
                    None => true,
                };
                if better {
                    next.insert(
                        key,
                        NodeBest { effort, parent: (n, m), accel: a },
                    );
                }
            }
        }
        if next.is_empty() {
            return Err(SearchError::Infeasible);
        }
        levels.push(next);
    }

    // Terminal selection: effort + shortfall.
    let mut best_key = None;
    let mut best_cost = f64::INFINITY;
    for (&(n, m), node) in levels[layers].iter() {
        let s = lat.position(layers, m, n);
        let shortfall = (s_target - s).max(0.0);
        let cost = node.effort + w_t * shortfall;
        if cost < best_cost {
            best_cost = cost;
            best_key = Some((n, m));
        }
    }
    let mut key = best_key.ok_or(SearchError::Infeasible)?;

    // Walk parents back to the start.
    let mut accels = vec![0.0; layers];
    for k in (1..=layers).rev() {
        let node = levels[k][&key];
        accels[k - 1] = node.accel;
        key = node.parent;
    }
    let mut points = Vec::with_capacity(layers + 1);
    let (mut n, mut m) = (0i64, 0i64);
    for (k, _) in accels.iter().enumerate() {
        points.push(CoarsePoint {
            t: k as f64 * g.dt,
            s: lat.position(k, m, n),
            v: lat.velocity(n),
            a: accels[k],
        });
        let dn = lat.steps.iter().find(|(a, _)| *a == accels[k]).unwrap().1;
        m += n;
        n += dn;
    }
    points.push(CoarsePoint {
        t: layers as f64 * g.dt,
        s: lat.position(layers, m, n),
        v: lat.velocity(n),
        a: 0.0,
    });
    Ok(CoarseProfile { points, cost: best_cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{Path, PathSample};
    use crate::geom::Vec2;

    fn empty_graph(n_s: usize, n_t: usize) -> StGraph {
        StGraph::empty(n_s, n_t, 0.5, 0.5, n_s as f64 * 0.5)
    }

    fn path_stub(n_s: usize) -> Path {
        let samples = (0..n_s)
            .map(|i| PathSample {
                s: i as f64 * 0.5,
                frame_s: i as f64 * 0.5,
                position: Vec2::new(i as f64 * 0.5, 0.0),
                heading: 0.0,
                curvature: 0.0,
            })
            .collect();
        Path { samples, ds: 0.5, converged: true }
    }

    const ALPHABET: [f64; 5] = [-1.5, -0.75, 0.0, 0.75, 1.5];

    /// Brute-force oracle: enumerate every acceleration sequence with the
    /// same admissibility rules, computed incrementally.
    pub(crate) fn enumerate_best_cost(
        g: &StGraph,
        cell_limits: &[f64],
        v0: f64,
        s_target: f64,
        accel_set: &[f64],
        w_t: f64,
        w_a: f64,
    ) -> Option<f64> {
        fn recurse(
            g: &StGraph,
            cell_limits: &[f64],
            accel_set: &[f64],
            k: usize,
            s: f64,
            v: f64,
            effort: f64,
            s_target: f64,
            w_t: f64,
            w_a: f64,
            best: &mut Option<f64>,
        ) {
            if k == g.n_t {
                let cost = effort + w_t * (s_target - s).max(0.0);
                if best.map_or(true, |b| cost < b) {
                    *best = Some(cost);
                }
                return;
            }
            for &a in accel_set {
                let v2 = v + a * g.dt;
                if v2 < -1e-9 {
                    continue;
                }
                let s2 = s + 0.5 * (v + v2) * g.dt;
                let (lo, hi) = swept_cells(s.min(s2), s.max(s2), g.ds);
                let mut ok = true;
                let mut vmax = f64::INFINITY;
                for c in lo..=hi {
                    if c < 0 {
                        ok = false;
                        break;
                    }
                    let cu = c as usize;
                    if cu < g.n_s && g.occupied(cu, k) {
                        ok = false;
                        break;
                    }
                    if cu < cell_limits.len() {
                        vmax = vmax.min(cell_limits[cu]);
                    }
                }
                if !ok || v2 > vmax + 1e-9 {
                    continue;
                }
                recurse(
                    g, cell_limits, accel_set,
                    k + 1, s2, v2, effort + w_a * a * a,
                    s_target, w_t, w_a, best,
                );
            }
        }
        let mut best = None;
        recurse(g, cell_limits, accel_set, 0, 0.0, v0, 0.0, s_target, w_t, w_a, &mut best);
        best
    }

    #[test]
    fn empty_graph_saturates_the_limit() {
        let path = path_stub(61);
        let g = super::super::build_st_graph(&path, &[], 8.0, 0.5);
        let limits = vec![2.25; 61];
        let prof = search_speed_profile(&g, &limits, 0.0, 30.0, &ALPHABET, 1.0, 0.1).unwrap();
        // Accelerates and holds the cap.
        let vmax = prof.points.iter().map(|p| p.v).fold(0.0, f64::max);
        assert!((vmax - 2.25).abs() < 1e-9, "vmax {vmax}");
        assert!(prof.points.windows(2).all(|w| w[1].s >= w[0].s));
    }

    #[test]
    fn blocked_interval_forces_yield() {
        // 10 x 10 grid: cells around s in [2,4) occupied during t-layers 1..6,
        // tight limit so beating the blocker there is impossible.
        let mut g = empty_graph(10, 10);
        for it in 1..6 {
            for is in 4..8 {
                g.mark(is, it);
            }
        }
        let limits = vec![1.5; 10];
        let prof = search_speed_profile(&g, &limits, 0.0, 5.0, &ALPHABET, 1.0, 0.1).unwrap();
        let oracle = enumerate_best_cost(&g, &limits, 0.0, 5.0, &ALPHABET, 1.0, 0.1).unwrap();
        assert_eq!(prof.cost, oracle);
        // It must wait: no point inside the blocked window.
        for p in &prof.points {
            let k = (p.t / 0.5).round() as usize;
            if (1..6).contains(&k) {
                assert!(p.s < 2.0 + 1e-9, "entered blocked band at t={}, s={}", p.t, p.s);
            }
        }
        // And still make progress afterwards.
        assert!(prof.points.last().unwrap().s > 2.0);
    }

    #[test]
    fn fully_blocked_start_is_infeasible() {
        let mut g = empty_graph(10, 6);
        for it in 0..6 {
            for is in 0..10 {
                g.mark(is, it);
            }
        }
        let limits = vec![3.0; 10];
        assert_eq!(
            search_speed_profile(&g, &limits, 0.0, 5.0, &ALPHABET, 1.0, 0.1),
            Err(SearchError::Infeasible)
        );
    }

    #[test]
    fn dp_matches_enumeration_on_random_grids() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for case in 0..30 {
            let n_s = 12;
            let n_t = 10;
            let mut g = empty_graph(n_s, n_t);
            for _ in 0..rng.random_range(0..10) {
                let is = rng.random_range(0..n_s);
                let it = rng.random_range(0..n_t);
                g.mark(is, it);
            }
            // Modest limits keep the enumeration oracle tractable.
            let limits: Vec<f64> = (0..n_s)
                .map(|_| [0.75, 1.5, 2.25][rng.random_range(0..3)])
                .collect();
            let v0 = [0.0, 0.375, 0.75][rng.random_range(0..3)];
            let s_target = 5.0;
            let dp = search_speed_profile(&g, &limits, v0, s_target, &ALPHABET, 1.0, 0.1);
            let oracle = enumerate_best_cost(&g, &limits, v0, s_target, &ALPHABET, 1.0, 0.1);
            match (dp, oracle) {
                (Ok(p), Some(c)) => assert_eq!(p.cost, c, "case {case}"),
                (Err(SearchError::Infeasible), None) => {}
                (dp, oracle) => panic!("case {case}: dp {dp:?} vs oracle {oracle:?}"),
            }
        }
    }
}
