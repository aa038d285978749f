//! s-t occupancy grid: where and when predicted agents block the path.

use super::Path;
use crate::geom::{polygons_intersect, Obb};
use crate::world::PredictedTrajectory;
use crate::{EGO_LENGTH, EGO_WIDTH};

/// Grid over path arc length (cells of `ds`, one per path sample) and time
/// layers of `dt`. A cell is occupied when the ego footprint placed at the
/// cell's sample intersects any predicted agent box whose step time falls
/// in the layer.
#[derive(Debug, Clone)]
pub struct StGraph {
    pub ds: f64,
    pub dt: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub s_end: f64,
    occupied: Vec<bool>,
}

impl StGraph {
    pub fn empty(n_s: usize, n_t: usize, ds: f64, dt: f64, s_end: f64) -> Self {
        StGraph {
            ds,
            dt,
            n_s,
            n_t,
            s_end,
            occupied: vec![false; n_s * n_t],
        }
    }

    pub fn occupied(&self, i_s: usize, i_t: usize) -> bool {
        if i_s >= self.n_s || i_t >= self.n_t {
            return false;
        }
        self.occupied[i_t * self.n_s + i_s]
    }

    pub fn mark(&mut self, i_s: usize, i_t: usize) {
        if i_s < self.n_s && i_t < self.n_t {
            self.occupied[i_t * self.n_s + i_s] = true;
        }
    }

    pub fn occupied_cell_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }
}

/// Project predicted trajectories onto the path corridor over horizon `t_end`.
pub fn build_st_graph(
    path: &Path,
    predictions: &[(PredictedTrajectory, (f64, f64))],
    t_end: f64,
    dt: f64,
) -> StGraph {
    assert!(t_end > 0.0 && dt > 0.0);
    let n_t = (t_end / dt - 1e-9).ceil() as usize;
    let n_s = path.samples.len();
    let mut g = StGraph::empty(n_s, n_t, path.ds, dt, path.length());
    let ego_radius = 0.5 * (EGO_LENGTH * EGO_LENGTH + EGO_WIDTH * EGO_WIDTH).sqrt();

    for (pred, dims) in predictions {
        let (alen, awid) = *dims;
        let agent_radius = 0.5 * (alen * alen + awid * awid).sqrt();
        for (k, pos) in pred.positions.iter().enumerate() {
            let t = pred.time_at(k);
            if t >= t_end {
                break;
            }
            let i_t = ((t + 1e-9) / dt).floor() as usize;
            let agent = Obb::new(*pos, pred.heading, alen, awid).corners();
            for (j, smp) in path.samples.iter().enumerate() {
                if smp.position.dist(*pos) > ego_radius + agent_radius {
                    continue;
                }
                let ego = Obb::new(smp.position, smp.heading, EGO_LENGTH, EGO_WIDTH).corners();
                if polygons_intersect(&ego, &agent) {
                    g.mark(j, i_t);
                }
            }
        }
    }
    g
}

/// Contiguous free s-interval of layer `i_t` containing cell `i_s`,
/// as (inclusive) cell index bounds. Used by the QP corridor constraint.
pub fn free_run(g: &StGraph, i_s: usize, i_t: usize) -> (usize, usize) {
    let i_s = i_s.min(g.n_s.saturating_sub(1));
    let mut lo = i_s;
    while lo > 0 && !g.occupied(lo - 1, i_t) {
        lo -= 1;
    }
    let mut hi = i_s;
    while hi + 1 < g.n_s && !g.occupied(hi + 1, i_t) {
        hi += 1;
    }
    (lo, hi)
}
