//! Motion planning: speed-limit curves, smoothed path generation around
//! the behavioral reference, s-t graph speed search, piecewise-polynomial
//! QP refinement, and the kinodynamic feasibility iteration that ties them
//! together.

mod limits;
mod path_gen;
mod planner;
mod speed_qp;
mod speed_search;
mod st_graph;

pub use limits::{clearance_speed_limit, curvature_speed_limit};
pub use path_gen::{generate_path, PathGenOutcome};
pub use planner::{plan_trajectory, PlanInput};
pub use speed_qp::{refine_speed_qp, Terminal};
pub use speed_search::{search_speed_profile, CoarsePoint, CoarseProfile, SearchError};
pub use st_graph::{build_st_graph, StGraph};

use crate::geom::Vec2;
use crate::MAX_SPEED;
use serde::{Deserialize, Serialize};

/// Speed-limit shaping parameters: curvature bound and the piecewise
/// clearance-to-speed curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedLimitConfig {
    /// Max lateral acceleration (m/s^2).
    pub a_lat_max: f64,
    /// Clearance thresholds (m), strictly increasing.
    pub delta_min: f64,
    pub delta_mdn: f64,
    pub delta_max: f64,
    /// Speed tiers (m/s), non-decreasing.
    pub v_min: f64,
    pub v_mdn: f64,
    pub v_max: f64,
    /// Longitudinal acceleration bound for refined profiles (m/s^2).
    pub a_max: f64,
}

impl Default for SpeedLimitConfig {
    fn default() -> Self {
        SpeedLimitConfig {
            a_lat_max: 1.0,
            delta_min: 0.3,
            delta_mdn: 1.0,
            delta_max: 2.0,
            v_min: 0.5,
            v_mdn: 1.5,
            v_max: MAX_SPEED,
            a_max: 1.2,
        }
    }
}

/// Knobs of the motion planner proper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    /// Path support-point spacing (m).
    pub support_spacing: f64,
    /// Second-difference (smoothness prior) weight.
    pub smooth_weight: f64,
    /// Pull toward the behavioral offset.
    pub ref_weight: f64,
    /// Obstacle hinge weight.
    pub obstacle_weight: f64,
    /// Curvature-cap hinge weight.
    pub curvature_weight: f64,
    /// Clearance buffer the path tries to keep (m).
    pub safety_buffer: f64,
    pub max_solver_iterations: usize,
    /// s-t graph horizon (s) and resolutions.
    pub graph_t: f64,
    pub graph_dt: f64,
    pub graph_ds: f64,
    /// Discrete acceleration alphabet for the coarse search (m/s^2).
    pub accel_set: Vec<f64>,
    /// Coarse-search cost weights: terminal shortfall and accel effort.
    pub search_w_t: f64,
    pub search_w_a: f64,
    /// QP refinement: coarse-tracking weight and collocation step (s).
    pub qp_ref_weight: f64,
    pub collocation_dt: f64,
    pub max_feasibility_iterations: usize,
    /// Trajectory sampling step (s); the controller consumes this.
    pub control_dt: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            support_spacing: 1.0,
            smooth_weight: 10.0,
            ref_weight: 1.0,
            obstacle_weight: 30.0,
            curvature_weight: 30.0,
            safety_buffer: 0.4,
            max_solver_iterations: 30,
            graph_t: 8.0,
            graph_dt: 0.5,
            graph_ds: 0.5,
            accel_set: vec![-1.5, -0.75, 0.0, 0.75, 1.5],
            search_w_t: 1.0,
            search_w_a: 0.1,
            qp_ref_weight: 1.0,
            collocation_dt: 0.1,
            max_feasibility_iterations: 5,
            control_dt: 0.1,
        }
    }
}

/// One spatial path sample. `s` is arc length along the generated path;
/// `frame_s` is the arc position on the reference frame it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub s: f64,
    pub frame_s: f64,
    pub position: Vec2,
    pub heading: f64,
    pub curvature: f64,
}

/// Spatial path in the local window.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub samples: Vec<PathSample>,
    pub ds: f64,
    pub converged: bool,
}

impl Path {
    pub fn length(&self) -> f64 {
        self.samples.last().map(|p| p.s).unwrap_or(0.0)
    }

    /// Interpolated pose/curvature at path arc `s`.
    pub fn sample_at(&self, s: f64) -> PathSample {
        let last = self.samples.len() - 1;
        let s = s.clamp(0.0, self.length());
        let mut i = ((s / self.ds).floor() as usize).min(last.saturating_sub(1));
        // Uniform spacing is approximate after reparameterization; walk to
        // the bracketing pair.
        while i + 1 < last && self.samples[i + 1].s < s {
            i += 1;
        }
        while i > 0 && self.samples[i].s > s {
            i -= 1;
        }
        let a = &self.samples[i];
        let b = &self.samples[(i + 1).min(last)];
        let span = (b.s - a.s).max(1e-12);
        let t = ((s - a.s) / span).clamp(0.0, 1.0);
        PathSample {
            s,
            frame_s: a.frame_s + (b.frame_s - a.frame_s) * t,
            position: a.position + (b.position - a.position) * t,
            heading: a.heading + crate::geom::wrap_angle(b.heading - a.heading) * t,
            curvature: a.curvature + (b.curvature - a.curvature) * t,
        }
    }
}

/// Piecewise-cubic time law t -> s, parameterized by per-segment constant
/// jerk so C1/C2 continuity at the knots holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    pub segments: Vec<CubicSegment>,
    pub duration: f64,
    /// Set when the QP fell back to interpolating the coarse profile.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicSegment {
    pub t0: f64,
    pub duration: f64,
    pub s0: f64,
    pub v0: f64,
    pub a0: f64,
    pub jerk: f64,
}

impl CubicSegment {
    pub fn state_at(&self, tau: f64) -> (f64, f64, f64) {
        let s = self.s0 + self.v0 * tau + 0.5 * self.a0 * tau * tau + self.jerk * tau.powi(3) / 6.0;
        let v = self.v0 + self.a0 * tau + 0.5 * self.jerk * tau * tau;
        let a = self.a0 + self.jerk * tau;
        (s, v, a)
    }
}

impl SpeedProfile {
    /// (s, v, a, jerk) at time `t`, clamped to the profile span.
    pub fn state_at(&self, t: f64) -> (f64, f64, f64, f64) {
        let t = t.clamp(0.0, self.duration);
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|sg| t >= sg.t0 - 1e-12)
            .unwrap_or(&self.segments[0]);
        let tau = (t - seg.t0).clamp(0.0, seg.duration);
        let (s, v, a) = seg.state_at(tau);
        (s, v, a, seg.jerk)
    }
}

/// Timestamped kinematic states consumed by the tracking controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajPoint>,
    pub dt: f64,
    /// Emergency stop emitted instead of a planned profile.
    pub full_stop: bool,
    /// Diagnostics from the pipeline.
    pub qp_fallback: bool,
    pub path_converged: bool,
    pub feasibility_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajPoint {
    pub t: f64,
    pub position: Vec2,
    pub heading: f64,
    pub v: f64,
    pub a: f64,
    pub curvature: f64,
}

impl Trajectory {
    /// Reference state at absolute time `t` (clamped to the ends).
    pub fn state_at(&self, t: f64) -> TrajPoint {
        if self.points.is_empty() {
            panic!("empty trajectory");
        }
        let t0 = self.points[0].t;
        let rel = ((t - t0) / self.dt).clamp(0.0, (self.points.len() - 1) as f64);
        let i = rel.floor() as usize;
        let j = (i + 1).min(self.points.len() - 1);
        let frac = rel - i as f64;
        let a = &self.points[i];
        let b = &self.points[j];
        TrajPoint {
            t,
            position: a.position + (b.position - a.position) * frac,
            heading: a.heading + crate::geom::wrap_angle(b.heading - a.heading) * frac,
            v: a.v + (b.v - a.v) * frac,
            a: a.a + (b.a - a.a) * frac,
            curvature: a.curvature + (b.curvature - a.curvature) * frac,
        }
    }
}
