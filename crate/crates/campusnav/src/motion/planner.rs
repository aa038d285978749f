//! The kinodynamic planning loop: path generation, per-sample limits,
//! s-t search, QP refinement, and the curvature-cap feasibility iteration.

use super::limits::{clearance_speed_limit, curvature_speed_limit};
use super::path_gen::{footprint_clearance, generate_path_from, PathGenOutcome};
use super::speed_qp::{refine_speed_qp, Terminal};
use super::speed_search::search_speed_profile;
use super::st_graph::build_st_graph;
use super::{MotionConfig, Path, PathSample, SpeedLimitConfig, Trajectory, TrajPoint};
use crate::behavior::ReferenceRoute;
use crate::frenet::FrenetFrame;
use crate::geom::Vec2;
use crate::world::PredictedTrajectory;

/// Everything one planning cycle needs.
pub struct PlanInput<'a> {
    pub frame: &'a FrenetFrame,
    pub reference: &'a ReferenceRoute,
    /// Static obstacle polygons (curbs, parked agents).
    pub obstacles: &'a [Vec<Vec2>],
    pub predictions: &'a [(PredictedTrajectory, (f64, f64))],
    /// Obstacle width inflation from the active scenario (m).
    pub inflation: f64,
    /// Current lateral offset of the vehicle in the frame, when known;
    /// the generated path starts there and blends to the reference.
    pub anchor_d: Option<f64>,
    pub v0: f64,
    pub a0: f64,
    pub limits: &'a SpeedLimitConfig,
    pub cfg: &'a MotionConfig,
    /// Optional wall-clock budget. `None` keeps planning deterministic;
    /// the iteration cap still bounds the loop.
    pub budget_ms: Option<f64>,
}

/// Plan a trajectory along the behavioral reference.
///
/// Iterates path generation and speed planning until the combined result
/// is kinodynamically feasible (v^2 |kappa| within the lateral budget and
/// |a| within the longitudinal bound), tightening per-point curvature caps
/// from the current speeds on each failure. Always returns a trajectory;
/// a flagged full stop is the terminal fallback.
pub fn plan_trajectory(input: &PlanInput) -> Trajectory {
    let cfg = input.cfg;
    let start = std::time::Instant::now();
    let mut curv_caps: Option<Vec<f64>> = None;

    for iteration in 0..cfg.max_feasibility_iterations {
        if let Some(budget) = input.budget_ms {
            if start.elapsed().as_secs_f64() * 1e3 > budget {
                break;
            }
        }
        let (path, outcome) = generate_path_from(
            input.frame,
            input.reference.d_t,
            input.anchor_d,
            input.obstacles,
            input.inflation,
            curv_caps.as_deref(),
            cfg,
        );
        let path = if outcome == PathGenOutcome::Converged {
            path
        } else {
            constant_offset_path(input.frame, input.reference.d_t)
        };

        // Per-sample speed limits and the stop target.
        let stop_path_s = input.reference.stop_s.map(|stop_frame| {
            path.samples
                .iter()
                .find(|p| p.frame_s >= stop_frame)
                .map(|p| p.s)
                .unwrap_or_else(|| path.length())
        });
        // Pointwise limits from the cap, curvature, and clearance curves.
        let raw: Vec<f64> = path
            .samples
            .iter()
            .map(|smp| {
                let mut lim = input.reference.speed_cap;
                lim = lim.min(curvature_speed_limit(smp.curvature, input.limits.a_lat_max));
                let clear = footprint_clearance(
                    smp.position,
                    smp.heading,
                    input.obstacles,
                    input.inflation,
                );
                lim.min(clearance_speed_limit(clear, input.limits)).max(0.0)
            })
            .collect();
        // Backward pass: cap each limit so any later, lower limit stays
        // reachable by braking at a_max.
        let braking_pass = |mut v: Vec<f64>| -> Vec<f64> {
            for i in (0..v.len().saturating_sub(1)).rev() {
                let ds = (path.samples[i + 1].s - path.samples[i].s).max(0.0);
                let reachable = (v[i + 1] * v[i + 1] + 2.0 * input.limits.a_max * ds).sqrt();
                v[i] = v[i].min(reachable);
            }
            v
        };
        // The search additionally treats everything past the stop as
        // forbidden; the QP handles the stop through its own constraints.
        let mut search_limits = raw.clone();
        if let Some(stop) = stop_path_s {
            for (j, smp) in path.samples.iter().enumerate() {
                if smp.s > stop + 1e-9 {
                    search_limits[j] = 0.0;
                }
            }
        }
        let search_limits = braking_pass(search_limits);
        let qp_limits = braking_pass(raw);
        let s_target = stop_path_s.unwrap_or_else(|| path.length());

        let graph = build_st_graph(&path, input.predictions, cfg.graph_t, cfg.graph_dt);
        let coarse = match search_speed_profile(
            &graph,
            &search_limits,
            input.v0,
            s_target,
            &cfg.accel_set,
            cfg.search_w_t,
            cfg.search_w_a,
        ) {
            Ok(c) => c,
            Err(_) => return full_stop_trajectory(input, &path),
        };

        // Pin the exact stop only when it is comfortably reachable: the
        // vehicle must be able to get there and shed its speed within the
        // horizon under the QP acceleration bound.
        let terminal = match stop_path_s {
            Some(stop) => {
                let a = input.limits.a_max;
                let v0 = input.v0.max(0.0);
                let t_avail = cfg.graph_t - 1.0;
                let vcap = input.reference.speed_cap.max(v0);
                let v_pk = ((a * t_avail + v0) / 2.0).min(vcap).max(v0);
                let t_acc = (v_pk - v0) / a;
                let t_brk = v_pk / a;
                let mut d_max = (v_pk * v_pk - v0 * v0) / (2.0 * a) + v_pk * v_pk / (2.0 * a);
                if t_avail > t_acc + t_brk {
                    d_max += v_pk * (t_avail - t_acc - t_brk);
                }
                let d_brake = v0 * v0 / (2.0 * a);
                if stop <= d_max - 0.5 && d_brake <= stop + 0.5 {
                    Terminal::Stop { s_stop: stop }
                } else {
                    Terminal::Free
                }
            }
            None => Terminal::Free,
        };
        // Conservative lookup: minimum limit within +-2 cells of s, so the
        // refined profile cannot outrun a sharp limit drop nearby.
        let limit_at = |s: f64| -> f64 {
            let i = ((s + 1e-9) / path.ds).floor() as i64;
            let mut lim = f64::INFINITY;
            for j in (i - 2)..=(i + 2) {
                if j >= 0 && (j as usize) < qp_limits.len() {
                    lim = lim.min(qp_limits[j as usize]);
                }
            }
            if lim.is_finite() {
                lim
            } else {
                input.reference.speed_cap
            }
        };
        let profile = refine_speed_qp(
            &coarse,
            (0.0, input.v0, input.a0),
            &limit_at,
            Some(&graph),
            terminal,
            stop_path_s,
            input.limits.a_max,
            cfg.qp_ref_weight,
            cfg.collocation_dt,
        );

        // Kinodynamic feasibility over the sampled trajectory.
        let traj = sample_trajectory(&path, &profile, cfg, iteration + 1);
        let mut worst_ratio: f64 = 0.0;
        let mut feasible = true;
        for p in &traj.points {
            if p.v * p.v * p.curvature.abs() > input.limits.a_lat_max + 1e-3 {
                feasible = false;
                worst_ratio = worst_ratio.max(p.v * p.v * p.curvature.abs() / input.limits.a_lat_max);
            }
            if p.a.abs() > input.limits.a_max + 1e-3 {
                feasible = false;
            }
        }
        let _ = worst_ratio;
        if feasible {
            return traj;
        }

        // Tighten curvature caps from the speeds the profile actually used.
        let window = input.frame.samples.last().unwrap().s;
        let n_support = ((window / cfg.support_spacing).floor() as usize + 1).max(4);
        let spacing = window / (n_support - 1) as f64;
        let mut caps = curv_caps.take().unwrap_or_else(|| vec![f64::INFINITY; n_support]);
        for p in &traj.points {
            if p.v <= 0.05 {
                continue;
            }
            let needed = input.limits.a_lat_max / (p.v * p.v) * 0.95;
            // Map the trajectory point back to its support index.
            let mut t_guess = 0.0;
            let mut best = f64::INFINITY;
            for smp in &path.samples {
                let d = smp.position.dist(p.position);
                if d < best {
                    best = d;
                    t_guess = smp.frame_s;
                }
            }
            let idx = ((t_guess / spacing).round() as usize).min(n_support - 1);
            if p.curvature.abs() > needed {
                caps[idx] = caps[idx].min(needed);
            }
        }
        curv_caps = Some(caps);
    }
    // No feasible combination within the budget: stop.
    let (path, _) = generate_path_from(
        input.frame,
        input.reference.d_t,
        input.anchor_d,
        input.obstacles,
        input.inflation,
        curv_caps.as_deref(),
        cfg,
    );
    full_stop_trajectory(input, &path)
}

fn constant_offset_path(frame: &FrenetFrame, d: f64) -> Path {
    let mut samples = Vec::with_capacity(frame.samples.len());
    let mut acc = 0.0;
    let mut prev: Option<Vec2> = None;
    for smp in &frame.samples {
        let pos = frame.point_at(smp.s, d);
        if let Some(p) = prev {
            acc += p.dist(pos);
        }
        prev = Some(pos);
        samples.push(PathSample {
            s: acc,
            frame_s: smp.s,
            position: pos,
            heading: smp.heading,
            curvature: smp.curvature,
        });
    }
    Path {
        samples,
        ds: frame.ds,
        converged: false,
    }
}

/// Brake at the longitudinal bound to a standstill along `path`.
fn full_stop_trajectory(input: &PlanInput, path: &Path) -> Trajectory {
    let cfg = input.cfg;
    let a_brake = input.limits.a_max;
    let dt = cfg.control_dt;
    let mut points = Vec::new();
    let mut t = 0.0;
    let mut v = input.v0.max(0.0);
    let mut s = 0.0;
    let horizon = cfg.graph_t;
    while t <= horizon + 1e-9 {
        let smp = path.sample_at(s);
        points.push(TrajPoint {
            t,
            position: smp.position,
            heading: smp.heading,
            v,
            a: if v > 0.0 { -a_brake } else { 0.0 },
            curvature: smp.curvature,
        });
        let v_next = (v - a_brake * dt).max(0.0);
        s += 0.5 * (v + v_next) * dt;
        v = v_next;
        t += dt;
    }
    Trajectory {
        points,
        dt,
        full_stop: true,
        qp_fallback: false,
        path_converged: path.converged,
        feasibility_iterations: 0,
    }
}

fn sample_trajectory(
    path: &Path,
    profile: &super::SpeedProfile,
    cfg: &MotionConfig,
    iterations: usize,
) -> Trajectory {
    let dt = cfg.control_dt;
    let mut points = Vec::new();
    let mut t = 0.0;
    while t <= profile.duration + 1e-9 {
        let (s, v, a, _) = profile.state_at(t);
        let smp = path.sample_at(s);
        points.push(TrajPoint {
            t,
            position: smp.position,
            heading: smp.heading,
            v: v.max(0.0),
            a,
            curvature: smp.curvature,
        });
        t += dt;
    }
    Trajectory {
        points,
        dt,
        full_stop: false,
        qp_fallback: profile.fallback,
        path_converged: path.converged,
        feasibility_iterations: iterations,
    }
}
