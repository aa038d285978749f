//! Behavioral planner: lateral-offset candidates per scenario, the
//! four-term cost, intersection stop-line gating, lane-change rate
//! limiting, and the localization-error speed governor.

use crate::conflict::{Corridor, CorridorGeometry};
use crate::frenet::{clearance_profile, FrenetFrame, CLEARANCE_CAP};
use crate::geom::{point_in_polygon, Vec2};
use crate::roadmap::{Phase, ScenarioTag, TaskState};
use crate::world::{AgentClass, PredictedTrajectory};
use crate::{EGO_LENGTH, EGO_WIDTH, MAX_SPEED};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cost weights and planner-loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    pub w_s: f64,
    pub w_d1: f64,
    pub w_d2: f64,
    pub w_o1: f64,
    pub w_o2: f64,
    /// Large penalty for predicted dynamic conflicts and blocked starts.
    pub dyn_penalty: f64,
    /// Candidate grid spacing (m).
    pub spacing: f64,
    /// Lane-change threshold d_l (m).
    pub lane_change_threshold: f64,
    /// Planning frequency f_p (Hz); lane-change commits are separated by
    /// at least 1/f_p seconds.
    pub planning_frequency: f64,
    /// Sampling window s_max (m).
    pub window: f64,
    pub rate_limiting: bool,
    /// Margin subtracted from s_m for a truncation stop (m).
    pub stop_margin: f64,
    /// Localization governor: full speed below e_lo, crawl above e_hi.
    pub governor_e_lo: f64,
    pub governor_e_hi: f64,
    pub governor_v_crawl: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            w_s: 1.0,
            w_d1: 0.5,
            w_d2: 0.3,
            w_o1: 0.5,
            w_o2: 1.0,
            dyn_penalty: 1e3,
            spacing: 0.25,
            lane_change_threshold: 0.5,
            planning_frequency: 2.0,
            window: 30.0,
            rate_limiting: true,
            stop_margin: 0.5,
            governor_e_lo: 0.2,
            governor_e_hi: 0.6,
            governor_v_crawl: 0.8,
        }
    }
}

/// Per-scenario sampling band, inflation, and speed cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub tag: ScenarioTag,
    /// Obstacle width inflation w_o (m).
    pub inflation: f64,
    /// Reference speed cap for this scenario (m/s).
    pub speed_cap: f64,
    /// Offset band half-width (m).
    pub band: f64,
    pub lane_change_allowed: bool,
}

impl ScenarioConfig {
    /// Preset per scenario tag, given the edge's reference speed limit.
    pub fn preset(tag: ScenarioTag, route_speed: f64) -> Self {
        match tag {
            ScenarioTag::Common => ScenarioConfig {
                tag,
                inflation: 0.2,
                speed_cap: route_speed,
                band: 1.0,
                lane_change_allowed: true,
            },
            ScenarioTag::Parking => ScenarioConfig {
                tag,
                inflation: 0.5,
                speed_cap: 0.5 * route_speed,
                band: 1.0,
                lane_change_allowed: true,
            },
            ScenarioTag::Intersection => ScenarioConfig {
                tag,
                inflation: 0.2,
                speed_cap: route_speed,
                band: 0.25,
                lane_change_allowed: false,
            },
        }
    }
}

/// A predicted agent with footprint dimensions.
#[derive(Debug, Clone)]
pub struct Forecast {
    pub traj: PredictedTrajectory,
    pub dims: (f64, f64),
    pub class: AgentClass,
}

/// Cost breakdown for one candidate offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEvaluation {
    pub d: f64,
    pub s_m: f64,
    pub c_avg: f64,
    pub c_min: f64,
    pub j_s: f64,
    pub j_d: f64,
    pub j_o: f64,
    pub j_dyn: f64,
    pub j_total: f64,
}

/// Inputs shared by all candidate evaluations of one planning tick.
pub struct EvalContext<'a> {
    pub frame: &'a FrenetFrame,
    pub obstacles: &'a [Vec<Vec2>],
    pub forecasts: &'a [Forecast],
    pub cfg: &'a BehaviorConfig,
    pub scn: &'a ScenarioConfig,
    /// Current lateral offset of the vehicle.
    pub d_0: f64,
}

/// Observation areas and stop line of the upcoming intersection, with the
/// stop line expressed in frame-local arc length.
#[derive(Debug, Clone)]
pub struct IntersectionContext {
    pub stop_line_s: f64,
    pub areas: Vec<Vec<Vec2>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Proceed,
    StopAtLine,
}

/// Behavioral output: the frame, chosen offset, stop/truncation data, and
/// the effective speed cap after the governor.
#[derive(Debug, Clone)]
pub struct ReferenceRoute {
    pub d_t: f64,
    /// Truncation flag: the window is blocked at `stop_s`.
    pub truncated: bool,
    /// Frame-local stop position when truncated or held at a stop line.
    pub stop_s: Option<f64>,
    pub stop_line_hold: bool,
    pub speed_cap: f64,
    pub evaluation: CandidateEvaluation,
}

/// Lane-change commit memory carried across planning ticks.
#[derive(Debug, Clone, Copy)]
pub struct PlannerMemory {
    pub committed_d: f64,
    pub last_change_t: f64,
}

impl PlannerMemory {
    pub fn new(initial_d: f64) -> Self {
        PlannerMemory {
            committed_d: initial_d,
            last_change_t: f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BehaviorError {
    #[error("every candidate offset is blocked at its first sample")]
    AllBlocked,
}

/// Candidate offsets: a uniform grid over the scenario band, restricted to
/// `|d - d_0| <= d_l` when lane changes are disallowed, with the snapped
/// current offset always present.
pub fn candidates(scn: &ScenarioConfig, cfg: &BehaviorConfig, d_0: f64) -> Vec<f64> {
    debug_assert!(d_0.abs() <= scn.band + cfg.spacing + 1e-9);
    let spacing = cfg.spacing.max(1e-6);
    let k_max = (scn.band / spacing + 1e-9).floor() as i64;
    let snap = ((d_0 / spacing).round() * spacing).clamp(-scn.band, scn.band);
    let mut out: Vec<f64> = Vec::new();
    for k in -k_max..=k_max {
        let d = k as f64 * spacing;
        if !scn.lane_change_allowed && (d - d_0).abs() > cfg.lane_change_threshold + 1e-9 {
            continue;
        }
        out.push(d);
    }
    if !out.iter().any(|d| (d - snap).abs() < 1e-9) {
        out.push(snap);
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// Evaluate one candidate offset. See the module docs for the cost terms.
pub fn evaluate(d: f64, ctx: &EvalContext) -> CandidateEvaluation {
    let cfg = ctx.cfg;
    let prof = clearance_profile(
        ctx.frame,
        d,
        ctx.obstacles,
        ctx.scn.inflation,
        (EGO_LENGTH, EGO_WIDTH),
    );
    let s_max = ctx.frame.s_max;
    let j_s = cfg.w_s * (1.0 - prof.s_m / s_max);
    let j_d = cfg.w_d1 * (d - ctx.d_0).abs() + cfg.w_d2 * d.abs();
    let j_o = if prof.c_min <= 0.0 {
        // Blocked at the very start: keep the candidate comparable through
        // J_s instead of an infinite cost.
        cfg.dyn_penalty
    } else {
        cfg.w_o1 / prof.c_avg.min(CLEARANCE_CAP) + cfg.w_o2 / prof.c_min.min(CLEARANCE_CAP)
    };
    let j_dyn = if has_dynamic_conflict(ctx, d) {
        cfg.dyn_penalty
    } else {
        0.0
    };
    let j_total = j_s + j_d + j_o + j_dyn;
    CandidateEvaluation {
        d,
        s_m: prof.s_m,
        c_avg: prof.c_avg,
        c_min: prof.c_min,
        j_s,
        j_d,
        j_o,
        j_dyn,
        j_total,
    }
}

fn has_dynamic_conflict(ctx: &EvalContext, d: f64) -> bool {
    if ctx.forecasts.is_empty() {
        return false;
    }
    let horizon = ctx
        .forecasts
        .iter()
        .map(|f| f.traj.horizon)
        .fold(0.0, f64::max);
    let geom = CorridorGeometry::new(
        ctx.frame,
        &Corridor {
            d,
            half_width: 0.5 * EGO_WIDTH + ctx.scn.inflation,
            s_from: 0.0,
            s_to: ctx.frame.s_max,
            horizon,
        },
    );
    ctx.forecasts
        .iter()
        .any(|f| geom.first_conflict(&f.traj, f.dims).is_some())
}

/// Pick the reference route for this tick.
///
/// Applies the argmin with deterministic tie-breaks (smaller |d|, then
/// smaller d), the lane-change rate limiter, the truncation flag, the
/// intersection gate, and the localization governor.
pub fn select_reference(
    ctx: &EvalContext,
    memory: &mut PlannerMemory,
    intersection: Option<&IntersectionContext>,
    task: &TaskState,
    localization_error: f64,
    t: f64,
) -> Result<ReferenceRoute, BehaviorError> {
    let cands = candidates(ctx.scn, ctx.cfg, ctx.d_0);
    let evals: Vec<CandidateEvaluation> = cands.iter().map(|d| evaluate(*d, ctx)).collect();
    if evals.iter().all(|e| e.s_m <= 0.0) {
        return Err(BehaviorError::AllBlocked);
    }
    let mut best = &evals[0];
    for e in &evals[1..] {
        let better = e.j_total < best.j_total
            || (e.j_total == best.j_total
                && (e.d.abs() < best.d.abs()
                    || (e.d.abs() == best.d.abs() && e.d < best.d)));
        if better {
            best = e;
        }
    }

    // Lane-change rate limiting: a jump beyond d_l from the committed
    // offset only goes through when 1/f_p has elapsed since the last one.
    let mut chosen = *best;
    if ctx.cfg.rate_limiting {
        let jump = (best.d - memory.committed_d).abs();
        if jump > ctx.cfg.lane_change_threshold + 1e-9 {
            let min_gap = 1.0 / ctx.cfg.planning_frequency;
            if t - memory.last_change_t + 1e-9 < min_gap {
                chosen = evaluate(memory.committed_d, ctx);
            } else {
                memory.last_change_t = t;
                memory.committed_d = best.d;
            }
        } else {
            memory.committed_d = best.d;
        }
    } else {
        memory.committed_d = best.d;
    }

    let truncated = chosen.s_m < ctx.frame.s_max - 1e-9;
    let mut stop_s = if truncated {
        Some((chosen.s_m - ctx.cfg.stop_margin).max(0.0))
    } else {
        None
    };

    // Intersection gate.
    let mut stop_line_hold = false;
    if let Some(ix) = intersection {
        if ctx.scn.tag == ScenarioTag::Intersection && ix.stop_line_s >= 0.0 {
            if intersection_gate(ctx, ix, chosen.d) == GateDecision::StopAtLine {
                stop_line_hold = true;
                stop_s = Some(match stop_s {
                    Some(s) => s.min(ix.stop_line_s),
                    None => ix.stop_line_s,
                });
            }
        }
    }

    let governor_cap = governor(localization_error, ctx.cfg);
    let mut speed_cap = ctx.scn.speed_cap.min(governor_cap);
    if task.phase != Phase::Driving {
        speed_cap = 0.0;
    }
    Ok(ReferenceRoute {
        d_t: chosen.d,
        truncated,
        stop_s,
        stop_line_hold,
        speed_cap,
        evaluation: chosen,
    })
}

/// Stop-at-line decision: any agent currently inside an observation area
/// whose forecast crosses the ego corridor within the horizon.
pub fn intersection_gate(
    ctx: &EvalContext,
    ix: &IntersectionContext,
    d_t: f64,
) -> GateDecision {
    let horizon = ctx
        .forecasts
        .iter()
        .map(|f| f.traj.horizon)
        .fold(0.0, f64::max);
    let geom = CorridorGeometry::new(
        ctx.frame,
        &Corridor {
            d: d_t,
            half_width: 0.5 * EGO_WIDTH + ctx.scn.inflation,
            s_from: 0.0,
            s_to: ctx.frame.s_max,
            horizon,
        },
    );
    for f in ctx.forecasts {
        let here = match f.traj.positions.first() {
            Some(p) => *p,
            None => continue,
        };
        let inside = ix.areas.iter().any(|poly| point_in_polygon(here, poly));
        if inside && geom.first_conflict(&f.traj, f.dims).is_some() {
            return GateDecision::StopAtLine;
        }
    }
    GateDecision::Proceed
}

/// Localization-error speed governor: full speed below `e_lo`, crawl above
/// `e_hi`, linear in between. Non-increasing in the error.
pub fn governor(e: f64, cfg: &BehaviorConfig) -> f64 {
    debug_assert!(e >= 0.0);
    if e <= cfg.governor_e_lo {
        MAX_SPEED
    } else if e >= cfg.governor_e_hi {
        cfg.governor_v_crawl
    } else {
        let t = (e - cfg.governor_e_lo) / (cfg.governor_e_hi - cfg.governor_e_lo);
        MAX_SPEED + t * (cfg.governor_v_crawl - MAX_SPEED)
    }
}
