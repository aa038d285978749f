//! Deterministic closed-loop scenario simulator: world stepping, the
//! planning pipeline (sense, predict, behavior, motion), MPC tracking,
//! dwell/drop-off task handling, announcements, and the tick log.

pub mod log;
pub mod metrics;
pub mod scenario;

pub use log::{Announcement, EventKind, SimEvent, SimLog, TerminalStatus, TickRecord};
pub use metrics::{compute_metrics, MetricsReport};
pub use scenario::{load_scenario, AgentMotion, ConfigOverlay, Scenario, ScenarioError, ScriptedAgent, SimParams};

use crate::behavior::{
    select_reference, BehaviorError, EvalContext, Forecast, IntersectionContext, PlannerMemory,
    ScenarioConfig,
};
use crate::control::{bicycle_step, mpc_track, ControlCommand, VehicleState};
use crate::frenet::{build_frame, FrenetFrame};
use crate::geom::{polygon_distance, polygons_intersect, Obb, Vec2};
use crate::motion::{plan_trajectory, PlanInput, Trajectory};
use crate::roadmap::{plan_global_route, resume_check, truncate_route, Phase, RoadMap, TaskState};
use crate::world::{predict_cv, sense, AgentClass, AgentState, LocalizationHealth, PredictedTrajectory};
use crate::{EGO_LENGTH, EGO_WIDTH};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Large stand-in for "no pedestrian anywhere near" (the log is JSON, so
/// infinities are avoided).
const CLEAR_FAR: f64 = 999.0;

struct Announcer {
    debounce: f64,
    last: [Option<f64>; 4],
}

impl Announcer {
    fn new(debounce: f64) -> Self {
        Announcer { debounce, last: [None; 4] }
    }

    fn try_emit(&mut self, t: f64, a: Announcement) -> Option<Announcement> {
        let idx = match a {
            Announcement::Departing => 0,
            Announcement::Yielding => 1,
            Announcement::PedestrianWarning => 2,
            Announcement::Arriving => 3,
        };
        match self.last[idx] {
            Some(prev) if t - prev < self.debounce => None,
            _ => {
                self.last[idx] = Some(t);
                Some(a)
            }
        }
    }
}

#[derive(Clone, Copy)]
struct RefInfo {
    d_t: f64,
    truncated: bool,
    gate_hold: bool,
    speed_cap: f64,
}

impl Default for RefInfo {
    fn default() -> Self {
        RefInfo {
            d_t: 0.0,
            truncated: false,
            gate_hold: false,
            speed_cap: 0.0,
        }
    }
}

/// Periodic curb-vertex jitter standing in for swaying tree shade: a
/// deterministic function of time so seeded runs reproduce exactly.
fn jittered_curbs(curbs: &[Vec<Vec2>], amplitude: f64, t: f64) -> Vec<Vec<Vec2>> {
    if amplitude <= 0.0 {
        return curbs.to_vec();
    }
    curbs
        .iter()
        .enumerate()
        .map(|(pi, poly)| {
            poly.iter()
                .enumerate()
                .map(|(vi, p)| {
                    let phase = 1.7 * t + 0.9 * pi as f64 + 0.6 * vi as f64;
                    *p + Vec2::new(phase.sin(), (1.3 * phase).cos()) * amplitude
                })
                .collect()
        })
        .collect()
}

/// Run a scenario to completion. `seed_override` replaces the scenario
/// seed; identical seeds give bit-identical logs.
pub fn run_scenario(
    sc: &Scenario,
    map: &RoadMap,
    seed_override: Option<u64>,
) -> Result<SimLog, ScenarioError> {
    sc.validate(map)?;
    let cfg = &sc.config;
    let sp = &cfg.sim;
    let dt = sp.control_dt;
    let substeps = 5;
    let seed = seed_override.unwrap_or(sc.seed);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut route = plan_global_route(map, sc.ego.edge, sc.ego.s, &sc.goal)
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let mut state = VehicleState::new(route.point_at(0.0), route.heading_at(0.0), sc.ego.v);
    let mut task = TaskState {
        dwell_duration: sp.dwell_duration,
        ..Default::default()
    };
    let mut memory = PlannerMemory::new(0.0);
    let health = LocalizationHealth {
        profile: sc.localization.clone(),
    };

    let mut route_s: f64 = 0.0;
    let mut d_now: f64 = 0.0;
    let mut frame: Option<FrenetFrame> = None;
    let mut trajectory: Option<(Trajectory, f64)> = None;
    let mut last_cmd = ControlCommand { accel: 0.0, steer: 0.0 };
    let mut ref_info = RefInfo::default();
    let mut announcer = Announcer::new(sp.announce_debounce);
    let mut records: Vec<TickRecord> = Vec::new();
    let mut events: Vec<SimEvent> = Vec::new();
    let mut dropoff_consumed = sc.dropoff_time.is_none();
    let mut emergency_active = false;
    let mut collided: Vec<u32> = Vec::new();
    let mut was_dwelling = false;
    let status;
    let mut tick: usize = 0;

    loop {
        let t = tick as f64 * dt;
        if t > sc.duration_cap + 1e-9 {
            status = if emergency_active && state.v <= 0.05 {
                TerminalStatus::SafetyStop
            } else {
                TerminalStatus::Timeout
            };
            break;
        }
        let truth: Vec<AgentState> = sc.agents.iter().filter_map(|a| a.state_at(t)).collect();
        let ego_box = Obb::new(state.position, state.heading, EGO_LENGTH, EGO_WIDTH);
        let ego_poly = ego_box.corners();

        // Safety bookkeeping against ground truth.
        let mut ped_clearance = CLEAR_FAR;
        for a in &truth {
            let poly = a.footprint().corners();
            if a.class == AgentClass::Pedestrian {
                ped_clearance = ped_clearance.min(polygon_distance(&ego_poly, &poly));
            }
            if polygons_intersect(&ego_poly, &poly) && !collided.contains(&a.id) {
                collided.push(a.id);
                events.push(SimEvent {
                    t,
                    kind: EventKind::Collision,
                    detail: format!("agent {}", a.id),
                });
            }
        }

        // Track route progress through the latest frame.
        if let Some(f) = &frame {
            if let Ok((s_loc, d)) = f.project(state.position) {
                route_s = (f.origin_s + s_loc).min(route.length());
                d_now = d;
            }
        }

        // Drop-off button.
        if let Some(t_req) = sc.dropoff_time {
            if !dropoff_consumed && t >= t_req {
                dropoff_consumed = true;
                events.push(SimEvent {
                    t,
                    kind: EventKind::DropOffRequested,
                    detail: String::new(),
                });
                if task.phase == Phase::Driving {
                    let truncated = truncate_route(map, &route, route_s);
                    if truncated.length() < route.length() - 1e-6 {
                        events.push(SimEvent {
                            t,
                            kind: EventKind::RouteTruncated,
                            detail: format!("new destination {}", truncated.destination),
                        });
                        route = truncated;
                        frame = None;
                        trajectory = None;
                    }
                }
            }
        }

        // Task phases.
        let mut departed = false;
        match task.phase {
            Phase::Idle => {
                status = TerminalStatus::GoalReached;
                break;
            }
            Phase::Dwelling => {
                was_dwelling = true;
                let sensed = sense(&truth, &sc.noise, &mut rng);
                if resume_check(&mut task, &sensed, dt, &ego_box) {
                    events.push(SimEvent {
                        t,
                        kind: EventKind::DwellEnd,
                        detail: String::new(),
                    });
                    let at_end = route.length() - route_s <= sp.arrive_tolerance + 1e-6;
                    match (at_end, route.resumption.clone()) {
                        (true, Some(dest)) => {
                            // Resume the original navigation task.
                            let (eid, es) = route.edge_position_at(route_s);
                            match plan_global_route(map, eid, es, &dest) {
                                Ok(r) => {
                                    events.push(SimEvent {
                                        t,
                                        kind: EventKind::RouteResumed,
                                        detail: format!("toward {dest}"),
                                    });
                                    route = r;
                                    route_s = 0.0;
                                    frame = None;
                                    trajectory = None;
                                    memory = PlannerMemory::new(0.0);
                                    task.resume_driving();
                                }
                                Err(_) => task.finish(),
                            }
                        }
                        (true, None) => task.finish(),
                        (false, _) => task.resume_driving(),
                    }
                }
            }
            Phase::Driving => {
                if was_dwelling {
                    departed = true;
                    was_dwelling = false;
                }
                let arrived = route.length() - route_s <= sp.arrive_tolerance && state.v <= 0.05;
                if arrived {
                    events.push(SimEvent {
                        t,
                        kind: EventKind::Stop,
                        detail: format!("at s {route_s:.2}"),
                    });
                    events.push(SimEvent {
                        t,
                        kind: EventKind::DwellStart,
                        detail: route.destination.clone(),
                    });
                    task.begin_dwell();
                    trajectory = None;
                } else if tick % sp.plan_every == 0 {
                    // Planning tick: sense, predict, decide, plan.
                    match build_frame(&route, route_s, sp.window) {
                        Ok(f) => {
                            let (s_loc, d) = f.project(state.position).unwrap_or((0.0, d_now));
                            route_s = (f.origin_s + s_loc).min(route.length());
                            d_now = d;
                            let sensed = sense(&truth, &sc.noise, &mut rng);
                            let mut static_obs =
                                jittered_curbs(&map.curbs, sc.noise.boundary_jitter, t);
                            let mut forecasts: Vec<Forecast> = Vec::new();
                            for a in &sensed {
                                if a.velocity.norm() <= 0.1 {
                                    static_obs.push(a.footprint().corners().to_vec());
                                } else {
                                    forecasts.push(Forecast {
                                        traj: predict_cv(a, sp.prediction_horizon, sp.prediction_dt),
                                        dims: (a.length, a.width),
                                        class: a.class,
                                    });
                                }
                            }
                            let tag = route.tag_at(route_s);
                            let scn = ScenarioConfig::preset(tag, route.speed_limit_at(route_s));
                            let ix_ctx = route.next_intersection(route_s).and_then(|ix| {
                                let local = ix.stop_line_s - route_s;
                                if local <= f.s_max {
                                    Some(IntersectionContext {
                                        stop_line_s: local,
                                        areas: ix.areas.clone(),
                                    })
                                } else {
                                    None
                                }
                            });
                            // The candidate grid presumes the vehicle sits
                            // within the band; clamp transient overshoot.
                            let d_0 = d_now.clamp(
                                -(scn.band + cfg.behavior.spacing),
                                scn.band + cfg.behavior.spacing,
                            );
                            let ctx = EvalContext {
                                frame: &f,
                                obstacles: &static_obs,
                                forecasts: &forecasts,
                                cfg: &cfg.behavior,
                                scn: &scn,
                                d_0,
                            };
                            let selected = select_reference(
                                &ctx,
                                &mut memory,
                                ix_ctx.as_ref(),
                                &task,
                                health.error_at(t),
                                t,
                            );
                            match selected {
                                Ok(mut reference) => {
                                    // Stop at the route end (station) when
                                    // it enters the window.
                                    let end_local = route.length() - route_s;
                                    if end_local <= f.s_max + 1e-9 {
                                        reference.stop_s = Some(match reference.stop_s {
                                            Some(s) => s.min(end_local),
                                            None => end_local,
                                        });
                                    }
                                    let preds: Vec<(PredictedTrajectory, (f64, f64))> = forecasts
                                        .iter()
                                        .map(|fc| (fc.traj.clone(), fc.dims))
                                        .collect();
                                    let plan = plan_trajectory(&PlanInput {
                                        frame: &f,
                                        reference: &reference,
                                        obstacles: &static_obs,
                                        predictions: &preds,
                                        inflation: scn.inflation,
                                        anchor_d: Some(d_0),
                                        v0: state.v,
                                        a0: last_cmd.accel,
                                        limits: &cfg.limits,
                                        cfg: &cfg.motion,
                                        budget_ms: None,
                                    });
                                    emergency_active = plan.full_stop;
                                    trajectory = Some((plan, t));
                                    ref_info = RefInfo {
                                        d_t: reference.d_t,
                                        truncated: reference.truncated,
                                        gate_hold: reference.stop_line_hold,
                                        speed_cap: reference.speed_cap,
                                    };
                                }
                                Err(BehaviorError::AllBlocked) => {
                                    if !emergency_active {
                                        events.push(SimEvent {
                                            t,
                                            kind: EventKind::AllBlocked,
                                            detail: String::new(),
                                        });
                                    }
                                    emergency_active = true;
                                    trajectory = None;
                                }
                            }
                            frame = Some(f);
                        }
                        Err(_) => {
                            // Window empty at the route end; keep the last
                            // trajectory, which already terminates here.
                        }
                    }
                }
            }
        }

        // Control. A phase that just changed (dwell started or finished)
        // falls through to the braking arm this tick.
        let mut cmd_emergency = false;
        let raw_cmd = match (&trajectory, task.phase) {
            (Some((traj, t0)), Phase::Driving) => match mpc_track(&state, traj, &cfg.mpc, t - t0) {
                Ok(c) => c,
                Err(e) => {
                    events.push(SimEvent {
                        t,
                        kind: EventKind::SolverFailure,
                        detail: e.to_string(),
                    });
                    emergency_active = true;
                    cmd_emergency = true;
                    ControlCommand {
                        accel: -1.0,
                        steer: state.steer,
                    }
                }
            },
            (None, Phase::Driving) if emergency_active => {
                cmd_emergency = true;
                ControlCommand {
                    accel: -1.0,
                    steer: state.steer,
                }
            }
            _ => ControlCommand {
                accel: -0.5,
                steer: state.steer,
            },
        };
        let cmd = if cmd_emergency {
            raw_cmd.clamped(state.steer, dt)
        } else {
            // Comfort shaping: command-jerk limit plus a low-speed brake
            // blend so the standstill clamp never shows up as jerk.
            let accel = raw_cmd
                .accel
                .clamp(
                    last_cmd.accel - sp.jerk_limit * dt,
                    last_cmd.accel + sp.jerk_limit * dt,
                )
                .max(-(0.1 + 2.0 * state.v));
            ControlCommand { accel, steer: raw_cmd.steer }.clamped(state.steer, dt)
        };

        // Announcements.
        let mut anns = Vec::new();
        if departed {
            if let Some(a) = announcer.try_emit(t, Announcement::Departing) {
                anns.push(a);
            }
        }
        if ref_info.gate_hold && task.phase == Phase::Driving {
            if let Some(a) = announcer.try_emit(t, Announcement::Yielding) {
                anns.push(a);
            }
        }
        if ped_clearance < cfg.limits.delta_mdn && state.v > 0.5 {
            if let Some(a) = announcer.try_emit(t, Announcement::PedestrianWarning) {
                anns.push(a);
            }
        }
        if route.length() - route_s < 5.0 && task.phase == Phase::Driving {
            if let Some(a) = announcer.try_emit(t, Announcement::Arriving) {
                anns.push(a);
            }
        }
        for a in &anns {
            events.push(SimEvent {
                t,
                kind: EventKind::Announce(*a),
                detail: String::new(),
            });
        }

        records.push(TickRecord {
            t,
            x: state.position.x,
            y: state.position.y,
            heading: state.heading,
            v: state.v,
            steer: state.steer,
            accel_cmd: cmd.accel,
            steer_cmd: cmd.steer,
            route_s,
            d_t: ref_info.d_t,
            truncated: ref_info.truncated,
            gate_hold: ref_info.gate_hold,
            speed_cap: ref_info.speed_cap,
            phase: format!("{:?}", task.phase),
            ped_clearance,
            emergency: emergency_active || cmd_emergency,
            announcements: anns,
        });

        // Integrate the vehicle.
        for _ in 0..substeps {
            state = bicycle_step(&state, &cmd, dt / substeps as f64);
        }
        last_cmd = cmd;
        tick += 1;
    }

    Ok(SimLog {
        scenario: sc.name.clone(),
        seed,
        dt,
        status,
        records,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadmap::RoadMap;

    fn straight_map_json(len: f64) -> String {
        serde_json::json!({
            "version": 1,
            "nodes": [{"id": 0, "x": 0.0, "y": 0.0}, {"id": 1, "x": len, "y": 0.0}],
            "edges": [{
                "id": 0, "from": 0, "to": 1,
                "polyline": [{"x": 0.0, "y": 0.0}, {"x": len, "y": 0.0}],
                "length": len, "tag": "Common", "speed_limit": 3.0,
                "half_width_left": 3.0, "half_width_right": 3.0
            }],
            "stations": [{"name": "end", "edge": 0, "s": len - 5.0}]
        })
        .to_string()
    }

    fn basic_scenario() -> (Scenario, RoadMap) {
        let map = RoadMap::load(&straight_map_json(80.0)).unwrap();
        let sc = Scenario {
            version: 1,
            name: "unit-straight".into(),
            map: "unused".into(),
            seed: 11,
            duration_cap: 90.0,
            ego: scenario::EgoStart { edge: 0, s: 0.0, v: 0.0 },
            goal: "end".into(),
            agents: vec![],
            noise: Default::default(),
            localization: vec![],
            dropoff_time: None,
            config: Default::default(),
        };
        (sc, map)
    }

    #[test]
    fn straightaway_reaches_goal() {
        let (sc, map) = basic_scenario();
        let log = run_scenario(&sc, &map, None).unwrap();
        assert_eq!(log.status, TerminalStatus::GoalReached, "events: {:?}", log.events);
        let last = log.records.last().unwrap();
        assert!(last.route_s >= 75.0 - 1.0, "final s {}", last.route_s);
        // Dwell happened at the destination before going idle.
        assert!(log
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::DwellStart)));
    }

    #[test]
    fn identical_seeds_identical_digests() {
        let (sc, map) = basic_scenario();
        let a = run_scenario(&sc, &map, Some(5)).unwrap();
        let b = run_scenario(&sc, &map, Some(5)).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn comfort_envelope_on_free_road() {
        let (sc, map) = basic_scenario();
        let log = run_scenario(&sc, &map, None).unwrap();
        let m = compute_metrics(&log);
        assert!(m.max_accel <= 2.0 + 1e-6, "max accel {}", m.max_accel);
        assert!(m.min_accel >= -2.0 - 1e-6, "min accel {}", m.min_accel);
        assert!(m.max_jerk <= 2.0 + 1e-6, "max jerk {}", m.max_jerk);
        assert!(m.min_jerk >= -2.0 - 1e-6, "min jerk {}", m.min_jerk);
        assert_eq!(m.collisions, 0);
    }
}
