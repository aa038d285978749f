//! Campus shuttle navigation stack with a deterministic scenario simulator.
//!
//! The crate is organized along the planning pipeline:
//!
//! - [`roadmap`]: road-network data model, A* global routing, and the
//!   navigation task manager (stations, unscheduled drop-offs, dwell).
//! - [`world`]: simulated perception — ground-truth agents, noisy
//!   detections, constant-velocity prediction, localization health.
//! - [`frenet`]: arc-length frames over the route window, Cartesian
//!   projection, curvature, and obstacle clearance profiling.
//! - [`conflict`]: swept-corridor vs. predicted-trajectory intersection
//!   checks shared by the behavioral planner and speed planning.
//! - [`behavior`]: lateral-offset candidate evaluation, intersection
//!   stop-line gating, lane-change rate limiting, localization governor.
//! - [`motion`]: speed-limit curves, smoothed path generation, s-t graph
//!   speed search, polynomial QP refinement, kinodynamic iteration.
//! - [`control`]: kinematic bicycle model and coupled LTV-MPC tracking.
//! - [`sim`]: closed-loop scenario execution, event log, and metrics.
//!
//! All randomness is routed through explicit seeded generators so a
//! scenario plus a seed reproduces bit-identical logs.

pub mod behavior;
pub mod conflict;
pub mod control;
pub mod frenet;
pub mod geom;
pub mod motion;
pub mod qp;
pub mod roadmap;
pub mod sim;
pub mod world;

/// Vehicle footprint: 4.35 m x 1.63 m.
pub const EGO_LENGTH: f64 = 4.35;
/// Vehicle footprint width.
pub const EGO_WIDTH: f64 = 1.63;
/// Hard cap on driving speed, 15 km/h.
pub const MAX_SPEED: f64 = 15.0 / 3.6;
