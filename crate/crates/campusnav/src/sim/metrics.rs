//! Operational metrics computed from a simulation log: speed statistics,
//! acceleration/jerk extrema, hard-braking events, and takeover proxies.

use super::log::{EventKind, SimLog};
use serde::{Deserialize, Serialize};

/// Hard-braking threshold (m/s^2): an event is a maximal contiguous run of
/// ticks with acceleration below this.
pub const BRAKE_THRESHOLD: f64 = -1.0;
/// A tick counts as driving when faster than this (m/s).
pub const DRIVING_SPEED: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub distance_km: f64,
    pub max_speed_kmh: f64,
    pub avg_speed_kmh: f64,
    /// Share of driving time at or above 9 km/h, percent.
    pub pct_at_least_9_kmh: f64,
    pub min_accel: f64,
    pub max_accel: f64,
    pub min_jerk: f64,
    pub max_jerk: f64,
    pub brake_events: usize,
    pub km_per_brake_event: Option<f64>,
    pub takeover_proxies: usize,
    pub km_per_takeover: Option<f64>,
    pub min_pedestrian_clearance: f64,
    pub collisions: usize,
}

/// Derive the report from logged speeds at the control period.
///
/// Acceleration and jerk come from finite differences of the logged v.
/// Emergency-flagged ticks still contribute to the extrema; callers that
/// need the comfort envelope excluding emergencies filter on the flag.
pub fn compute_metrics(log: &SimLog) -> MetricsReport {
    assert!(!log.records.is_empty(), "log must not be empty");
    let dt = log.dt;
    let n = log.records.len();
    let distance: f64 = log.records.iter().map(|r| r.v * dt).sum();
    let distance_km = distance / 1000.0;

    let driving: Vec<&super::log::TickRecord> = log
        .records
        .iter()
        .filter(|r| r.v > DRIVING_SPEED)
        .collect();
    let max_speed = log.records.iter().map(|r| r.v).fold(0.0, f64::max);
    let avg_speed = if driving.is_empty() {
        0.0
    } else {
        driving.iter().map(|r| r.v).sum::<f64>() / driving.len() as f64
    };
    let fast = driving.iter().filter(|r| r.v >= 9.0 / 3.6).count();
    let pct_fast = if driving.is_empty() {
        0.0
    } else {
        100.0 * fast as f64 / driving.len() as f64
    };

    let accel: Vec<f64> = (1..n)
        .map(|i| (log.records[i].v - log.records[i - 1].v) / dt)
        .collect();
    let jerk: Vec<f64> = (1..accel.len())
        .map(|i| (accel[i] - accel[i - 1]) / dt)
        .collect();
    let fold_min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let fold_max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (min_accel, max_accel) = if accel.is_empty() {
        (0.0, 0.0)
    } else {
        (fold_min(&accel), fold_max(&accel))
    };
    let (min_jerk, max_jerk) = if jerk.is_empty() {
        (0.0, 0.0)
    } else {
        (fold_min(&jerk), fold_max(&jerk))
    };

    // Maximal contiguous runs below the braking threshold.
    let mut brake_events = 0;
    let mut in_run = false;
    for a in &accel {
        if *a < BRAKE_THRESHOLD {
            if !in_run {
                brake_events += 1;
                in_run = true;
            }
        } else {
            in_run = false;
        }
    }

    let takeover_proxies = log
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::AllBlocked | EventKind::SolverFailure))
        .count();
    let collisions = log
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Collision))
        .count();
    let min_ped = log
        .records
        .iter()
        .map(|r| r.ped_clearance)
        .fold(f64::INFINITY, f64::min);

    let per = |count: usize| {
        if count == 0 {
            None
        } else {
            Some(distance_km / count as f64)
        }
    };
    MetricsReport {
        distance_km,
        max_speed_kmh: max_speed * 3.6,
        avg_speed_kmh: avg_speed * 3.6,
        pct_at_least_9_kmh: pct_fast,
        min_accel,
        max_accel,
        min_jerk,
        max_jerk,
        brake_events,
        km_per_brake_event: per(brake_events),
        takeover_proxies,
        km_per_takeover: per(takeover_proxies),
        min_pedestrian_clearance: min_ped,
        collisions,
    }
}

impl MetricsReport {
    /// Human-readable table mirroring the shuttle performance summary.
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.2} km/event"),
            None => "no events".to_string(),
        };
        format!(
            "distance            {:.3} km\n\
             max speed           {:.2} km/h\n\
             avg speed           {:.2} km/h\n\
             pct speed >= 9 km/h {:.1} %\n\
             min acc             {:.2} m/s^2\n\
             max acc             {:.2} m/s^2\n\
             min jerk            {:.2} m/s^3\n\
             max jerk            {:.2} m/s^3\n\
             BT (acc < -1 m/s^2) {} ({})\n\
             takeover proxies    {} ({})\n\
             min ped clearance   {:.2} m\n\
             collisions          {}",
            self.distance_km,
            self.max_speed_kmh,
            self.avg_speed_kmh,
            self.pct_at_least_9_kmh,
            self.min_accel,
            self.max_accel,
            self.min_jerk,
            self.max_jerk,
            self.brake_events,
            opt(self.km_per_brake_event),
            self.takeover_proxies,
            opt(self.km_per_takeover),
            self.min_pedestrian_clearance,
            self.collisions,
        )
    }
}
