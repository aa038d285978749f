//! Per-tick simulation records, events, and the line-delimited log format
//! whose digest pins determinism.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalStatus {
    GoalReached,
    Timeout,
    SafetyStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Announcement {
    Departing,
    Yielding,
    PedestrianWarning,
    Arriving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Stop,
    DwellStart,
    DwellEnd,
    DropOffRequested,
    RouteTruncated,
    RouteResumed,
    AllBlocked,
    SolverFailure,
    Collision,
    Announce(Announcement),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: f64,
    pub kind: EventKind,
    pub detail: String,
}

/// One controller tick. Field order is stable; the log digest hashes the
/// serialized lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub steer: f64,
    pub accel_cmd: f64,
    pub steer_cmd: f64,
    pub route_s: f64,
    pub d_t: f64,
    pub truncated: bool,
    pub gate_hold: bool,
    pub speed_cap: f64,
    pub phase: String,
    /// Minimum clearance to any pedestrian this tick (meters; large when
    /// none are present).
    pub ped_clearance: f64,
    pub emergency: bool,
    pub announcements: Vec<Announcement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub status: TerminalStatus,
    pub records: Vec<TickRecord>,
    pub events: Vec<SimEvent>,
}

impl SimLog {
    /// Line-delimited serialization: one header line, one line per tick,
    /// one line per event, one status line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::json!({"scenario": self.scenario, "seed": self.seed, "dt": self.dt}).to_string());
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record"));
            out.push('\n');
        }
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event"));
            out.push('\n');
        }
        out.push_str(&serde_json::json!({"status": self.status}).to_string());
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<SimLog, serde_json::Error> {
        let mut lines = text.lines();
        #[derive(Deserialize)]
        struct Header {
            scenario: String,
            seed: u64,
            dt: f64,
        }
        #[derive(Deserialize)]
        struct Footer {
            status: TerminalStatus,
        }
        let header: Header = serde_json::from_str(lines.next().unwrap_or("{}"))?;
        let mut records = Vec::new();
        let mut events = Vec::new();
        let mut status = TerminalStatus::Timeout;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            if let Ok(r) = serde_json::from_str::<TickRecord>(line) {
                records.push(r);
            } else if let Ok(e) = serde_json::from_str::<SimEvent>(line) {
                events.push(e);
            } else {
                let f: Footer = serde_json::from_str(line)?;
                status = f.status;
            }
        }
        Ok(SimLog {
            scenario: header.scenario,
            seed: header.seed,
            dt: header.dt,
            status,
            records,
            events,
        })
    }

    /// Hex digest of the serialized log.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_jsonl().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}
