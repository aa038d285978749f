//! Scenario file format: map reference, ego start, scripted agents, noise,
//! localization profile, and configuration overlays.

use crate::behavior::BehaviorConfig;
use crate::control::MpcParams;
use crate::geom::Vec2;
use crate::motion::{MotionConfig, SpeedLimitConfig};
use crate::roadmap::{EdgeId, RoadMap};
use crate::world::{AgentClass, AgentState, DetectionNoise};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoStart {
    pub edge: EdgeId,
    pub s: f64,
    #[serde(default)]
    pub v: f64,
}

/// Scripted motion of a traffic agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentMotion {
    Stationary,
    ConstantVelocity { velocity: Vec2 },
    /// Piecewise-linear schedule of (time, position) waypoints; the agent
    /// holds the last position afterwards.
    Waypoints { points: Vec<(f64, Vec2)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAgent {
    pub id: u32,
    pub class: AgentClass,
    /// Footprint length x width (m).
    pub dims: (f64, f64),
    pub position: Vec2,
    #[serde(default)]
    pub heading: f64,
    pub motion: AgentMotion,
    /// The agent only exists from this time on.
    #[serde(default)]
    pub appears_at: f64,
}

impl ScriptedAgent {
    /// Ground-truth state at time `t`, or None before `appears_at`.
    pub fn state_at(&self, t: f64) -> Option<AgentState> {
        if t < self.appears_at {
            return None;
        }
        let tau = t - self.appears_at;
        let (position, velocity) = match &self.motion {
            AgentMotion::Stationary => (self.position, Vec2::ZERO),
            AgentMotion::ConstantVelocity { velocity } => {
                (self.position + *velocity * tau, *velocity)
            }
            AgentMotion::Waypoints { points } => waypoint_state(self.position, points, tau),
        };
        let heading = if velocity.norm() > 1e-9 {
            velocity.angle()
        } else {
            self.heading
        };
        Some(AgentState {
            id: self.id,
            class: self.class,
            position,
            heading,
            length: self.dims.0,
            width: self.dims.1,
            velocity,
        })
    }
}

fn waypoint_state(start: Vec2, points: &[(f64, Vec2)], tau: f64) -> (Vec2, Vec2) {
    let mut prev = (0.0, start);
    for (t, p) in points {
        if tau <= *t {
            let span = (*t - prev.0).max(1e-9);
            let f = ((tau - prev.0) / span).clamp(0.0, 1.0);
            let pos = prev.1 + (*p - prev.1) * f;
            let vel = (*p - prev.1) * (1.0 / span);
            return (pos, vel);
        }
        prev = (*t, *p);
    }
    (prev.1, Vec2::ZERO)
}

/// Per-run parameters of the simulation loop itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Controller period (s); the log ticks at this rate.
    pub control_dt: f64,
    /// Motion replanning period in controller ticks (2 -> 5 Hz).
    pub plan_every: usize,
    /// Frame window length (m).
    pub window: f64,
    pub prediction_horizon: f64,
    pub prediction_dt: f64,
    pub dwell_duration: f64,
    /// Arrival tolerance around a station (m).
    pub arrive_tolerance: f64,
    /// Command jerk limit outside emergencies (m/s^3).
    pub jerk_limit: f64,
    /// Announcement debounce (s).
    pub announce_debounce: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            control_dt: 0.1,
            plan_every: 2,
            window: 30.0,
            prediction_horizon: 4.0,
            prediction_dt: 0.2,
            dwell_duration: 8.0,
            arrive_tolerance: 0.6,
            jerk_limit: 1.9,
            announce_debounce: 3.0,
        }
    }
}

/// Configuration overlay carried by the scenario file; every section has
/// full defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigOverlay {
    pub behavior: BehaviorConfig,
    pub limits: SpeedLimitConfig,
    pub motion: MotionConfig,
    pub mpc: MpcParams,
    pub sim: SimParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    /// Map file path, relative to the scenario file.
    pub map: String,
    pub seed: u64,
    pub duration_cap: f64,
    pub ego: EgoStart,
    pub goal: String,
    #[serde(default)]
    pub agents: Vec<ScriptedAgent>,
    #[serde(default)]
    pub noise: DetectionNoise,
    /// Localization-error breakpoints (time s, error m).
    #[serde(default)]
    pub localization: Vec<(f64, f64)>,
    /// Drop-off button press time, if any.
    #[serde(default)]
    pub dropoff_time: Option<f64>,
    #[serde(default)]
    pub config: ConfigOverlay,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported scenario version {0}")]
    Version(u32),
    #[error("scenario invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Map(#[from] crate::roadmap::MapError),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario = serde_json::from_str(text)?;
        if sc.version != 1 {
            return Err(ScenarioError::Version(sc.version));
        }
        if sc.duration_cap <= 0.0 {
            return Err(ScenarioError::Invalid("duration cap must be positive".into()));
        }
        Ok(sc)
    }

    /// Check references against the loaded map.
    pub fn validate(&self, map: &RoadMap) -> Result<(), ScenarioError> {
        if map.edge(self.ego.edge).is_none() {
            return Err(ScenarioError::Invalid(format!(
                "ego start references unknown edge {}",
                self.ego.edge
            )));
        }
        let e = map.edge(self.ego.edge).unwrap();
        if self.ego.s < 0.0 || self.ego.s > e.length {
            return Err(ScenarioError::Invalid(format!(
                "ego start s {} outside edge {} length {}",
                self.ego.s, self.ego.edge, e.length
            )));
        }
        if map.station(&self.goal).is_none() {
            return Err(ScenarioError::Invalid(format!(
                "goal station '{}' not in map",
                self.goal
            )));
        }
        Ok(())
    }
}

/// Load a scenario and its map, resolving the map path relative to the
/// scenario file location.
pub fn load_scenario(path: &Path) -> Result<(Scenario, RoadMap), ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let sc = Scenario::from_json(&text)?;
    let map_path = path.parent().unwrap_or(Path::new(".")).join(&sc.map);
    let map_text = std::fs::read_to_string(&map_path)?;
    let map = RoadMap::load(&map_text)?;
    sc.validate(&map)?;
    Ok((sc, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waypoint_motion_interpolates_and_holds() {
        let agent = ScriptedAgent {
            id: 1,
            class: AgentClass::Pedestrian,
            dims: (0.5, 0.5),
            position: Vec2::ZERO,
            heading: 0.0,
            motion: AgentMotion::Waypoints {
                points: vec![(2.0, Vec2::new(2.0, 0.0)), (4.0, Vec2::new(2.0, 2.0))],
            },
            appears_at: 0.0,
        };
        let mid = agent.state_at(1.0).unwrap();
        assert_eq!(mid.position, Vec2::new(1.0, 0.0));
        assert_eq!(mid.velocity, Vec2::new(1.0, 0.0));
        let later = agent.state_at(3.0).unwrap();
        assert_eq!(later.position, Vec2::new(2.0, 1.0));
        let end = agent.state_at(99.0).unwrap();
        assert_eq!(end.position, Vec2::new(2.0, 2.0));
        assert_eq!(end.velocity, Vec2::ZERO);
    }

    #[test]
    fn agent_absent_before_appearance() {
        let agent = ScriptedAgent {
            id: 1,
            class: AgentClass::Cyclist,
            dims: (1.8, 0.6),
            position: Vec2::ZERO,
            heading: 0.0,
            motion: AgentMotion::Stationary,
            appears_at: 5.0,
        };
        assert!(agent.state_at(4.9).is_none());
        assert!(agent.state_at(5.0).is_some());
    }
}
