//! Simulated perception: ground-truth agents, seeded detection noise,
//! constant-velocity prediction, and the scripted localization-health
//! signal that feeds the behavioral speed governor.

use crate::geom::{Obb, Vec2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentClass {
    Pedestrian,
    Cyclist,
    Vehicle,
}

/// Dynamic obstacle with an oriented-box footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: u32,
    pub class: AgentClass,
    pub position: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub velocity: Vec2,
}

impl AgentState {
    pub fn footprint(&self) -> Obb {
        Obb::new(self.position, self.heading, self.length, self.width)
    }
}

/// Constant-velocity forecast; one position per step including t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrajectory {
    pub agent_id: u32,
    pub dt: f64,
    pub horizon: f64,
    pub heading: f64,
    pub positions: Vec<Vec2>,
}

impl PredictedTrajectory {
    pub fn time_at(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// Detection-noise model standing in for the perception stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionNoise {
    /// Position standard deviation (m).
    #[serde(default)]
    pub position_sigma: f64,
    /// Velocity standard deviation (m/s).
    #[serde(default)]
    pub velocity_sigma: f64,
    /// Independent per-agent dropout probability.
    #[serde(default)]
    pub dropout: f64,
    /// Curb-vertex jitter amplitude emulating swaying tree shade (m).
    #[serde(default)]
    pub boundary_jitter: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        DetectionNoise {
            position_sigma: 0.0,
            velocity_sigma: 0.0,
            dropout: 0.0,
            boundary_jitter: 0.0,
        }
    }
}

/// Perturb ground truth with seeded Gaussian noise and Bernoulli dropout.
/// The generator is owned by the caller, so a fixed seed reproduces the
/// exact detection stream.
pub fn sense<R: Rng>(truth: &[AgentState], noise: &DetectionNoise, rng: &mut R) -> Vec<AgentState> {
    let pos_n = Normal::new(0.0, noise.position_sigma.max(0.0)).unwrap();
    let vel_n = Normal::new(0.0, noise.velocity_sigma.max(0.0)).unwrap();
    let mut out = Vec::with_capacity(truth.len());
    for agent in truth {
        // Draw every sample regardless of dropout so the stream stays
        // aligned across agents when one blinks out.
        let dx = pos_n.sample(rng);
        let dy = pos_n.sample(rng);
        let dvx = vel_n.sample(rng);
        let dvy = vel_n.sample(rng);
        let dropped = noise.dropout > 0.0 && rng.random::<f64>() < noise.dropout;
        if dropped {
            continue;
        }
        let mut a = agent.clone();
        a.position = a.position + Vec2::new(dx, dy);
        a.velocity = a.velocity + Vec2::new(dvx, dvy);
        out.push(a);
    }
    out
}

/// Constant-velocity forecast over `horizon` at step `dt`.
///
/// position(k) = position(0) + velocity * k * dt, heading held.
pub fn predict_cv(agent: &AgentState, horizon: f64, dt: f64) -> PredictedTrajectory {
    assert!(dt > 0.0 && horizon >= dt);
    let steps = ((horizon / dt) + 1e-9).floor() as usize;
    let mut positions = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        positions.push(agent.position + agent.velocity * (k as f64 * dt));
    }
    PredictedTrajectory {
        agent_id: agent.id,
        dt,
        horizon,
        heading: agent.heading,
        positions,
    }
}

/// Scripted localization-error signal: piecewise-linear breakpoints with
/// constant extrapolation beyond the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationHealth {
    /// (time s, error m) breakpoints, times strictly increasing.
    pub profile: Vec<(f64, f64)>,
}

impl Default for LocalizationHealth {
    fn default() -> Self {
        LocalizationHealth { profile: vec![] }
    }
}

impl LocalizationHealth {
    pub fn error_at(&self, t: f64) -> f64 {
        let p = &self.profile;
        if p.is_empty() {
            return 0.0;
        }
        if t <= p[0].0 {
            return p[0].1;
        }
        for w in p.windows(2) {
            let (t0, e0) = w[0];
            let (t1, e1) = w[1];
            if t <= t1 {
                let a = (t - t0) / (t1 - t0);
                return e0 + a * (e1 - e0);
            }
        }
        p.last().unwrap().1
    }
}
