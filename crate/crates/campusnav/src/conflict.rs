//! Swept-footprint conflict checks between the ego corridor and predicted
//! agent trajectories. Shared by the behavioral dynamic-obstacle cost, the
//! intersection gate, and s-t graph occupancy.

use crate::frenet::FrenetFrame;
use crate::geom::{polygons_intersect, Obb, Vec2};
use crate::world::PredictedTrajectory;

/// Ego travel band along the frame at a fixed lateral offset.
#[derive(Debug, Clone, Copy)]
pub struct Corridor {
    pub d: f64,
    /// Ego half-width plus obstacle inflation.
    pub half_width: f64,
    pub s_from: f64,
    pub s_to: f64,
    pub horizon: f64,
}

/// Earliest predicted intersection with the corridor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conflict {
    pub t: f64,
    pub s: f64,
}

struct Strip {
    s_lo: f64,
    quad: [Vec2; 4],
    center: Vec2,
    radius: f64,
}

/// Corridor band tessellated into quads between frame samples; build once
/// and test many predictions against it.
pub struct CorridorGeometry {
    strips: Vec<Strip>,
    horizon: f64,
}

impl CorridorGeometry {
    pub fn new(frame: &FrenetFrame, corridor: &Corridor) -> Self {
        let w = corridor.half_width;
        let mut strips = Vec::new();
        for pair in frame.samples.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.s <= corridor.s_from || a.s >= corridor.s_to {
                continue;
            }
            let na = Vec2::from_angle(a.heading).perp();
            let nb = Vec2::from_angle(b.heading).perp();
            let pa = a.position + na * corridor.d;
            let pb = b.position + nb * corridor.d;
            let quad = [
                pa + na * w,
                pa - na * w,
                pb - nb * w,
                pb + nb * w,
            ];
            let center = (pa + pb) * 0.5;
            let radius = quad.iter().map(|q| q.dist(center)).fold(0.0, f64::max);
            strips.push(Strip { s_lo: a.s, quad, center, radius });
        }
        CorridorGeometry {
            strips,
            horizon: corridor.horizon,
        }
    }

    /// Earliest prediction step whose agent box overlaps the band.
    ///
    /// Discrete per-step polygon tests; the prediction dt bounds the gap
    /// between checks. Within a step the lowest-s strip wins.
    pub fn first_conflict(&self, pred: &PredictedTrajectory, agent_dims: (f64, f64)) -> Option<Conflict> {
        let (len, wid) = agent_dims;
        let agent_radius = 0.5 * (len * len + wid * wid).sqrt();
        for (k, pos) in pred.positions.iter().enumerate() {
            let t = pred.time_at(k);
            if t > self.horizon + 1e-9 {
                break;
            }
            let obb = Obb::new(*pos, pred.heading, len, wid);
            let corners = obb.corners();
            for strip in &self.strips {
                if strip.center.dist(*pos) > strip.radius + agent_radius {
                    continue;
                }
                if polygons_intersect(&strip.quad, &corners) {
                    return Some(Conflict { t, s: strip.s_lo });
                }
            }
        }
        None
    }
}

/// One-shot conflict query; see [`CorridorGeometry`] for batched use.
pub fn conflict(
    frame: &FrenetFrame,
    corridor: &Corridor,
    pred: &PredictedTrajectory,
    agent_dims: (f64, f64),
) -> Option<Conflict> {
    CorridorGeometry::new(frame, corridor).first_conflict(pred, agent_dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frenet::build_frame;
    use crate::world::{predict_cv, AgentClass, AgentState};

    fn frame30() -> FrenetFrame {
        let route = crate::frenet::tests::straight_route(40.0);
        build_frame(&route, 0.0, 30.0).unwrap()
    }

    fn walker(pos: Vec2, vel: Vec2) -> AgentState {
        AgentState {
            id: 1,
            class: AgentClass::Pedestrian,
            position: pos,
            heading: vel.angle(),
            length: 0.6,
            width: 0.6,
            velocity: vel,
        }
    }

    fn corridor() -> Corridor {
        Corridor {
            d: 0.0,
            half_width: 0.815 + 0.2,
            s_from: 0.0,
            s_to: 30.0,
            horizon: 4.0,
        }
    }

    #[test]
    fn distant_agent_never_conflicts() {
        let frame = frame30();
        let a = walker(Vec2::new(15.0, 10.0), Vec2::new(1.0, 0.0));
        let pred = predict_cv(&a, 4.0, 0.2);
        assert_eq!(conflict(&frame, &corridor(), &pred, (0.6, 0.6)), None);
    }

    #[test]
    fn crossing_agent_conflicts_at_first_intersecting_step() {
        let frame = frame30();
        // Walks in -y at 1 m/s from (10, 3): reaches the corridor edge
        // (y ~ 1.315) at t ~ 1.4 s with a 0.3 half-width footprint.
        let a = walker(Vec2::new(10.0, 3.0), Vec2::new(0.0, -1.0));
        let pred = predict_cv(&a, 4.0, 0.2);
        let c = conflict(&frame, &corridor(), &pred, (0.6, 0.6)).expect("conflict");
        // Oracle: first step whose box touches the band |y| <= 1.015.
        let mut expect_t = None;
        for (k, p) in pred.positions.iter().enumerate() {
            if p.y - 0.3 <= 1.015 {
                expect_t = Some(pred.time_at(k));
                break;
            }
        }
        assert_eq!(Some(c.t), expect_t);
        assert!((c.s - 10.0).abs() <= 1.0, "s = {}", c.s);
    }

    #[test]
    fn zero_horizon_outside_agent_is_none() {
        let frame = frame30();
        let pred = PredictedTrajectory {
            agent_id: 1,
            dt: 0.2,
            horizon: 0.0,
            heading: 0.0,
            positions: vec![Vec2::new(10.0, 5.0)],
        };
        assert_eq!(conflict(&frame, &corridor(), &pred, (0.6, 0.6)), None);
    }

    #[test]
    fn inflation_monotone_conflict() {
        let frame = frame30();
        let a = walker(Vec2::new(12.0, 2.5), Vec2::new(0.0, -0.8));
        let pred = predict_cv(&a, 4.0, 0.2);
        let mut prev_hit = false;
        for w in [0.5, 0.8, 1.1, 1.5, 2.0] {
            let c = Corridor { half_width: w, ..corridor() };
            let hit = conflict(&frame, &c, &pred, (0.6, 0.6)).is_some();
            assert!(!prev_hit || hit, "widening lost a conflict at w={w}");
            prev_hit = hit;
        }
    }

    #[test]
    fn conflict_time_is_minimal() {
        let frame = frame30();
        let a = walker(Vec2::new(8.0, 2.0), Vec2::new(0.0, -0.7));
        let pred = predict_cv(&a, 4.0, 0.2);
        let cor = corridor();
        if let Some(c) = conflict(&frame, &cor, &pred, (0.6, 0.6)) {
            let geom = CorridorGeometry::new(&frame, &cor);
            let k = (c.t / pred.dt).round() as usize;
            for earlier in 0..k {
                let single = PredictedTrajectory {
                    positions: vec![pred.positions[earlier]],
                    horizon: 0.0,
                    ..pred.clone()
                };
                assert!(geom.first_conflict(&single, (0.6, 0.6)).is_none());
            }
        } else {
            panic!("expected a conflict in this fixture");
        }
    }
}
