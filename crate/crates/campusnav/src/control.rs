//! Trajectory tracking: shared kinematic bicycle integrator and a coupled
//! lateral/longitudinal MPC that optimizes steering and acceleration
//! together over a receding horizon.

use crate::geom::{wrap_angle, Vec2};
use crate::motion::Trajectory;
use crate::qp::{self, QpProblem, QpSettings, QpStatus};
use nalgebra::{DMatrix, DVector, Matrix4, Matrix4x2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STEER_MAX: f64 = 0.6;
pub const STEER_RATE_MAX: f64 = 0.5;
pub const ACCEL_CMD_MAX: f64 = 2.0;

/// Kinematic bicycle state. `steer` is the current front-wheel angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Vec2,
    pub heading: f64,
    pub v: f64,
    pub steer: f64,
    pub wheelbase: f64,
}

impl VehicleState {
    pub fn new(position: Vec2, heading: f64, v: f64) -> Self {
        VehicleState {
            position,
            heading,
            v,
            steer: 0.0,
            wheelbase: 2.5,
        }
    }
}

/// Commanded acceleration and steering angle for one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand {
    pub accel: f64,
    pub steer: f64,
}

impl ControlCommand {
    /// Enforce the command invariants against the previous steer angle.
    pub fn clamped(self, prev_steer: f64, dt: f64) -> ControlCommand {
        let steer = self
            .steer
            .clamp(prev_steer - STEER_RATE_MAX * dt, prev_steer + STEER_RATE_MAX * dt)
            .clamp(-STEER_MAX, STEER_MAX);
        ControlCommand {
            accel: self.accel.clamp(-ACCEL_CMD_MAX, ACCEL_CMD_MAX),
            steer,
        }
    }
}

/// MPC horizon and stage weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcParams {
    pub horizon: usize,
    pub dt: f64,
    pub w_lat: f64,
    pub w_lon: f64,
    pub w_heading: f64,
    pub w_speed: f64,
    pub w_accel: f64,
    pub w_steer: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        MpcParams {
            horizon: 20,
            dt: 0.1,
            w_lat: 5.0,
            w_lon: 0.5,
            w_heading: 2.0,
            w_speed: 2.5,
            w_accel: 0.1,
            w_steer: 0.1,
        }
    }
}

#[derive(Debug, Error)]
#[error("MPC solve failed: {0}")]
pub struct SolverFailure(pub &'static str);

/// One RK4 step of the kinematic bicycle. Speed clamps at zero: a braking
/// command never drives the model backwards.
pub fn bicycle_step(x: &VehicleState, u: &ControlCommand, dt: f64) -> VehicleState {
    debug_assert!(dt > 0.0 && dt <= 0.1 + 1e-12);
    let steer = u.steer.clamp(-STEER_MAX, STEER_MAX);
    // Split the step at the standstill time when braking through zero.
    if u.accel < 0.0 && x.v + u.accel * dt < 0.0 {
        let t_stop = -x.v / u.accel;
        let stopped = if t_stop > 1e-12 {
            rk4(x, u.accel, steer, t_stop)
        } else {
            *x
        };
        return VehicleState {
            v: 0.0,
            steer,
            ..stopped
        };
    }
    let mut out = rk4(x, u.accel, steer, dt);
    out.v = out.v.max(0.0);
    out.steer = steer;
    out
}

fn rk4(x: &VehicleState, accel: f64, steer: f64, dt: f64) -> VehicleState {
    let f = |s: &[f64; 4]| -> [f64; 4] {
        let (_, _, th, v) = (s[0], s[1], s[2], s[3]);
        [
            v * th.cos(),
            v * th.sin(),
            v * steer.tan() / x.wheelbase,
            accel,
        ]
    };
    let s0 = [x.position.x, x.position.y, x.heading, x.v];
    let k1 = f(&s0);
    let mid1 = add(&s0, &k1, dt / 2.0);
    let k2 = f(&mid1);
    let mid2 = add(&s0, &k2, dt / 2.0);
    let k3 = f(&mid2);
    let end = add(&s0, &k3, dt);
    let k4 = f(&end);
    let mut s = s0;
    for i in 0..4 {
        s[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    VehicleState {
        position: Vec2::new(s[0], s[1]),
        heading: s[2],
        v: s[3],
        steer,
        wheelbase: x.wheelbase,
    }
}

fn add(s: &[f64; 4], k: &[f64; 4], h: f64) -> [f64; 4] {
    [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]]
}

struct Reference {
    position: Vec2,
    heading: f64,
    v: f64,
    accel: f64,
    steer: f64,
}

/// Track `traj` from state `x` at time `t_now`.
///
/// Successive linearization about the reference: numeric Jacobians of the
/// RK4 step, a condensed QP over the input sequence with command bounds
/// and steering-rate constraints, two refinement passes. Returns the first
/// input of the optimized sequence, clamped to the command invariants.
pub fn mpc_track(
    x: &VehicleState,
    traj: &Trajectory,
    p: &MpcParams,
    t_now: f64,
) -> Result<ControlCommand, SolverFailure> {
    let n = p.horizon;
    assert!(n >= 2);
    let refs: Vec<Reference> = (0..=n)
        .map(|i| {
            let tp = traj.state_at(t_now + i as f64 * p.dt);
            Reference {
                position: tp.position,
                heading: tp.heading,
                v: tp.v,
                accel: tp.a,
                steer: (x.wheelbase * tp.curvature).atan().clamp(-STEER_MAX, STEER_MAX),
            }
        })
        .collect();

    // Nominal input sequence seeded from the reference.
    let mut u_nom: Vec<(f64, f64)> = (0..n).map(|i| (refs[i].accel, refs[i].steer)).collect();

    let mut first = ControlCommand {
        accel: u_nom[0].0,
        steer: u_nom[0].1,
    };
    for _pass in 0..2 {
        // Roll out the nominal sequence.
        let mut states = Vec::with_capacity(n + 1);
        states.push(*x);
        for u in u_nom.iter().take(n) {
            let cmd = ControlCommand { accel: u.0, steer: u.1 };
            let next = bicycle_step(states.last().unwrap(), &cmd, p.dt);
            states.push(next);
        }

        // Numeric linearization around each (state, input).
        let mut a_mats = Vec::with_capacity(n);
        let mut b_mats = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b) = linearize(&states[i], u_nom[i], p.dt);
            a_mats.push(a);
            b_mats.push(b);
        }

        // Condensed sensitivities: e_k = err_nom_k + sum_j M[k][j] du_j.
        // M[k][j] = A_{k-1} ... A_{j+1} B_j for j < k.
        let nv = 2 * n;
        let mut p_mat = DMatrix::zeros(nv, nv);
        let mut q_vec = DVector::zeros(nv);
        // Effort on absolute inputs.
        for i in 0..n {
            p_mat[(2 * i, 2 * i)] += 2.0 * p.w_accel;
            p_mat[(2 * i + 1, 2 * i + 1)] += 2.0 * p.w_steer;
            q_vec[2 * i] += 2.0 * p.w_accel * u_nom[i].0;
            q_vec[2 * i + 1] += 2.0 * p.w_steer * u_nom[i].1;
        }
        // Stage costs via forward sensitivity accumulation.
        let mut sens: Vec<Matrix4x2<f64>> = Vec::new(); // d x_k / d u_j
        for k in 1..=n {
            // Update sensitivities: new list for x_k.
            let mut next_sens = Vec::with_capacity(k);
            for (j, s) in sens.iter().enumerate() {
                let _ = j;
                next_sens.push(a_mats[k - 1] * s);
            }
            next_sens.push(b_mats[k - 1]);
            sens = next_sens;

            // Error of the nominal rollout at stage k, in world coords,
            // with the heading wrapped.
            let st = &states[k];
            let rf = &refs[k];
            let err = Vector4::new(
                st.position.x - rf.position.x,
                st.position.y - rf.position.y,
                wrap_angle(st.heading - rf.heading),
                st.v - rf.v,
            );
            // Rotated position weights: longitudinal/lateral in the
            // reference heading frame.
            let (c, s_h) = (rf.heading.cos(), rf.heading.sin());
            let mut q_k = Matrix4::zeros();
            q_k[(0, 0)] = p.w_lon * c * c + p.w_lat * s_h * s_h;
            q_k[(0, 1)] = (p.w_lon - p.w_lat) * c * s_h;
            q_k[(1, 0)] = q_k[(0, 1)];
            q_k[(1, 1)] = p.w_lon * s_h * s_h + p.w_lat * c * c;
            q_k[(2, 2)] = p.w_heading;
            q_k[(3, 3)] = p.w_speed;

            for (j, sj) in sens.iter().enumerate() {
                let qsj = q_k * sj;
                let contrib_q = 2.0 * sj.transpose() * q_k * err;
                for r in 0..2 {
                    q_vec[2 * j + r] += contrib_q[r];
                }
                for (j2, sj2) in sens.iter().enumerate() {
                    let block = 2.0 * sj2.transpose() * qsj;
                    for r in 0..2 {
                        for cc in 0..2 {
                            p_mat[(2 * j2 + r, 2 * j + cc)] += block[(r, cc)];
                        }
                    }
                }
            }
        }

        // Constraints on absolute inputs and steering rate.
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for i in 0..n {
            let mut r = DVector::zeros(nv);
            r[2 * i] = 1.0;
            rows.push(r);
            lo.push(-ACCEL_CMD_MAX - u_nom[i].0);
            hi.push(ACCEL_CMD_MAX - u_nom[i].0);
            let mut r = DVector::zeros(nv);
            r[2 * i + 1] = 1.0;
            rows.push(r);
            lo.push(-STEER_MAX - u_nom[i].1);
            hi.push(STEER_MAX - u_nom[i].1);
            // Rate: |steer_i - steer_{i-1}| <= rate * dt.
            let bound = STEER_RATE_MAX * p.dt;
            let mut r = DVector::zeros(nv);
            r[2 * i + 1] = 1.0;
            let prev_nom = if i == 0 { x.steer } else { u_nom[i - 1].1 };
            if i > 0 {
                r[2 * (i - 1) + 1] = -1.0;
            }
            let base = u_nom[i].1 - prev_nom;
            rows.push(r);
            lo.push(-bound - base);
            hi.push(bound - base);
        }
        let m = rows.len();
        let mut a_con = DMatrix::zeros(m, nv);
        for (i, r) in rows.iter().enumerate() {
            a_con.set_row(i, &r.transpose());
        }
        let prob = QpProblem {
            p: p_mat,
            q: q_vec,
            a: a_con,
            l: DVector::from_vec(lo),
            u: DVector::from_vec(hi),
        };

        // Fast path: unconstrained minimizer, kept when feasible.
        let du = {
            let reg = &prob.p + DMatrix::identity(nv, nv) * 1e-9;
            let unc = reg
                .cholesky()
                .map(|ch| ch.solve(&(-&prob.q)))
                .ok_or(SolverFailure("normal equations not positive definite"))?;
            let ax = &prob.a * &unc;
            let feasible = (0..prob.a.nrows())
                .all(|i| ax[i] >= prob.l[i] - 1e-9 && ax[i] <= prob.u[i] + 1e-9);
            if feasible {
                unc
            } else {
                let settings = QpSettings {
                    max_iterations: 2000,
                    tolerance: 1e-7,
                    ..Default::default()
                };
                let sol = qp::solve(&prob, &settings);
                match sol.status {
                    QpStatus::Infeasible => return Err(SolverFailure("constraint set empty")),
                    _ => sol.x,
                }
            }
        };
        for i in 0..n {
            u_nom[i].0 += du[2 * i];
            u_nom[i].1 += du[2 * i + 1];
        }
        first = ControlCommand {
            accel: u_nom[0].0,
            steer: u_nom[0].1,
        };
    }
    Ok(first.clamped(x.steer, p.dt))
}

fn linearize(x: &VehicleState, u: (f64, f64), dt: f64) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let h = 1e-5;
    let base_cmd = ControlCommand { accel: u.0, steer: u.1 };
    let pack = |s: &VehicleState| Vector4::new(s.position.x, s.position.y, s.heading, s.v);
    let mut a = Matrix4::zeros();
    for c in 0..4 {
        let mut plus = *x;
        let mut minus = *x;
        match c {
            0 => {
                plus.position.x += h;
                minus.position.x -= h;
            }
            1 => {
                plus.position.y += h;
                minus.position.y -= h;
            }
            2 => {
                plus.heading += h;
                minus.heading -= h;
            }
            _ => {
                plus.v += h;
                minus.v -= h;
            }
        }
        let fp = pack(&bicycle_step(&plus, &base_cmd, dt));
        let fm = pack(&bicycle_step(&minus, &base_cmd, dt));
        for r in 0..4 {
            a[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    let mut b = Matrix4x2::zeros();
    for c in 0..2 {
        let mut up = base_cmd;
        let mut um = base_cmd;
        match c {
            0 => {
                up.accel += h;
                um.accel -= h;
            }
            _ => {
                up.steer += h;
                um.steer -= h;
            }
        }
        let fp = pack(&bicycle_step(x, &up, dt));
        let fm = pack(&bicycle_step(x, &um, dt));
        for r in 0..4 {
            b[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::TrajPoint;

    fn straight_traj(v: f64, duration: f64) -> Trajectory {
        let dt = 0.1;
        let n = (duration / dt).round() as usize;
        let points = (0..=n)
            .map(|i| TrajPoint {
                t: i as f64 * dt,
                position: Vec2::new(v * i as f64 * dt, 0.0),
                heading: 0.0,
                v,
                a: 0.0,
                curvature: 0.0,
            })
            .collect();
        Trajectory {
            points,
            dt,
            full_stop: false,
            qp_fallback: false,
            path_converged: true,
            feasibility_iterations: 1,
        }
    }

    #[test]
    fn stationary_state_stays_put() {
        let x = VehicleState::new(Vec2::ZERO, 0.3, 0.0);
        let u = ControlCommand { accel: 0.0, steer: 0.1 };
        let next = bicycle_step(&x, &u, 0.1);
        assert_eq!(next.position, Vec2::ZERO);
        assert_eq!(next.heading, 0.3);
        assert_eq!(next.v, 0.0);
    }

    #[test]
    fn straight_rollout_advances_one_meter_per_second() {
        let mut x = VehicleState::new(Vec2::ZERO, 0.0, 1.0);
        let u = ControlCommand { accel: 0.0, steer: 0.0 };
        for _ in 0..10 {
            x = bicycle_step(&x, &u, 0.1);
        }
        assert!((x.position.x - 1.0).abs() < 1e-9);
        assert!(x.position.y.abs() < 1e-12);
    }

    #[test]
    fn constant_steer_traces_the_analytic_circle() {
        let steer: f64 = 0.3;
        let v = 2.0;
        let mut x = VehicleState::new(Vec2::ZERO, 0.0, v);
        let radius = x.wheelbase / steer.tan();
        let u = ControlCommand { accel: 0.0, steer };
        // One full revolution.
        let period = 2.0 * std::f64::consts::PI * radius / v;
        let steps = (period / 0.02).round() as usize;
        let mut max_err: f64 = 0.0;
        let center = Vec2::new(0.0, radius);
        for _ in 0..steps {
            x = bicycle_step(&x, &u, 0.02);
            max_err = max_err.max((x.position.dist(center) - radius).abs());
        }
        assert!(max_err / radius < 1e-3, "radius error {}", max_err / radius);
        assert!(x.position.norm() < 0.05, "did not close the loop: {:?}", x.position);
    }

    #[test]
    fn braking_through_zero_stops() {
        let x = VehicleState::new(Vec2::ZERO, 0.0, 0.05);
        let u = ControlCommand { accel: -1.0, steer: 0.0 };
        let next = bicycle_step(&x, &u, 0.1);
        assert_eq!(next.v, 0.0);
        assert!(next.position.x > 0.0 && next.position.x < 0.0125 + 1e-9);
    }

    #[test]
    fn zero_error_fixed_point_is_quiet() {
        let traj = straight_traj(2.0, 10.0);
        let x = VehicleState::new(Vec2::new(2.0, 0.0), 0.0, 2.0);
        let cmd = mpc_track(&x, &traj, &MpcParams::default(), 1.0).unwrap();
        assert!(cmd.steer.abs() <= 1e-3, "steer {}", cmd.steer);
        assert!(cmd.accel.abs() <= 1e-3, "accel {}", cmd.accel);
    }

    #[test]
    fn left_offset_steers_right() {
        let traj = straight_traj(2.0, 10.0);
        let mut x = VehicleState::new(Vec2::new(2.0, 0.5), 0.0, 2.0);
        // Allow the rate limiter a few cycles to act.
        let p = MpcParams::default();
        let mut cmd = ControlCommand { accel: 0.0, steer: 0.0 };
        for i in 0..3 {
            cmd = mpc_track(&x, &traj, &p, 1.0 + 0.1 * i as f64).unwrap();
            x.steer = cmd.steer;
        }
        assert!(cmd.steer < 0.0, "expected right steer, got {}", cmd.steer);
    }

    #[test]
    fn commands_respect_invariants() {
        let traj = straight_traj(3.0, 10.0);
        // Start far off and slow: the controller wants big corrections.
        let x = VehicleState::new(Vec2::new(0.0, 2.5), 0.8, 0.0);
        let cmd = mpc_track(&x, &traj, &MpcParams::default(), 0.0).unwrap();
        assert!(cmd.accel.abs() <= ACCEL_CMD_MAX + 1e-12);
        assert!(cmd.steer.abs() <= STEER_MAX + 1e-12);
        assert!((cmd.steer - x.steer).abs() <= STEER_RATE_MAX * 0.1 + 1e-12);
    }

    #[test]
    fn mpc_is_deterministic() {
        let traj = straight_traj(2.0, 10.0);
        let x = VehicleState::new(Vec2::new(1.0, 0.3), 0.05, 1.8);
        let a = mpc_track(&x, &traj, &MpcParams::default(), 0.5).unwrap();
        let b = mpc_track(&x, &traj, &MpcParams::default(), 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lateral_error_decays_in_closed_loop() {
        let traj = straight_traj(2.0, 40.0);
        let p = MpcParams::default();
        let mut x = VehicleState::new(Vec2::new(0.0, 0.5), 0.0, 2.0);
        let mut t = 0.0;
        let mut worst_overshoot: f64 = 0.0;
        let mut settled_at = None;
        while t < 12.0 {
            let cmd = mpc_track(&x, &traj, &p, t).expect("solver");
            // 5 substeps of 0.02 s per control period.
            for _ in 0..5 {
                x = bicycle_step(&x, &cmd, 0.02);
            }
            t += 0.1;
            worst_overshoot = worst_overshoot.min(x.position.y).max(worst_overshoot);
            if x.position.y < -0.25 {
                panic!("overshoot beyond -0.25: {}", x.position.y);
            }
            if settled_at.is_none() && x.position.y.abs() < 0.05 {
                settled_at = Some(t);
            }
        }
        let settled = settled_at.expect("error never dropped below 0.05 m");
        assert!(settled <= 10.0, "settled at {settled}");
    }
}
