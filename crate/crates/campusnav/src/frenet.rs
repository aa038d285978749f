//! Arc-length (Frenét) frame over a window of the global route, plus the
//! clearance profiling that feeds the behavioral cost terms.
//!
//! Frame `s` is local: 0 at the window origin. Lateral offset `d` is
//! positive to the left of the route heading.

use crate::geom::{polygon_distance, wrap_angle, Obb, Vec2};
use crate::roadmap::GlobalRoute;
use thiserror::Error;

/// Default resampling step (m).
pub const DEFAULT_DS: f64 = 0.5;
/// Clearance clamp so inverse-clearance costs stay bounded on open roads.
pub const CLEARANCE_CAP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSample {
    pub s: f64,
    pub position: Vec2,
    pub heading: f64,
    pub curvature: f64,
}

/// Uniformly resampled route window with heading and curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct FrenetFrame {
    pub samples: Vec<FrameSample>,
    pub ds: f64,
    pub s_max: f64,
    /// Route arc position of sample 0.
    pub origin_s: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FrenetError {
    #[error("frame window is empty at route position {0}")]
    WindowEmpty(f64),
    #[error("point projects {d:.2} m from the centerline, beyond the {bound} m corridor")]
    OutOfCorridor { d: f64, bound: f64 },
}

/// Lateral bound for projection queries.
pub const PROJECTION_BOUND: f64 = 10.0;

/// Resample `route` from `from_s` over `window` meters at `DEFAULT_DS`.
///
/// Heading comes from central differences of the resampled positions and
/// curvature from central differences of heading, so a circular arc
/// recovers 1/R at interior samples.
pub fn build_frame(route: &GlobalRoute, from_s: f64, window: f64) -> Result<FrenetFrame, FrenetError> {
    assert!(window > 0.0, "window must be positive");
    let ds = DEFAULT_DS;
    let remaining = route.length() - from_s;
    if remaining < ds {
        return Err(FrenetError::WindowEmpty(from_s));
    }
    let s_max = window.min(remaining);
    let n = (s_max / ds + 1e-9).floor() as usize;
    let positions: Vec<Vec2> = (0..=n)
        .map(|i| route.point_at(from_s + i as f64 * ds))
        .collect();

    // Chord direction i sits halfway between samples i and i+1; central
    // differences give the tangent at interior samples and a linear
    // extrapolation removes the half-step bias at the window ends.
    let chords: Vec<f64> = positions.windows(2).map(|w| (w[1] - w[0]).angle()).collect();
    let mut headings = vec![0.0; n + 1];
    for i in 0..=n {
        headings[i] = if i == 0 {
            if n >= 2 {
                chords[0] - 0.5 * wrap_angle(chords[1] - chords[0])
            } else {
                chords[0]
            }
        } else if i == n {
            if n >= 2 {
                chords[n - 1] + 0.5 * wrap_angle(chords[n - 1] - chords[n - 2])
            } else {
                chords[n - 1]
            }
        } else {
            (positions[i + 1] - positions[i - 1]).angle()
        };
    }
    let mut curvatures = vec![0.0; n + 1];
    for i in 0..=n {
        curvatures[i] = if i == 0 {
            wrap_angle(headings[1] - headings[0]) / ds
        } else if i == n {
            wrap_angle(headings[n] - headings[n - 1]) / ds
        } else {
            wrap_angle(headings[i + 1] - headings[i - 1]) / (2.0 * ds)
        };
    }

    let samples = (0..=n)
        .map(|i| FrameSample {
            s: i as f64 * ds,
            position: positions[i],
            heading: headings[i],
            curvature: curvatures[i],
        })
        .collect();
    Ok(FrenetFrame {
        samples,
        ds,
        s_max,
        origin_s: from_s,
    })
}

impl FrenetFrame {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn last_s(&self) -> f64 {
        self.samples.last().map(|s| s.s).unwrap_or(0.0)
    }

    /// Interpolated centerline pose at local arc position `s`.
    ///
    /// Positions follow a cubic Hermite through the samples with sample
    /// headings as tangents, so the centerline is C1 and `point_at` /
    /// `project` invert each other.
    pub fn pose_at(&self, s: f64) -> (Vec2, f64) {
        let (pos, tan) = self.hermite(s);
        (pos, tan.angle())
    }

    /// Hermite position and (unnormalized) tangent at local `s`.
    fn hermite(&self, s: f64) -> (Vec2, Vec2) {
        let last = self.samples.len() - 1;
        let s = s.clamp(0.0, self.last_s());
        let i = ((s / self.ds).floor() as usize).min(last - 1);
        let a = &self.samples[i];
        let b = &self.samples[i + 1];
        let t = ((s - a.s) / self.ds).clamp(0.0, 1.0);
        let ua = Vec2::from_angle(a.heading) * self.ds;
        let ub = Vec2::from_angle(b.heading) * self.ds;
        let (t2, t3) = (t * t, t * t * t);
        let pos = a.position * (2.0 * t3 - 3.0 * t2 + 1.0)
            + ua * (t3 - 2.0 * t2 + t)
            + b.position * (-2.0 * t3 + 3.0 * t2)
            + ub * (t3 - t2);
        let tan = a.position * (6.0 * t2 - 6.0 * t)
            + ua * (3.0 * t2 - 4.0 * t + 1.0)
            + b.position * (-6.0 * t2 + 6.0 * t)
            + ub * (3.0 * t2 - 2.0 * t);
        let tan = if tan.norm_sq() > 0.0 { tan } else { ua };
        (pos, tan)
    }

    /// Cartesian point at (s, d): centerline plus `d` along the left normal.
    pub fn point_at(&self, s: f64, d: f64) -> Vec2 {
        let (pos, tan) = self.hermite(s);
        pos + tan.normalized().perp() * d
    }

    /// Curvature at local arc position `s` (nearest-sample lookup).
    pub fn curvature_at(&self, s: f64) -> f64 {
        let last = self.samples.len() - 1;
        let i = ((s / self.ds).round() as usize).clamp(0, last);
        self.samples[i].curvature
    }

    /// Perpendicularity residual (p - P(s)) . T(s); zero at the foot point.
    fn perp_residual(&self, p: Vec2, s: f64) -> f64 {
        let (pos, tan) = self.hermite(s);
        (p - pos).dot(tan.normalized())
    }

    /// Project a Cartesian point into (s, d), `d` signed positive-left.
    ///
    /// Coarse nearest-sample search followed by bisection on the
    /// perpendicularity residual over the adjacent spans.
    pub fn project(&self, p: Vec2) -> Result<(f64, f64), FrenetError> {
        let last = self.samples.len() - 1;
        let mut best_i = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, smp) in self.samples.iter().enumerate() {
            let d2 = (p - smp.position).norm_sq();
            if d2 < best_d2 {
                best_d2 = d2;
                best_i = i;
            }
        }
        let lo = self.samples[best_i.saturating_sub(1)].s;
        let hi = self.samples[(best_i + 1).min(last)].s;

        // Bisect for the root of the perpendicularity residual.
        let (mut a, mut b) = (lo, hi);
        let mut fa = self.perp_residual(p, a);
        let fb = self.perp_residual(p, b);
        let s_star = if fa == 0.0 {
            a
        } else if fb == 0.0 {
            b
        } else if fa * fb < 0.0 {
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                let fm = self.perp_residual(p, m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if fa * fm < 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            0.5 * (a + b)
        } else {
            // No interior root: the foot clamps to a window end.
            if fa > 0.0 && fb > 0.0 {
                hi.min(self.last_s())
            } else {
                lo.max(0.0)
            }
        };
        let (pos, tan) = self.hermite(s_star);
        let d = tan.normalized().cross(p - pos);
        if d.abs() > PROJECTION_BOUND {
            return Err(FrenetError::OutOfCorridor { d, bound: PROJECTION_BOUND });
        }
        Ok((s_star, d))
    }
}

/// Collision-free distance and clearance statistics for one lateral offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearanceProfile {
    pub d: f64,
    /// First blocked arc position, or `s_max` when the window is free.
    pub s_m: f64,
    pub c_avg: f64,
    pub c_min: f64,
    pub clearances: Vec<f64>,
}

/// Sweep the ego footprint along offset `d` and profile obstacle clearance.
///
/// Clearance at a sample is the separation between the ego rectangle and
/// the nearest obstacle polygon, reduced by the inflation `w_o`, clamped
/// to [0, `CLEARANCE_CAP`]. `s_m` is the first blocked sample (else
/// `s_max`); the averages run over samples strictly before `s_m`.
pub fn clearance_profile(
    frame: &FrenetFrame,
    d: f64,
    obstacles: &[Vec<Vec2>],
    w_o: f64,
    ego_dims: (f64, f64),
) -> ClearanceProfile {
    let (ego_len, ego_wid) = ego_dims;
    let ego_radius = 0.5 * (ego_len * ego_len + ego_wid * ego_wid).sqrt();
    let mut clearances = Vec::with_capacity(frame.samples.len());
    let mut s_m = frame.s_max;
    let mut blocked = false;
    for smp in &frame.samples {
        let center = smp.position + Vec2::from_angle(smp.heading).perp() * d;
        let ego = Obb::new(center, smp.heading, ego_len, ego_wid).corners();
        let mut c = CLEARANCE_CAP;
        for poly in obstacles {
            // Bounding-circle reject keeps the sweep cheap on open roads.
            let (obs_c, obs_r) = polygon_bound(poly);
            let gap = center.dist(obs_c) - ego_radius - obs_r - w_o;
            if gap >= c {
                continue;
            }
            let dist = (polygon_distance(&ego, poly) - w_o).max(0.0);
            c = c.min(dist);
            if c == 0.0 {
                break;
            }
        }
        clearances.push(c);
        if !blocked && c == 0.0 {
            blocked = true;
            s_m = smp.s;
        }
    }
    let before: Vec<f64> = frame
        .samples
        .iter()
        .zip(&clearances)
        .filter(|(smp, _)| smp.s < s_m)
        .map(|(_, c)| *c)
        .collect();
    let (c_avg, c_min) = if s_m <= 0.0 || before.is_empty() {
        (0.0, 0.0)
    } else {
        let avg = before.iter().sum::<f64>() / before.len() as f64;
        let min = before.iter().cloned().fold(f64::INFINITY, f64::min);
        (avg, min)
    };
    ClearanceProfile {
        d,
        s_m,
        c_avg,
        c_min,
        clearances,
    }
}

fn polygon_bound(poly: &[Vec2]) -> (Vec2, f64) {
    let n = poly.len().max(1) as f64;
    let c = poly.iter().fold(Vec2::ZERO, |a, p| a + *p) * (1.0 / n);
    let r = poly.iter().map(|p| p.dist(c)).fold(0.0, f64::max);
    (c, r)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::roadmap::{plan_global_route, Edge, Node, RoadMap, ScenarioTag, Station};
    use crate::geom::polyline_length;

    pub(crate) fn straight_route(len: f64) -> GlobalRoute {
        let polyline = vec![Vec2::ZERO, Vec2::new(len, 0.0)];
        let map = RoadMap {
            version: 1,
            nodes: vec![
                Node { id: 0, x: 0.0, y: 0.0 },
                Node { id: 1, x: len, y: 0.0 },
            ],
            edges: vec![Edge {
                id: 0,
                from: 0,
                to: 1,
                length: polyline_length(&polyline),
                polyline,
                tag: ScenarioTag::Common,
                speed_limit: 3.0,
                half_width_left: 3.0,
                half_width_right: 3.0,
            }],
            stations: vec![Station { name: "end".into(), edge: 0, s: len }],
            observation_areas: vec![],
            stop_lines: vec![],
            curbs: vec![],
        };
        map.validate().unwrap();
        plan_global_route(&map, 0, 0.0, "end").unwrap()
    }

    pub(crate) fn arc_route(radius: f64, sweep: f64) -> GlobalRoute {
        let n = (radius * sweep / 0.1).ceil() as usize;
        let polyline: Vec<Vec2> = (0..=n)
            .map(|i| {
                let a = sweep * i as f64 / n as f64;
                Vec2::new(radius * a.sin(), radius * (1.0 - a.cos()))
            })
            .collect();
        let length = polyline_length(&polyline);
        let map = RoadMap {
            version: 1,
            nodes: vec![
                Node { id: 0, x: polyline[0].x, y: polyline[0].y },
                Node { id: 1, x: polyline[n].x, y: polyline[n].y },
            ],
            edges: vec![Edge {
                id: 0,
                from: 0,
                to: 1,
                length,
                polyline,
                tag: ScenarioTag::Common,
                speed_limit: 3.0,
                half_width_left: 3.0,
                half_width_right: 3.0,
            }],
            stations: vec![Station { name: "end".into(), edge: 0, s: length }],
            observation_areas: vec![],
            stop_lines: vec![],
            curbs: vec![],
        };
        map.validate().unwrap();
        plan_global_route(&map, 0, 0.0, "end").unwrap()
    }

    #[test]
    fn straight_frame_has_zero_curvature() {
        let route = straight_route(40.0);
        let frame = build_frame(&route, 0.0, 30.0).unwrap();
        assert_eq!(frame.s_max, 30.0);
        for smp in &frame.samples {
            assert!(smp.curvature.abs() < 1e-9);
            assert!(smp.heading.abs() < 1e-9);
        }
    }

    #[test]
    fn circular_arc_recovers_inverse_radius() {
        let route = arc_route(10.0, std::f64::consts::FRAC_PI_2);
        let frame = build_frame(&route, 0.0, 14.0).unwrap();
        for smp in &frame.samples[1..frame.samples.len() - 1] {
            assert!(
                (smp.curvature - 0.1).abs() < 1e-3,
                "kappa {} at s {}",
                smp.curvature,
                smp.s
            );
        }
    }

    #[test]
    fn window_clamps_to_route_end() {
        let route = straight_route(20.0);
        let frame = build_frame(&route, 5.0, 100.0).unwrap();
        assert!((frame.s_max - 15.0).abs() < 1e-9);
    }

    #[test]
    fn empty_window_is_an_error() {
        let route = straight_route(20.0);
        assert!(matches!(
            build_frame(&route, 20.0, 10.0),
            Err(FrenetError::WindowEmpty(_))
        ));
    }

    #[test]
    fn project_centerline_point() {
        let route = straight_route(40.0);
        let frame = build_frame(&route, 0.0, 30.0).unwrap();
        let (s, d) = frame.project(Vec2::new(12.3, 0.0)).unwrap();
        assert!((s - 12.3).abs() < 1e-9);
        assert!(d.abs() < 1e-6);
    }

    #[test]
    fn project_sign_convention_left_positive() {
        let route = straight_route(40.0);
        let frame = build_frame(&route, 0.0, 30.0).unwrap();
        let (s, d) = frame.project(Vec2::new(5.0, 1.0)).unwrap();
        assert!((s - 5.0).abs() < 1e-9);
        assert!((d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn project_out_of_corridor() {
        let route = straight_route(40.0);
        let frame = build_frame(&route, 0.0, 30.0).unwrap();
        assert!(matches!(
            frame.project(Vec2::new(5.0, 11.0)),
            Err(FrenetError::OutOfCorridor { .. })
        ));
    }

    #[test]
    fn arc_projection_matches_brute_force() {
        let route = arc_route(12.0, 1.2);
        let frame = build_frame(&route, 0.0, 14.0).unwrap();
        let mut failures = 0;
        for k in 0..40 {
            let s = 1.0 + 0.3 * k as f64;
            let d = -2.0 + 0.1 * k as f64;
            if s > frame.s_max - 1.0 {
                break;
            }
            let p = frame.point_at(s, d);
            let (ps, pd) = frame.project(p).unwrap();
            // Brute-force oracle: dense sweep of the centerline.
            let (mut bs, mut bdist) = (0.0, f64::INFINITY);
            let mut ss = 0.0;
            while ss <= frame.s_max {
                let dist = frame.point_at(ss, 0.0).dist(p);
                if dist < bdist {
                    bdist = dist;
                    bs = ss;
                }
                ss += 1e-3;
            }
            if (ps - bs).abs() > 1e-3 + 1e-6 || (pd.abs() - bdist).abs() > 1e-3 {
                failures += 1;
            }
            assert!((pd - d).abs() < 1e-6, "d recovery {pd} vs {d}");
        }
        assert_eq!(failures, 0);
    }

    #[test]
    fn clearance_profile_no_obstacles() {
        let route = straight_route(40.0);
        let frame = build_frame(&route, 0.0, 30.0).unwrap();
        let prof = clearance_profile(&frame, 0.0, &[], 0.2, (4.35, 1.63));
        assert_eq!(prof.s_m, frame.s_max);
        assert_eq!(prof.c_avg, CLEARANCE_CAP);
        assert_eq!(prof.c_min, CLEARANCE_CAP);
    }

    #[test]
    fn blocking_box_truncates_s_m() {
        let route = straight_route(40.0);
        let frame = build_frame(&route, 0.0, 30.0).unwrap();
        // Box centered on the centerline at s = 10.
        let obs = Obb::new(Vec2::new(10.0, 0.0), 0.0, 1.0, 1.0).corners().to_vec();
        let prof = clearance_profile(&frame, 0.0, &[obs], 0.0, (4.35, 1.63));
        // Blocked when the ego front reaches the box rear: the ego center is
        // at s, footprint extends half the length, box rear at 9.5.
        let expect = 9.5 - 4.35 / 2.0;
        assert!(
            (prof.s_m - expect).abs() <= frame.ds + 1e-9,
            "s_m {} vs {}",
            prof.s_m,
            expect
        );
        assert!(prof.c_min >= 0.0 && prof.c_avg >= prof.c_min);
    }

    #[test]
    fn obstacle_outside_cap_is_invisible() {
        let route = straight_route(40.0);
        let frame = build_frame(&route, 0.0, 30.0).unwrap();
        let obs = Obb::new(Vec2::new(10.0, 9.0), 0.0, 1.0, 1.0).corners().to_vec();
        let prof = clearance_profile(&frame, 0.0, &[obs], 0.2, (4.35, 1.63));
        assert_eq!(prof.s_m, frame.s_max);
        assert_eq!(prof.c_avg, CLEARANCE_CAP);
        assert_eq!(prof.c_min, CLEARANCE_CAP);
    }

    #[test]
    fn inflation_monotone() {
        // s_m never grows with inflation. The clearance statistics are only
        // comparable while the averaging window (s < s_m) is unchanged:
        // once inflation truncates s_m past a low-clearance dip, the mean
        // over the surviving samples may legitimately rise.
        let route = straight_route(40.0);
        let frame = build_frame(&route, 0.0, 30.0).unwrap();
        let obs = Obb::new(Vec2::new(12.0, 1.4), 0.0, 1.0, 1.0).corners().to_vec();
        let mut last: Option<ClearanceProfile> = None;
        for w in [0.0, 0.2, 0.5, 1.0] {
            let prof = clearance_profile(&frame, 0.0, &[obs.clone()], w, (4.35, 1.63));
            if let Some(prev) = &last {
                assert!(prof.s_m <= prev.s_m + 1e-12);
                if prof.s_m == prev.s_m {
                    assert!(prof.c_avg <= prev.c_avg + 1e-12);
                    assert!(prof.c_min <= prev.c_min + 1e-12);
                }
                for (a, b) in prof.clearances.iter().zip(&prev.clearances) {
                    assert!(a <= b, "pointwise clearance must shrink with inflation");
                }
            }
            last = Some(prof);
        }
    }

    #[test]
    fn roundtrip_point_projection() {
        let route = arc_route(15.0, 1.0);
        let frame = build_frame(&route, 0.0, 12.0).unwrap();
        for i in 1..frame.samples.len() - 1 {
            let s = frame.samples[i].s;
            for d in [-3.0, -1.0, 0.0, 0.5, 3.0] {
                let p = frame.point_at(s, d);
                let (ps, pd) = frame.project(p).unwrap();
                assert!((ps - s).abs() <= frame.ds + 1e-9, "s {ps} vs {s}");
                assert!((pd - d).abs() < 1e-6, "d {pd} vs {d} at s {s}");
            }
        }
    }
}
