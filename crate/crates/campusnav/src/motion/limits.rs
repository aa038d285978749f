//! Speed-limit curves: curvature-based and clearance-based.

use super::SpeedLimitConfig;

/// Curvature speed limit sqrt(a_lat / |kappa|).
///
/// A straight segment (kappa = 0) returns infinity; callers clamp to the
/// route cap.
pub fn curvature_speed_limit(kappa: f64, a_lat_max: f64) -> f64 {
    assert!(a_lat_max > 0.0);
    if kappa == 0.0 {
        f64::INFINITY
    } else {
        (a_lat_max / kappa.abs()).sqrt()
    }
}

/// Clearance speed limit: piecewise linear through the configured tiers.
///
/// The interpolation arguments are normalized to each band so the curve is
/// continuous at the thresholds.
pub fn clearance_speed_limit(c: f64, cfg: &SpeedLimitConfig) -> f64 {
    debug_assert!(c >= 0.0);
    if c < cfg.delta_min {
        cfg.v_min
    } else if c < cfg.delta_mdn {
        let t = (c - cfg.delta_min) / (cfg.delta_mdn - cfg.delta_min);
        cfg.v_min + t * (cfg.v_mdn - cfg.v_min)
    } else if c < cfg.delta_max {
        let t = (c - cfg.delta_mdn) / (cfg.delta_max - cfg.delta_mdn);
        cfg.v_mdn + t * (cfg.v_max - cfg.v_mdn)
    } else {
        cfg.v_max
    }
}
