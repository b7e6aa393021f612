//! Environment state: the ego's route and target speed, plus the fixed-length
//! vector the policy's state encoder consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::route::Route;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateEncoding {
    /// Number of arc-length resampled waypoints.
    pub waypoints: usize,
    /// Divisor for route-frame coordinates (the X block's range).
    pub position_scale: f64,
    /// Target speed interval mapped to [0, 1] (km/h).
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
}

impl Default for StateEncoding {
    fn default() -> Self {
        StateEncoding { waypoints: 10, position_scale: 100.0, speed_min_kmh: 20.0, speed_max_kmh: 50.0 }
    }
}

impl StateEncoding {
    pub fn dim(&self) -> usize {
        2 * self.waypoints + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints < 2 {
            return Err(Error::config("encoding.waypoints must be at least 2"));
        }
        if !(self.position_scale > 0.0) {
            return Err(Error::config("encoding.position_scale must be positive"));
        }
        if !(self.speed_max_kmh > self.speed_min_kmh) {
            return Err(Error::config("encoding.speed_max_kmh must exceed encoding.speed_min_kmh"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub route: Route,
    pub target_speed_kmh: f64,
    pub encoded: Vec<f64>,
}

impl EnvState {
    pub fn target_speed_mps(&self) -> f64 {
        self.target_speed_kmh / 3.6
    }
}

/// Builds the policy input: resampled route in the route-start frame scaled by
/// `position_scale`, then the normalized target speed. Length `2W + 1`.
pub fn encode_state(route: &Route, target_speed_kmh: f64, enc: &StateEncoding) -> Result<EnvState> {
    enc.validate()?;
    if !target_speed_kmh.is_finite() || target_speed_kmh < 0.0 {
        return Err(Error::config(format!("invalid target speed {target_speed_kmh} km/h")));
    }
    let mut encoded = Vec::with_capacity(enc.dim());
    for p in route.resample(enc.waypoints) {
        let local = route.world_to_frame(p);
        encoded.push(local[0] / enc.position_scale);
        encoded.push(local[1] / enc.position_scale);
    }
    encoded.push((target_speed_kmh - enc.speed_min_kmh) / (enc.speed_max_kmh - enc.speed_min_kmh));
    Ok(EnvState { route: route.clone(), target_speed_kmh, encoded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn straight_route_bounds() {
        let r = Route::straight("s", 100.0);
        let enc = StateEncoding::default();
        let s = encode_state(&r, 20.0, &enc).unwrap();
        assert_eq!(s.encoded.len(), 21);
        for i in 0..10 {
            assert_eq!(s.encoded[2 * i + 1], 0.0);
        }
        assert_eq!(*s.encoded.last().unwrap(), 0.0);
        let s = encode_state(&r, 50.0, &enc).unwrap();
        assert_eq!(*s.encoded.last().unwrap(), 1.0);
    }

    #[test]
    fn left_turn_oracle() {
        // Independent arc-length resampling of the concrete polyline:
        // approach 30 m along +x, quarter circle r = 12 centered at (30, 12), exit 20 m along +y.
        let r = Route::turn("l", 30.0, 12.0, 90.0, 20.0);
        let enc = StateEncoding::default();
        let s = encode_state(&r, 30.0, &enc).unwrap();
        let total = r.length();
        let arc_len = r.length() - 50.0; // chord-polyline arc
        let ys: Vec<f64> = s.encoded.chunks(2).take(10).map(|c| c[1] * 100.0).collect();
        for (i, y) in ys.iter().enumerate() {
            let sd = total * i as f64 / 9.0;
            let expected = if sd <= 30.0 {
                0.0
            } else if sd <= 30.0 + arc_len {
                let phi = (sd - 30.0) / arc_len * std::f64::consts::FRAC_PI_2;
                12.0 - 12.0 * phi.cos()
            } else {
                12.0 + (sd - 30.0 - arc_len)
            };
            assert!(*y >= -1e-12);
            assert!((y - expected).abs() < 0.05, "waypoint {i}: {y} vs {expected}");
        }
        let apex = ys.iter().position(|&y| y > 1e-9).unwrap();
        assert!(ys[apex..].windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_bad_route_config() {
        let r = Route::straight("s", 10.0);
        let enc = StateEncoding { waypoints: 1, ..StateEncoding::default() };
        assert!(encode_state(&r, 30.0, &enc).is_err());
    }

    proptest! {
        #[test]
        fn rigid_motion_invariance(rot in -3.1f64..3.1, tx in -500.0f64..500.0, ty in -500.0f64..500.0, left in any::<bool>(), speed in 20.0f64..50.0) {
            let base = Route::turn("t", 25.0, 10.0, if left { 90.0 } else { -90.0 }, 20.0);
            let moved = base.transformed(rot, [tx, ty]);
            let enc = StateEncoding::default();
            let a = encode_state(&base, speed, &enc).unwrap();
            let b = encode_state(&moved, speed, &enc).unwrap();
            for (x, y) in a.encoded.iter().zip(&b.encoded) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
