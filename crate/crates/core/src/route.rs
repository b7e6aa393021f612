//! Reference routes for the ego vehicle and the route-start frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Spacing of generated route waypoints (m).
pub const WAYPOINT_SPACING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRoute", into = "RawRoute")]
pub struct Route {
    name: String,
    waypoints: Vec<Point>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawRoute {
    name: String,
    waypoints: Vec<Point>,
}

impl TryFrom<RawRoute> for Route {
    type Error = Error;

    fn try_from(raw: RawRoute) -> Result<Self> {
        Route::new(raw.name, raw.waypoints)
    }
}

impl From<Route> for RawRoute {
    fn from(r: Route) -> Self {
        RawRoute { name: r.name, waypoints: r.waypoints }
    }
}

/// Nearest-point query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub segment: usize,
    /// Arc length of the projected point.
    pub arc: f64,
    /// Signed lateral offset, positive to the left of travel.
    pub lateral: f64,
    pub distance: f64,
}

impl Route {
    pub fn new(name: impl Into<String>, waypoints: Vec<Point>) -> Result<Self> {
        let name = name.into();
        if waypoints.len() < 2 {
            return Err(Error::config(format!("route `{name}` needs at least 2 waypoints")));
        }
        let mut cumulative = Vec::with_capacity(waypoints.len());
        cumulative.push(0.0);
        for w in waypoints.windows(2) {
            if !(w[0][0].is_finite() && w[0][1].is_finite() && w[1][0].is_finite() && w[1][1].is_finite()) {
                return Err(Error::config(format!("route `{name}` has a non-finite waypoint")));
            }
            let d = dist(w[0], w[1]);
            if d <= 0.0 {
                return Err(Error::config(format!("route `{name}` has repeated consecutive waypoints")));
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Ok(Route { name, waypoints, cumulative })
    }

    pub fn straight(name: &str, length: f64) -> Self {
        let n = (length / WAYPOINT_SPACING).ceil() as usize;
        let pts = (0..=n).map(|i| [length * i as f64 / n as f64, 0.0]).collect();
        Route::new(name, pts).expect("straight route is valid")
    }

    /// Straight approach, circular turn (`turn_deg` > 0 turns left), straight exit.
    pub fn turn(name: &str, approach: f64, radius: f64, turn_deg: f64, exit: f64) -> Self {
        let mut pts: Vec<Point> = Vec::new();
        let n_app = (approach / WAYPOINT_SPACING).ceil().max(1.0) as usize;
        for i in 0..=n_app {
            pts.push([approach * i as f64 / n_app as f64, 0.0]);
        }
        let side = turn_deg.signum();
        let sweep = turn_deg.to_radians().abs();
        let center = [approach, side * radius];
        let n_arc = (radius * sweep / WAYPOINT_SPACING).ceil().max(1.0) as usize;
        for i in 1..=n_arc {
            let phi = sweep * i as f64 / n_arc as f64;
            // angle measured from the center to the arc start point
            pts.push([center[0] + radius * phi.sin(), center[1] - side * radius * phi.cos()]);
        }
        let end = *pts.last().unwrap();
        let heading = side * sweep;
        let n_exit = (exit / WAYPOINT_SPACING).ceil().max(1.0) as usize;
        for i in 1..=n_exit {
            let s = exit * i as f64 / n_exit as f64;
            pts.push([end[0] + s * heading.cos(), end[1] + s * heading.sin()]);
        }
        Route::new(name, pts).expect("turn route is valid")
    }

    /// Applies a rigid motion (rotation about the origin, then translation).
    pub fn transformed(&self, rotation: f64, translation: Point) -> Self {
        let (s, c) = rotation.sin_cos();
        let pts = self
            .waypoints
            .iter()
            .map(|p| [c * p[0] - s * p[1] + translation[0], s * p[0] + c * p[1] + translation[1]])
            .collect();
        Route::new(self.name.clone(), pts).expect("rigid motion preserves validity")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn waypoints(&self) -> &[Point] {
        &self.waypoints
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn start(&self) -> Point {
        self.waypoints[0]
    }

    pub fn end(&self) -> Point {
        *self.waypoints.last().unwrap()
    }

    pub fn segment_heading(&self, seg: usize) -> f64 {
        let a = self.waypoints[seg];
        let b = self.waypoints[seg + 1];
        (b[1] - a[1]).atan2(b[0] - a[0])
    }

    pub fn start_heading(&self) -> f64 {
        self.segment_heading(0)
    }

    fn segment_at(&self, arc: f64) -> usize {
        let arc = arc.clamp(0.0, self.length());
        match self.cumulative.binary_search_by(|c| c.total_cmp(&arc)) {
            Ok(i) => i.min(self.waypoints.len() - 2),
            Err(i) => (i - 1).min(self.waypoints.len() - 2),
        }
    }

    pub fn point_at(&self, arc: f64) -> Point {
        let arc = arc.clamp(0.0, self.length());
        let seg = self.segment_at(arc);
        let a = self.waypoints[seg];
        let b = self.waypoints[seg + 1];
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let t = ((arc - self.cumulative[seg]) / len).clamp(0.0, 1.0);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    pub fn heading_at(&self, arc: f64) -> f64 {
        self.segment_heading(self.segment_at(arc))
    }

    /// `count` points equally spaced in arc length, first and last waypoint included.
    pub fn resample(&self, count: usize) -> Vec<Point> {
        assert!(count >= 2);
        let len = self.length();
        (0..count).map(|i| self.point_at(len * i as f64 / (count - 1) as f64)).collect()
    }

    /// Nearest point over all segments.
    pub fn project(&self, p: Point) -> Projection {
        self.project_window(p, 0, self.waypoints.len() - 1)
    }

    /// Nearest point restricted to segments `[from, to)`.
    pub fn project_window(&self, p: Point, from: usize, to: usize) -> Projection {
        let to = to.min(self.waypoints.len() - 1);
        let mut best: Option<Projection> = None;
        for seg in from.min(to.saturating_sub(1))..to {
            let a = self.waypoints[seg];
            let b = self.waypoints[seg + 1];
            let ab = [b[0] - a[0], b[1] - a[1]];
            let ap = [p[0] - a[0], p[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
            let d = dist(p, q);
            if best.is_none_or(|b| d < b.distance) {
                let cross = ab[0] * ap[1] - ab[1] * ap[0];
                let len = len2.sqrt();
                best = Some(Projection {
                    segment: seg,
                    arc: self.cumulative[seg] + t * len,
                    lateral: cross / len,
                    distance: d,
                });
            }
        }
        best.expect("route has at least one segment")
    }

    /// Minimum distance from `p` to any waypoint.
    pub fn min_waypoint_distance(&self, p: Point) -> f64 {
        self.waypoints.iter().map(|w| dist(*w, p)).fold(f64::INFINITY, f64::min)
    }

    /// Maps a point from the route-start frame (origin at the first waypoint,
    /// +x along the first segment) to world coordinates.
    pub fn frame_to_world(&self, local: Point) -> Point {
        let o = self.start();
        let (s, c) = self.start_heading().sin_cos();
        [o[0] + c * local[0] - s * local[1], o[1] + s * local[0] + c * local[1]]
    }

    pub fn world_to_frame(&self, world: Point) -> Point {
        let o = self.start();
        let (s, c) = self.start_heading().sin_cos();
        let d = [world[0] - o[0], world[1] - o[1]];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Named route collections shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteSet {
    /// Ten routes mixing straight, left and right turns.
    Training,
    /// Four routes not seen in training.
    Heldout,
}

impl RouteSet {
    pub fn routes(self) -> Vec<Route> {
        match self {
            RouteSet::Training => vec![
                Route::straight("straight_75", 75.0),
                Route::straight("straight_90", 90.0).transformed(0.6, [120.0, -40.0]),
                Route::turn("left_25_r10", 25.0, 10.0, 90.0, 30.0),
                Route::turn("left_35_r14", 35.0, 14.0, 90.0, 25.0),
                Route::turn("left_30_r12", 30.0, 12.0, 90.0, 30.0).transformed(-2.1, [15.0, 60.0]),
                Route::turn("left_20_r9", 20.0, 9.0, 90.0, 35.0),
                Route::turn("right_25_r10", 25.0, 10.0, -90.0, 30.0),
                Route::turn("right_35_r14", 35.0, 14.0, -90.0, 25.0),
                Route::turn("right_30_r12", 30.0, 12.0, -90.0, 30.0).transformed(1.2, [-30.0, 5.0]),
                Route::turn("right_40_r11", 40.0, 11.0, -90.0, 20.0),
            ],
            RouteSet::Heldout => vec![
                Route::turn("heldout_left", 28.0, 11.0, 90.0, 28.0),
                Route::turn("heldout_right", 28.0, 11.0, -90.0, 28.0),
                Route::straight("heldout_straight", 80.0),
                Route::turn("heldout_left_wide", 32.0, 13.0, 90.0, 22.0).transformed(0.9, [-10.0, 20.0]),
            ],
        }
    }

    pub fn find(name: &str) -> Option<Route> {
        [RouteSet::Training, RouteSet::Heldout]
            .into_iter()
            .flat_map(|s| s.routes())
            .find(|r| r.name() == name)
    }

    pub fn all_names() -> Vec<String> {
        [RouteSet::Training, RouteSet::Heldout]
            .into_iter()
            .flat_map(|s| s.routes())
            .map(|r| r.name().to_string())
            .collect()
    }
}
