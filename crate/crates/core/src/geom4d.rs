//! 4D airspace geometry: convex horizontal footprints, half-open altitude
//! and time intervals, and conflict tests over lists of volumes.
//!
//! Horizontal coordinates are integer centimeters, altitudes integer
//! meters, times integer milliseconds, so every predicate reduces to exact
//! integer arithmetic and yields the same answer on every platform.
//!
//! Footprints are closed regions: touching boundaries count as
//! intersecting. Time and altitude are half-open `[start, end)`: volumes
//! that abut exactly in either of those dimensions do not intersect.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Largest accepted coordinate magnitude, in centimeters (10^4 km).
pub const MAX_COORD_CM: i64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeometryError {
    EmptyExtent,
    EmptyTimeInterval { start_ms: u64, end_ms: u64 },
    EmptyAltitudeRange { floor_m: i64, ceiling_m: i64 },
    TooFewVertices { got: usize },
    NotConvexCcw,
    CoordinateOutOfRange { value_cm: i64 },
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::EmptyExtent => write!(f, "extent must contain at least one volume"),
            GeometryError::EmptyTimeInterval { start_ms, end_ms } => {
                write!(f, "time interval [{start_ms}, {end_ms}) is empty")
            }
            GeometryError::EmptyAltitudeRange { floor_m, ceiling_m } => {
                write!(f, "altitude range [{floor_m}, {ceiling_m}) is empty")
            }
            GeometryError::TooFewVertices { got } => {
                write!(f, "footprint needs at least 3 vertices, got {got}")
            }
            GeometryError::NotConvexCcw => {
                write!(f, "footprint must be strictly convex and counterclockwise")
            }
            GeometryError::CoordinateOutOfRange { value_cm } => {
                write!(f, "coordinate {value_cm} cm exceeds the supported range")
            }
        }
    }
}

/// Half-open time interval `[start_ms, end_ms)` in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeInterval {
    start_ms: u64,
    end_ms: u64,
}

impl TimeInterval {
    pub fn new(start_ms: u64, end_ms: u64) -> Result<Self, GeometryError> {
        if start_ms >= end_ms {
            return Err(GeometryError::EmptyTimeInterval { start_ms, end_ms });
        }
        Ok(TimeInterval { start_ms, end_ms })
    }

    pub fn start_ms(&self) -> u64 {
        self.start_ms
    }

    pub fn end_ms(&self) -> u64 {
        self.end_ms
    }

    pub fn overlaps(&self, other: &TimeInterval) -> bool {
        self.start_ms < other.end_ms && other.start_ms < self.end_ms
    }
}

/// Half-open altitude range `[floor_m, ceiling_m)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AltitudeRange {
    floor_m: i64,
    ceiling_m: i64,
}

impl AltitudeRange {
    pub fn new(floor_m: i64, ceiling_m: i64) -> Result<Self, GeometryError> {
        if floor_m >= ceiling_m {
            return Err(GeometryError::EmptyAltitudeRange { floor_m, ceiling_m });
        }
        Ok(AltitudeRange { floor_m, ceiling_m })
    }

    pub fn floor_m(&self) -> i64 {
        self.floor_m
    }

    pub fn ceiling_m(&self) -> i64 {
        self.ceiling_m
    }

    pub fn overlaps(&self, other: &AltitudeRange) -> bool {
        self.floor_m < other.ceiling_m && other.floor_m < self.ceiling_m
    }
}

/// Horizontal position in integer centimeters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Point {
    pub x_cm: i64,
    pub y_cm: i64,
}

/// Closed convex polygon, vertices in counterclockwise order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    vertices: Vec<Point>,
}

fn cross(o: Point, a: Point, b: Point) -> i128 {
    let ax = (a.x_cm - o.x_cm) as i128;
    let ay = (a.y_cm - o.y_cm) as i128;
    let bx = (b.x_cm - o.x_cm) as i128;
    let by = (b.y_cm - o.y_cm) as i128;
    ax * by - ay * bx
}

impl Footprint {
    /// Builds a footprint, rejecting degenerate, clockwise, or non-convex
    /// vertex lists. Vertices must be strictly convex: collinear triples
    /// are not accepted.
    pub fn new(vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices { got: vertices.len() });
        }
        for v in &vertices {
            for value_cm in [v.x_cm, v.y_cm] {
                if value_cm.abs() > MAX_COORD_CM {
                    return Err(GeometryError::CoordinateOutOfRange { value_cm });
                }
            }
        }
        let n = vertices.len();
        for i in 0..n {
            let o = vertices[i];
            let a = vertices[(i + 1) % n];
            let b = vertices[(i + 2) % n];
            if cross(o, a, b) <= 0 {
                return Err(GeometryError::NotConvexCcw);
            }
        }
        Ok(Footprint { vertices })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rect(x0_cm: i64, y0_cm: i64, x1_cm: i64, y1_cm: i64) -> Result<Self, GeometryError> {
        Footprint::new(alloc::vec![
            Point { x_cm: x0_cm, y_cm: y0_cm },
            Point { x_cm: x1_cm, y_cm: y0_cm },
            Point { x_cm: x1_cm, y_cm: y1_cm },
            Point { x_cm: x0_cm, y_cm: y1_cm },
        ])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn translated(&self, dx_cm: i64, dy_cm: i64) -> Footprint {
        Footprint {
            vertices: self
                .vertices
                .iter()
                .map(|v| Point { x_cm: v.x_cm + dx_cm, y_cm: v.y_cm + dy_cm })
                .collect(),
        }
    }

    /// Bounding box as (min corner, max corner).
    pub fn bbox(&self) -> (Point, Point) {
        let mut min = Point { x_cm: i64::MAX, y_cm: i64::MAX };
        let mut max = Point { x_cm: i64::MIN, y_cm: i64::MIN };
        for v in &self.vertices {
            min.x_cm = min.x_cm.min(v.x_cm);
            min.y_cm = min.y_cm.min(v.y_cm);
            max.x_cm = max.x_cm.max(v.x_cm);
            max.y_cm = max.y_cm.max(v.y_cm);
        }
        (min, max)
    }
}

/// One 4D volume: a footprint extruded over an altitude range and a time
/// interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Volume4D {
    pub footprint: Footprint,
    pub altitude: AltitudeRange,
    pub time: TimeInterval,
}

impl Volume4D {
    pub fn translated(&self, dx_cm: i64, dy_cm: i64) -> Volume4D {
        Volume4D {
            footprint: self.footprint.translated(dx_cm, dy_cm),
            altitude: self.altitude,
            time: self.time,
        }
    }
}

/// Half-open interval overlap, shared by the time dimension.
pub fn intervals_overlap(a: &TimeInterval, b: &TimeInterval) -> bool {
    a.overlaps(b)
}

fn projection(fp: &Footprint, axis: (i128, i128)) -> (i128, i128) {
    let mut min = i128::MAX;
    let mut max = i128::MIN;
    for v in fp.vertices() {
        let d = axis.0 * v.x_cm as i128 + axis.1 * v.y_cm as i128;
        min = min.min(d);
        max = max.max(d);
    }
    (min, max)
}

fn separated_on_edges(a: &Footprint, b: &Footprint) -> bool {
    let verts = a.vertices();
    let n = verts.len();
    for i in 0..n {
        let cur = verts[i];
        let next = verts[(i + 1) % n];
        let axis = ((cur.y_cm - next.y_cm) as i128, (next.x_cm - cur.x_cm) as i128);
        let (amin, amax) = projection(a, axis);
        let (bmin, bmax) = projection(b, axis);
        // Closed regions: only a strict gap separates, touching does not.
        if amax < bmin || bmax < amin {
            return true;
        }
    }
    false
}

/// Closed-region intersection of two convex footprints (separating axis
/// test). Boundary contact counts as intersection.
pub fn footprints_intersect(a: &Footprint, b: &Footprint) -> bool {
    !separated_on_edges(a, b) && !separated_on_edges(b, a)
}

/// Volumes intersect when all three dimensions do: closed horizontally,
/// half-open in altitude and time.
pub fn volumes_intersect(a: &Volume4D, b: &Volume4D) -> bool {
    a.time.overlaps(&b.time)
        && a.altitude.overlaps(&b.altitude)
        && footprints_intersect(&a.footprint, &b.footprint)
}

/// Whether any volume of one extent intersects any volume of the other.
/// Empty extents are malformed and rejected rather than vacuously
/// non-conflicting.
pub fn extents_conflict(a: &[Volume4D], b: &[Volume4D]) -> Result<bool, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyExtent);
    }
    Ok(a.iter().any(|va| b.iter().any(|vb| volumes_intersect(va, vb))))
}
