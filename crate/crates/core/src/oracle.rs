//! Independent test oracles: deliberately slower, structurally different
//! computations used to cross-check the fast paths, plus seeded generators
//! for random geometry. Nothing in this module is called by the simulator
//! itself; it exists for the verification suites and is exposed to
//! downstream crates behind the `oracles` feature.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::geom4d::{AltitudeRange, Footprint, Point, TimeInterval, Volume4D};
use crate::rng::uniform_inclusive;

fn orient(a: Point, b: Point, c: Point) -> i128 {
    let abx = (b.x_cm - a.x_cm) as i128;
    let aby = (b.y_cm - a.y_cm) as i128;
    let acx = (c.x_cm - a.x_cm) as i128;
    let acy = (c.y_cm - a.y_cm) as i128;
    abx * acy - aby * acx
}

/// Closed containment: boundary points are inside.
pub fn point_in_footprint(p: Point, fp: &Footprint) -> bool {
    let verts = fp.vertices();
    let n = verts.len();
    (0..n).all(|i| orient(verts[i], verts[(i + 1) % n], p) >= 0)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    // Assumes p collinear with a-b.
    p.x_cm >= a.x_cm.min(b.x_cm)
        && p.x_cm <= a.x_cm.max(b.x_cm)
        && p.y_cm >= a.y_cm.min(b.y_cm)
        && p.y_cm <= a.y_cm.max(b.y_cm)
}

/// Closed segment intersection, including collinear overlap and endpoint
/// contact.
pub fn segments_intersect(a1: Point, a2: Point, b1: Point, b2: Point) -> bool {
    let d1 = orient(b1, b2, a1);
    let d2 = orient(b1, b2, a2);
    let d3 = orient(a1, a2, b1);
    let d4 = orient(a1, a2, b2);
    if ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)) {
        return true;
    }
    (d1 == 0 && on_segment(b1, b2, a1))
        || (d2 == 0 && on_segment(b1, b2, a2))
        || (d3 == 0 && on_segment(a1, a2, b1))
        || (d4 == 0 && on_segment(a1, a2, b2))
}

fn edges(fp: &Footprint) -> impl Iterator<Item = (Point, Point)> + '_ {
    let verts = fp.vertices();
    let n = verts.len();
    (0..n).map(move |i| (verts[i], verts[(i + 1) % n]))
}

/// Convex intersection by the classical decomposition: some vertex of one
/// polygon lies in the other, or some pair of edges meets.
pub fn footprints_intersect_classic(a: &Footprint, b: &Footprint) -> bool {
    a.vertices().iter().any(|&p| point_in_footprint(p, b))
        || b.vertices().iter().any(|&p| point_in_footprint(p, a))
        || edges(a).any(|(a1, a2)| edges(b).any(|(b1, b2)| segments_intersect(a1, a2, b1, b2)))
}

/// Grid sampling over the intersection of the two bounding boxes, on a
/// lattice of `pitch_cm`. Sampling can miss features thinner than the
/// pitch, so callers must restrict comparisons to pairs whose boundaries
/// are well separated (see [`boundary_clearance_cm`]).
pub fn footprints_intersect_grid(a: &Footprint, b: &Footprint, pitch_cm: i64) -> bool {
    let (amin, amax) = a.bbox();
    let (bmin, bmax) = b.bbox();
    let x0 = amin.x_cm.max(bmin.x_cm);
    let x1 = amax.x_cm.min(bmax.x_cm);
    let y0 = amin.y_cm.max(bmin.y_cm);
    let y1 = amax.y_cm.min(bmax.y_cm);
    if x0 > x1 || y0 > y1 {
        return false;
    }
    let mut x = x0.div_euclid(pitch_cm) * pitch_cm;
    if x < x0 {
        x += pitch_cm;
    }
    while x <= x1 {
        let mut y = y0.div_euclid(pitch_cm) * pitch_cm;
        if y < y0 {
            y += pitch_cm;
        }
        while y <= y1 {
            let p = Point { x_cm: x, y_cm: y };
            if point_in_footprint(p, a) && point_in_footprint(p, b) {
                return true;
            }
            y += pitch_cm;
        }
        x += pitch_cm;
    }
    false
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let px = p.x_cm as f64;
    let py = p.y_cm as f64;
    let ax = a.x_cm as f64;
    let ay = a.y_cm as f64;
    let bx = b.x_cm as f64;
    let by = b.y_cm as f64;
    let dx = bx - ax;
    let dy = by - ay;
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let cx = ax + t * dx - px;
    let cy = ay + t * dy - py;
    libm::sqrt(cx * cx + cy * cy)
}

/// Minimum distance between the two polygon boundaries, zero when they
/// touch or cross. Used as the filter for grid-oracle comparisons.
pub fn boundary_clearance_cm(a: &Footprint, b: &Footprint) -> f64 {
    for (a1, a2) in edges(a) {
        for (b1, b2) in edges(b) {
            if segments_intersect(a1, a2, b1, b2) {
                return 0.0;
            }
        }
    }
    let mut best = f64::INFINITY;
    for &p in a.vertices() {
        for (b1, b2) in edges(b) {
            best = best.min(point_segment_distance(p, b1, b2));
        }
    }
    for &p in b.vertices() {
        for (a1, a2) in edges(a) {
            best = best.min(point_segment_distance(p, a1, a2));
        }
    }
    best
}

/// Width of the polygon along its narrowest edge normal.
pub fn min_width_cm(fp: &Footprint) -> f64 {
    let mut best = f64::INFINITY;
    for (a, b) in edges(fp) {
        let nx = (a.y_cm - b.y_cm) as f64;
        let ny = (b.x_cm - a.x_cm) as f64;
        let len = libm::sqrt(nx * nx + ny * ny);
        if len == 0.0 {
            continue;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in fp.vertices() {
            let d = (nx * v.x_cm as f64 + ny * v.y_cm as f64) / len;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        best = best.min(hi - lo);
    }
    best
}

/// Per-dimension composition with the classical footprint test.
pub fn volumes_intersect_composed(a: &Volume4D, b: &Volume4D) -> bool {
    a.time.overlaps(&b.time)
        && a.altitude.overlaps(&b.altitude)
        && footprints_intersect_classic(&a.footprint, &b.footprint)
}

/// Exhaustive pairwise scan. Callers must pass non-empty extents.
pub fn extents_conflict_pairwise(a: &[Volume4D], b: &[Volume4D]) -> bool {
    debug_assert!(!a.is_empty() && !b.is_empty());
    a.iter()
        .any(|va| b.iter().any(|vb| volumes_intersect_composed(va, vb)))
}

fn centered(rng: &mut ChaCha8Rng, half_range: i64) -> i64 {
    uniform_inclusive(rng, (half_range as u64) * 2) as i64 - half_range
}

fn convex_hull_ccw(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_unstable_by_key(|p| (p.x_cm, p.y_cm));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Random strictly convex footprint centered near `(cx_cm, cy_cm)` with
/// 3 to 8 vertices, bounded by `radius_cm`, and at least `min_width_cm`
/// wide so grid sampling cannot miss it.
pub fn gen_footprint(
    rng: &mut ChaCha8Rng,
    cx_cm: i64,
    cy_cm: i64,
    radius_cm: i64,
    min_width: i64,
) -> Footprint {
    loop {
        let n = 3 + uniform_inclusive(rng, 5) as usize;
        let pts: Vec<Point> = (0..n)
            .map(|_| Point { x_cm: centered(rng, radius_cm), y_cm: centered(rng, radius_cm) })
            .collect();
        let hull = convex_hull_ccw(pts);
        if hull.len() < 3 {
            continue;
        }
        let fp = match Footprint::new(hull) {
            Ok(fp) => fp,
            Err(_) => continue,
        };
        if min_width_cm(&fp) >= min_width as f64 {
            return fp.translated(cx_cm, cy_cm);
        }
    }
}

/// Random volume whose footprint sits near `(cx_cm, cy_cm)`; time and
/// altitude are drawn from small shared ranges so dimensional overlap is
/// common but not guaranteed.
pub fn gen_volume(rng: &mut ChaCha8Rng, cx_cm: i64, cy_cm: i64, radius_cm: i64) -> Volume4D {
    let footprint = gen_footprint(rng, cx_cm, cy_cm, radius_cm, 80);
    let floor = uniform_inclusive(rng, 60) as i64;
    let height = 1 + uniform_inclusive(rng, 40) as i64;
    let start = uniform_inclusive(rng, 4_000);
    let len = 1 + uniform_inclusive(rng, 3_000);
    Volume4D {
        footprint,
        altitude: AltitudeRange::new(floor, floor + height).unwrap(),
        time: TimeInterval::new(start, start + len).unwrap(),
    }
}

/// Random extent of 1 to `max_volumes` volumes.
pub fn gen_extent(
    rng: &mut ChaCha8Rng,
    cx_cm: i64,
    cy_cm: i64,
    radius_cm: i64,
    max_volumes: u64,
) -> Vec<Volume4D> {
    let n = 1 + uniform_inclusive(rng, max_volumes - 1);
    (0..n).map(|_| gen_volume(rng, cx_cm, cy_cm, radius_cm)).collect()
}

/// Nearest-rank percentile by explicit sort and floating-point rank
/// arithmetic; the independent counterpart of the metrics implementation.
pub fn percentile_by_sort(values: &[u64], p: u32) -> Option<u64> {
    if values.is_empty() || p == 0 || p > 100 {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = libm::ceil(p as f64 / 100.0 * sorted.len() as f64) as usize;
    sorted.get(rank - 1).copied()
}
