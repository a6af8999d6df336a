//! Planar geometry on phase-plane points: polygon area and membership,
//! segment intersection, polyline crossing checks and walks along a window
//! boundary.

use crate::integrator::Window;
use crate::model::PhaseState;

/// Points closer than this to a polygon edge count as inside.
pub const BOUNDARY_TIE: f64 = 1e-9;

const CHUNK: usize = 64;

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn signed_area(pts: &[PhaseState]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let n = pts.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.delta * b.domega - b.delta * a.domega
        })
        .sum();
    0.5 * twice
}

fn cross(o: PhaseState, a: PhaseState, b: PhaseState) -> f64 {
    (a.delta - o.delta) * (b.domega - o.domega) - (a.domega - o.domega) * (b.delta - o.delta)
}

/// Parameters (s, t) ∈ [0, 1]² where segment ab meets segment cd, if they
/// cross at a single point. Parallel segments report no intersection.
pub fn segment_intersection(
    a: PhaseState,
    b: PhaseState,
    c: PhaseState,
    d: PhaseState,
) -> Option<(f64, f64)> {
    let r = (b.delta - a.delta, b.domega - a.domega);
    let q = (d.delta - c.delta, d.domega - c.domega);
    let denom = r.0 * q.1 - r.1 * q.0;
    if denom == 0.0 {
        return None;
    }
    let ac = (c.delta - a.delta, c.domega - a.domega);
    let s = (ac.0 * q.1 - ac.1 * q.0) / denom;
    let t = (ac.0 * r.1 - ac.1 * r.0) / denom;
    ((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&t)).then_some((s, t))
}

/// Strict crossing: the segments share an interior point and their
/// endpoints are on opposite sides of each other.
fn segments_cross(a: PhaseState, b: PhaseState, c: PhaseState, d: PhaseState) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

#[derive(Debug, Clone, Copy)]
struct Bbox {
    lo: PhaseState,
    hi: PhaseState,
}

impl Bbox {
    fn of(pts: &[PhaseState]) -> Self {
        let mut lo = pts[0];
        let mut hi = pts[0];
        for p in pts {
            lo.delta = lo.delta.min(p.delta);
            lo.domega = lo.domega.min(p.domega);
            hi.delta = hi.delta.max(p.delta);
            hi.domega = hi.domega.max(p.domega);
        }
        Self { lo, hi }
    }

    fn overlaps(&self, o: &Bbox) -> bool {
        self.lo.delta <= o.hi.delta
            && o.lo.delta <= self.hi.delta
            && self.lo.domega <= o.hi.domega
            && o.lo.domega <= self.hi.domega
    }
}

/// Segment index ranges `[start, end)` with the bounding box of their
/// points.
fn chunks(pts: &[PhaseState]) -> Vec<(usize, usize, Bbox)> {
    let segs = pts.len().saturating_sub(1);
    (0..segs)
        .step_by(CHUNK)
        .map(|s| {
            let e = (s + CHUNK).min(segs);
            (s, e, Bbox::of(&pts[s..=e]))
        })
        .collect()
}

/// First pair of segment indices (i < j) at which the polyline crosses
/// itself. With `closed`, the segment from the last point back to the
/// first is included.
pub fn polyline_self_crossing(pts: &[PhaseState], closed: bool) -> Option<(usize, usize)> {
    let mut owned;
    let pts = if closed && pts.len() > 2 {
        owned = pts.to_vec();
        owned.push(pts[0]);
        &owned[..]
    } else {
        pts
    };
    let segs = pts.len().saturating_sub(1);
    let adjacent = |i: usize, j: usize| j == i + 1 || (closed && i == 0 && j == segs - 1);
    let cs = chunks(pts);
    for (ci, &(s1, e1, b1)) in cs.iter().enumerate() {
        for &(s2, e2, b2) in &cs[ci..] {
            if !b1.overlaps(&b2) {
                continue;
            }
            for i in s1..e1 {
                for j in s2.max(i + 1)..e2 {
                    if !adjacent(i, j) && segments_cross(pts[i], pts[i + 1], pts[j], pts[j + 1]) {
                        return Some((i, j));
                    }
                }
            }
        }
    }
    None
}

/// First pair of segment indices at which two polylines cross.
pub fn polylines_cross(a: &[PhaseState], b: &[PhaseState]) -> Option<(usize, usize)> {
    let (ca, cb) = (chunks(a), chunks(b));
    for &(s1, e1, b1) in &ca {
        for &(s2, e2, b2) in &cb {
            if !b1.overlaps(&b2) {
                continue;
            }
            for i in s1..e1 {
                for j in s2..e2 {
                    if segments_cross(a[i], a[i + 1], b[j], b[j + 1]) {
                        return Some((i, j));
                    }
                }
            }
        }
    }
    None
}

/// Distance from `p` to segment ab after dividing each axis by its scale.
pub fn segment_distance(p: PhaseState, a: PhaseState, b: PhaseState, scale: (f64, f64)) -> f64 {
    let to = |s: PhaseState| (s.delta / scale.0, s.domega / scale.1);
    let (px, py) = to(p);
    let (ax, ay) = to(a);
    let (bx, by) = to(b);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (px - ax - t * dx).hypot(py - ay - t * dy)
}

/// Smallest scaled distance from `p` to any segment of the polyline.
pub fn polyline_distance(p: PhaseState, pts: &[PhaseState], scale: (f64, f64)) -> f64 {
    match pts.len() {
        0 => f64::INFINITY,
        1 => segment_distance(p, pts[0], pts[0], scale),
        _ => pts
            .windows(2)
            .map(|w| segment_distance(p, w[0], w[1], scale))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Closed polygon with edges binned into horizontal slabs for fast
/// even-odd membership queries.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonIndex {
    vertices: Vec<PhaseState>,
    y_min: f64,
    slab_height: f64,
    slabs: Vec<Vec<u32>>,
}

impl PolygonIndex {
    pub fn new(vertices: Vec<PhaseState>) -> Self {
        let n = vertices.len();
        let (y_min, y_max) = vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.domega), hi.max(p.domega))
            });
        let count = ((n as f64).sqrt().ceil() as usize).clamp(1, 4096);
        let span = if y_max > y_min { y_max - y_min } else { 1.0 };
        let slab_height = span / count as f64;
        let mut slabs = vec![Vec::new(); if n == 0 { 0 } else { count }];
        if n >= 2 {
            for i in 0..n {
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let lo = a.domega.min(b.domega) - BOUNDARY_TIE;
                let hi = a.domega.max(b.domega) + BOUNDARY_TIE;
                let s0 = (((lo - y_min) / slab_height).floor().max(0.0) as usize).min(count - 1);
                let s1 = (((hi - y_min) / slab_height).floor().max(0.0) as usize).min(count - 1);
                for slab in &mut slabs[s0..=s1] {
                    slab.push(i as u32);
                }
            }
        }
        Self {
            vertices,
            y_min,
            slab_height,
            slabs,
        }
    }

    pub fn vertices(&self) -> &[PhaseState] {
        &self.vertices
    }

    /// Even-odd membership; points within [`BOUNDARY_TIE`] of an edge are
    /// inside.
    pub fn contains(&self, p: PhaseState) -> bool {
        let n = self.vertices.len();
        if n < 3 || self.slabs.is_empty() {
            return false;
        }
        let pos = (p.domega - self.y_min) / self.slab_height;
        if pos < -1.0 || pos > self.slabs.len() as f64 + 1.0 {
            return false;
        }
        let slab = (pos.floor().max(0.0) as usize).min(self.slabs.len() - 1);
        let mut inside = false;
        for &i in &self.slabs[slab] {
            let i = i as usize;
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            if segment_distance(p, a, b, (1.0, 1.0)) <= BOUNDARY_TIE {
                return true;
            }
            if (a.domega > p.domega) != (b.domega > p.domega) {
                let x = a.delta + (p.domega - a.domega) / (b.domega - a.domega) * (b.delta - a.delta);
                if x > p.delta {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }
}

/// Position of a boundary point along the window perimeter, measured
/// counter-clockwise from the bottom-left corner.
pub fn perimeter_position(w: &Window, p: PhaseState) -> f64 {
    let (width, height) = (w.width(), w.height());
    let d = [
        (p.domega - w.domega_min).abs(),
        (p.delta - w.delta_max).abs(),
        (p.domega - w.domega_max).abs(),
        (p.delta - w.delta_min).abs(),
    ];
    let edge = (0..4).min_by(|&i, &j| d[i].total_cmp(&d[j])).unwrap_or(0);
    match edge {
        0 => (p.delta - w.delta_min).clamp(0.0, width),
        1 => width + (p.domega - w.domega_min).clamp(0.0, height),
        2 => width + height + (w.delta_max - p.delta).clamp(0.0, width),
        _ => 2.0 * width + height + (w.domega_max - p.domega).clamp(0.0, height),
    }
}

/// Window corners passed when walking counter-clockwise along the
/// boundary from `from` to `to`, in walking order.
pub fn window_walk(w: &Window, from: PhaseState, to: PhaseState) -> Vec<PhaseState> {
    let (width, height) = (w.width(), w.height());
    let perimeter = 2.0 * (width + height);
    let s_from = perimeter_position(w, from);
    let s_to = perimeter_position(w, to);
    let span = (s_to - s_from).rem_euclid(perimeter);
    let corners = [
        (width, PhaseState::new(w.delta_max, w.domega_min)),
        (width + height, PhaseState::new(w.delta_max, w.domega_max)),
        (2.0 * width + height, PhaseState::new(w.delta_min, w.domega_max)),
        (perimeter, PhaseState::new(w.delta_min, w.domega_min)),
    ];
    let mut out: Vec<(f64, PhaseState)> = corners
        .iter()
        .map(|&(s, c)| ((s - s_from).rem_euclid(perimeter), c))
        .filter(|&(off, _)| off > 0.0 && off < span)
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.into_iter().map(|(_, c)| c).collect()
}

/// Point where the segment from `inside` to `outside` leaves the window.
pub fn window_exit_point(w: &Window, inside: PhaseState, outside: PhaseState) -> PhaseState {
    let dx = outside.delta - inside.delta;
    let dy = outside.domega - inside.domega;
    let mut t: f64 = 1.0;
    let mut limit = |bound: f64, start: f64, delta: f64| {
        if delta != 0.0 {
            let s = (bound - start) / delta;
            if (0.0..t).contains(&s) {
                t = s;
            }
        }
    };
    if outside.delta > w.delta_max {
        limit(w.delta_max, inside.delta, dx);
    }
    if outside.delta < w.delta_min {
        limit(w.delta_min, inside.delta, dx);
    }
    if outside.domega > w.domega_max {
        limit(w.domega_max, inside.domega, dy);
    }
    if outside.domega < w.domega_min {
        limit(w.domega_min, inside.domega, dy);
    }
    PhaseState {
        delta: (inside.delta + t * dx).clamp(w.delta_min, w.delta_max),
        domega: (inside.domega + t * dy).clamp(w.domega_min, w.domega_max),
    }
}

/// Polygon clipped to the window (Sutherland–Hodgman). A concave polygon
/// that leaves and re-enters across one edge keeps zero-width spans along
/// that edge, which change neither its area nor its even-odd membership.
pub fn clip_to_window(poly: &[PhaseState], w: &Window) -> Vec<PhaseState> {
    type Inside = fn(&Window, PhaseState) -> bool;
    type Cut = fn(&Window, PhaseState, PhaseState) -> PhaseState;
    let planes: [(Inside, Cut); 4] = [
        (|w, p| p.delta >= w.delta_min, |w, a, b| at_delta(a, b, w.delta_min)),
        (|w, p| p.delta <= w.delta_max, |w, a, b| at_delta(a, b, w.delta_max)),
        (|w, p| p.domega >= w.domega_min, |w, a, b| at_domega(a, b, w.domega_min)),
        (|w, p| p.domega <= w.domega_max, |w, a, b| at_domega(a, b, w.domega_max)),
    ];
    let mut out = poly.to_vec();
    for (inside, cut) in planes {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let mut prev = input[input.len() - 1];
        for &cur in &input {
            match (inside(w, prev), inside(w, cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(cut(w, prev, cur)),
                (false, true) => {
                    out.push(cut(w, prev, cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
            prev = cur;
        }
    }
    out.dedup();
    out
}

fn at_delta(a: PhaseState, b: PhaseState, x: f64) -> PhaseState {
    let t = (x - a.delta) / (b.delta - a.delta);
    PhaseState::new(x, a.domega + t * (b.domega - a.domega))
}

fn at_domega(a: PhaseState, b: PhaseState, y: f64) -> PhaseState {
    let t = (y - a.domega) / (b.domega - a.domega);
    PhaseState::new(a.delta + t * (b.delta - a.delta), y)
}
