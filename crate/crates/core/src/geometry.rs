//! Planar polyline curves and the pre-processing steps shared by every
//! boundary-mapping method: equal-chord resampling, orientation matching,
//! similarity pre-scaling and splitting at intersections.
//!
//! Coordinates are in micrometres. Closed curves are stored without a
//! repeated closing point and are counter-clockwise-positive.

use std::fs;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consecutive points closer than this are considered identical.
pub const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    #[inline]
    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector in the same direction, or zero for the zero vector.
    pub fn normalized(self) -> Point2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Point2::ORIGIN
        }
    }

    /// Right-hand perpendicular `(y, -x)`; the outward normal of a CCW edge.
    #[inline]
    pub fn perp_right(self) -> Point2 {
        Point2::new(self.y, -self.x)
    }

    #[inline]
    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + t * (other.x - self.x),
            self.y + t * (other.y - self.y),
        )
    }

    #[inline]
    pub(crate) fn coord(self) -> robust::Coord<f64> {
        robust::Coord {
            x: self.x,
            y: self.y,
        }
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point2 {
    #[inline]
    fn add_assign(&mut self, o: Point2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    #[inline]
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    #[inline]
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Exact orientation of `c` relative to the directed line `a -> b`:
/// positive if left, negative if right, zero if collinear.
#[inline]
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    robust::orient2d(a.coord(), b.coord(), c.coord())
}

/// Closed-segment intersection test using exact orientation predicates.
/// Touching and collinear-overlap contacts count as intersections.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// For `p` collinear with `a-b`: whether it lies inside the closed segment.
fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Intersection points of two closed segments (0, 1, or 2 for a collinear
/// overlap). Vertex contacts return the exact vertex coordinates.
pub fn segment_intersection_points(a: Point2, b: Point2, c: Point2, d: Point2) -> Vec<Point2> {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 == 0.0 && o2 == 0.0 {
        // collinear: report the ends of the overlap interval
        let dir = b - a;
        let len2 = dir.norm_sq();
        if len2 == 0.0 {
            return if on_segment(c, d, a) { vec![a] } else { vec![] };
        }
        let param = |p: Point2| (p - a).dot(dir) / len2;
        let (mut t0, mut t1) = (param(c), param(d));
        let (mut p0, mut p1) = (c, d);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
            std::mem::swap(&mut p0, &mut p1);
        }
        let lo = if t0 <= 0.0 { a } else { p0 };
        let hi = if t1 >= 1.0 { b } else { p1 };
        if t1 < 0.0 || t0 > 1.0 {
            return vec![];
        }
        return if lo == hi { vec![lo] } else { vec![lo, hi] };
    }
    if !segments_intersect(a, b, c, d) {
        return vec![];
    }
    if o1 == 0.0 {
        return vec![c];
    }
    if o2 == 0.0 {
        return vec![d];
    }
    if o3 == 0.0 {
        return vec![a];
    }
    if o4 == 0.0 {
        return vec![b];
    }
    let r = b - a;
    let s = d - c;
    let t = (c - a).cross(s) / r.cross(s);
    vec![a.lerp(b, t)]
}

/// Closest point to `p` on segment `a-b` and its parameter in `[0, 1]`.
pub fn closest_on_segment(a: Point2, b: Point2, p: Point2) -> (Point2, f64) {
    let e = b - a;
    let len2 = e.norm_sq();
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(e) / len2).clamp(0.0, 1.0);
    (a.lerp(b, t), t)
}

/// Even-odd point-in-polygon test for a closed ring.
pub fn point_in_polygon(p: Point2, ring: &[Point2]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub point: Point2,
    pub segment: usize,
    pub t: f64,
    pub distance: f64,
    /// Arc-length coordinate of `point` measured from the first vertex.
    pub arclength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    points: Vec<Point2>,
    closed: bool,
    label: String,
}

impl Curve {
    /// Builds a curve, dropping a repeated closing point on closed input.
    ///
    /// Checks point count, finiteness and consecutive duplicates. Simplicity
    /// of closed curves is checked separately by [`Curve::validate_simple`]
    /// because it is quadratic in the worst case.
    pub fn new(points: Vec<Point2>, closed: bool, label: impl Into<String>) -> Result<Self> {
        Self::with_tolerance(points, closed, label, DUPLICATE_TOLERANCE)
    }

    pub fn with_tolerance(
        mut points: Vec<Point2>,
        closed: bool,
        label: impl Into<String>,
        duplicate_tol: f64,
    ) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate at point {i}")));
        }
        if closed && points.len() > 1 && points[0].dist(points[points.len() - 1]) <= duplicate_tol
        {
            points.pop();
        }
        let min = if closed { 3 } else { 2 };
        if points.len() < min {
            return Err(Error::InvalidInput(format!(
                "{} curve needs at least {min} points, got {}",
                if closed { "closed" } else { "open" },
                points.len()
            )));
        }
        for i in 1..points.len() {
            if points[i].dist(points[i - 1]) <= duplicate_tol {
                return Err(Error::InvalidInput(format!(
                    "consecutive points {} and {i} coincide",
                    i - 1
                )));
            }
        }
        Ok(Curve {
            points,
            closed,
            label: label.into(),
        })
    }

    /// Closed curve helper for tests and fixtures: `n` samples of `f(theta)`.
    pub fn from_polar(n: usize, label: &str, f: impl Fn(f64) -> Point2) -> Result<Self> {
        let pts = (0..n)
            .map(|i| f(std::f64::consts::TAU * i as f64 / n as f64))
            .collect();
        Curve::new(pts, true, label)
    }

    pub fn circle(center: Point2, radius: f64, n: usize) -> Result<Self> {
        Curve::from_polar(n, "circle", |t| {
            center + Point2::new(radius * t.cos(), radius * t.sin())
        })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn segment_count(&self) -> usize {
        if self.closed {
            self.points.len()
        } else {
            self.points.len() - 1
        }
    }

    /// Segment `i` as `(start, end)`, wrapping for closed curves.
    #[inline]
    pub fn segment(&self, i: usize) -> (Point2, Point2) {
        let n = self.points.len();
        (self.points[i], self.points[(i + 1) % n])
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        (0..self.segment_count()).map(move |i| self.segment(i))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    /// Cumulative arc length at each vertex (and at the closing vertex for
    /// closed curves, so the result has `segment_count() + 1` entries).
    pub fn cumulative_length(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.segment_count() + 1);
        let mut s = 0.0;
        acc.push(0.0);
        for (a, b) in self.segments() {
            s += a.dist(b);
            acc.push(s);
        }
        acc
    }

    /// Point at arc-length coordinate `s` (clamped for open curves, wrapped
    /// for closed ones).
    pub fn point_at_arclength(&self, s: f64) -> Point2 {
        let cum = self.cumulative_length();
        let total = *cum.last().unwrap();
        let s = if self.closed {
            s.rem_euclid(total)
        } else {
            s.clamp(0.0, total)
        };
        let i = match cum.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.segment_count() - 1),
            Err(i) => i - 1,
        };
        let (a, b) = self.segment(i);
        let len = cum[i + 1] - cum[i];
        if len == 0.0 {
            a
        } else {
            a.lerp(b, (s - cum[i]) / len)
        }
    }

    /// Shoelace area, positive for counter-clockwise curves.
    pub fn signed_area(&self) -> Result<f64> {
        if !self.closed {
            return Err(Error::InvalidInput(format!(
                "signed area of open curve '{}'",
                self.label
            )));
        }
        Ok(ring_signed_area(&self.points))
    }

    /// Arc-length weighted centroid of the polyline.
    pub fn centroid(&self) -> Point2 {
        let mut acc = Point2::ORIGIN;
        let mut total = 0.0;
        for (a, b) in self.segments() {
            let l = a.dist(b);
            acc += (a + b) * (0.5 * l);
            total += l;
        }
        if total == 0.0 {
            self.points[0]
        } else {
            acc * (1.0 / total)
        }
    }

    /// Root-mean-square distance from `center`, integrated exactly along the
    /// polyline by arc length.
    pub fn rms_radius(&self, center: Point2) -> f64 {
        let mut acc = 0.0;
        let mut total = 0.0;
        for (a, b) in self.segments() {
            let l = a.dist(b);
            let (u, v) = (a - center, b - center);
            // integral of |u + t (v - u)|^2 over t in [0,1]
            acc += l * (u.norm_sq() + u.dot(v) + v.norm_sq()) / 3.0;
            total += l;
        }
        if total == 0.0 {
            0.0
        } else {
            (acc / total).sqrt()
        }
    }

    pub fn reversed(&self) -> Curve {
        let mut pts = self.points.clone();
        if self.closed {
            pts[1..].reverse();
        } else {
            pts.reverse();
        }
        Curve {
            points: pts,
            closed: self.closed,
            label: self.label.clone(),
        }
    }

    /// Same closed loop starting from vertex `k`.
    pub fn rotated(&self, k: usize) -> Curve {
        let mut pts = self.points.clone();
        if self.closed {
            pts.rotate_left(k % self.points.len());
        }
        Curve {
            points: pts,
            closed: self.closed,
            label: self.label.clone(),
        }
    }

    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Curve {
        Curve {
            points: self.points.iter().map(|&p| f(p)).collect(),
            closed: self.closed,
            label: self.label.clone(),
        }
    }

    /// Nearest point on the polyline.
    pub fn project(&self, p: Point2) -> Projection {
        let mut best = Projection {
            point: self.points[0],
            segment: 0,
            t: 0.0,
            distance: f64::INFINITY,
            arclength: 0.0,
        };
        let mut s = 0.0;
        for (i, (a, b)) in self.segments().enumerate() {
            let (q, t) = closest_on_segment(a, b, p);
            let d = q.dist(p);
            let l = a.dist(b);
            if d < best.distance {
                best = Projection {
                    point: q,
                    segment: i,
                    t,
                    distance: d,
                    arclength: s + t * l,
                };
            }
            s += l;
        }
        best
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        self.project(p).distance
    }

    /// Ray-casting intersections of `origin + s * dir` with the polyline,
    /// returned as `(s, point)` pairs for every segment hit.
    pub fn ray_hits(&self, origin: Point2, dir: Point2) -> Vec<(f64, Point2)> {
        let mut hits = Vec::new();
        let denom_scale = dir.norm();
        if denom_scale == 0.0 {
            return hits;
        }
        for (a, b) in self.segments() {
            let e = b - a;
            let denom = dir.cross(e);
            if denom.abs() <= 1e-14 * denom_scale * e.norm() {
                continue;
            }
            let w = a - origin;
            let s = w.cross(e) / denom;
            let u = w.cross(dir) / denom;
            if (-1e-12..=1.0 + 1e-12).contains(&u) {
                hits.push((s, origin + dir * s));
            }
        }
        hits
    }

    /// Checks that a closed curve has no self-intersections (adjacent
    /// segments may share their common vertex only).
    pub fn validate_simple(&self) -> Result<()> {
        if let Some((i, j)) = self.first_self_intersection() {
            return Err(Error::Intersection(format!(
                "curve '{}' self-intersects at segments {i} and {j}",
                self.label
            )));
        }
        Ok(())
    }

    pub fn is_simple(&self) -> bool {
        self.first_self_intersection().is_none()
    }

    fn first_self_intersection(&self) -> Option<(usize, usize)> {
        let m = self.segment_count();
        let grid = SegmentGrid::new(self.segments().collect());
        for i in 0..m {
            let (a, b) = self.segment(i);
            for j in grid.candidates(a, b) {
                if j <= i {
                    continue;
                }
                let adjacent = j == i + 1 || (self.closed && i == 0 && j == m - 1);
                let (c, d) = self.segment(j);
                if adjacent {
                    // shared vertex allowed; anything beyond it is a fold-back
                    let shared = if j == i + 1 { b } else { a };
                    let other_end = if j == i + 1 { d } else { c };
                    let own_end = if j == i + 1 { a } else { b };
                    if orient(own_end, shared, other_end) == 0.0
                        && (other_end - shared).dot(own_end - shared) > 0.0
                    {
                        return Some((i, j));
                    }
                    continue;
                }
                if segments_intersect(a, b, c, d) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Reads a curve from `x,y` CSV plus the JSON descriptor next to it
    /// (same stem, `.json`). Missing descriptor defaults to an open curve
    /// labelled by the file stem.
    pub fn read_csv(path: &Path) -> Result<Curve> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").trim();
        if header.replace(' ', "") != "x,y" {
            return Err(Error::parse(path, "expected header 'x,y'"));
        }
        let mut pts = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let mut next = || -> Result<f64> {
                it.next()
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(path, format!("bad row {}: '{line}'", lineno + 2)))
            };
            pts.push(Point2::new(next()?, next()?));
        }
        let desc_path = descriptor_path(path);
        let desc = if desc_path.exists() {
            let raw = fs::read_to_string(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
            serde_json::from_str::<CurveDescriptor>(&raw)
                .map_err(|e| Error::parse(&desc_path, e.to_string()))?
        } else {
            CurveDescriptor {
                closed: false,
                label: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                units: "um".into(),
            }
        };
        if desc.units != "um" {
            return Err(Error::parse(&desc_path, format!("unsupported units '{}'", desc.units)));
        }
        let curve = Curve::new(pts, desc.closed, desc.label)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        if curve.closed {
            curve
                .validate_simple()
                .map_err(|e| Error::parse(path, e.to_string()))?;
        }
        Ok(curve)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("x,y\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.x, p.y));
        }
        s
    }

    /// Writes the CSV and its descriptor; returns the descriptor path.
    pub fn write_csv(&self, path: &Path) -> Result<PathBuf> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))?;
        let desc = CurveDescriptor {
            closed: self.closed,
            label: self.label.clone(),
            units: "um".into(),
        };
        let desc_path = descriptor_path(path);
        let json = serde_json::to_string_pretty(&desc)?;
        fs::write(&desc_path, json + "\n").map_err(|e| Error::io(&desc_path, e))?;
        Ok(desc_path)
    }
}

pub(crate) fn ring_signed_area(pts: &[Point2]) -> f64 {
    let n = pts.len();
    let mut a = 0.0;
    for i in 0..n {
        a += pts[i].cross(pts[(i + 1) % n]);
    }
    0.5 * a
}

/// Sidecar JSON describing a curve CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveDescriptor {
    pub closed: bool,
    pub label: String,
    #[serde(default = "default_units")]
    pub units: String,
}

fn default_units() -> String {
    "um".into()
}

pub fn descriptor_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Uniform-grid bucket index over line segments for candidate pair queries.
pub(crate) struct SegmentGrid {
    segs: Vec<(Point2, Point2)>,
    origin: Point2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl SegmentGrid {
    pub(crate) fn new(segs: Vec<(Point2, Point2)>) -> Self {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut total = 0.0;
        for &(a, b) in &segs {
            for p in [a, b] {
                lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
            total += a.dist(b);
        }
        let n = segs.len().max(1);
        let extent = (hi.x - lo.x).max(hi.y - lo.y).max(1e-12);
        let cell = (total / n as f64).max(extent / 512.0).max(1e-12);
        let nx = (((hi.x - lo.x) / cell) as usize + 1).min(1024);
        let ny = (((hi.y - lo.y) / cell) as usize + 1).min(1024);
        let cell = cell.max((hi.x - lo.x) / nx as f64).max((hi.y - lo.y) / ny as f64);
        let mut grid = SegmentGrid {
            segs,
            origin: lo,
            cell,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        };
        for i in 0..grid.segs.len() {
            let (a, b) = grid.segs[i];
            let (x0, y0, x1, y1) = grid.cell_range(a, b);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    grid.buckets[cy * nx + cx].push(i);
                }
            }
        }
        grid
    }

    fn cell_range(&self, a: Point2, b: Point2) -> (usize, usize, usize, usize) {
        let f = |v: f64, o: f64, n: usize| -> usize {
            (((v - o) / self.cell).floor().max(0.0) as usize).min(n - 1)
        };
        (
            f(a.x.min(b.x), self.origin.x, self.nx),
            f(a.y.min(b.y), self.origin.y, self.ny),
            f(a.x.max(b.x), self.origin.x, self.nx),
            f(a.y.max(b.y), self.origin.y, self.ny),
        )
    }

    /// Sorted, deduplicated indices of segments whose cells overlap `a-b`'s.
    pub(crate) fn candidates(&self, a: Point2, b: Point2) -> Vec<usize> {
        let (x0, y0, x1, y1) = self.cell_range(a, b);
        let mut out = Vec::new();
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                out.extend_from_slice(&self.buckets[cy * self.nx + cx]);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Resamples a curve to exactly `n` points with equal consecutive chord
/// (Euclidean) lengths. Open curves keep both endpoints; closed curves start
/// at their first vertex and close with a chord of the same length.
pub fn resample_equidistant(curve: &Curve, n: usize) -> Result<Curve> {
    let min = if curve.closed { 3 } else { 2 };
    if n < min {
        return Err(Error::InvalidInput(format!(
            "resample needs n >= {min}, got {n}"
        )));
    }
    let total = curve.length();
    if total < 1e-9 {
        return Err(Error::Degenerate(format!(
            "curve '{}' has length {total:e}",
            curve.label
        )));
    }
    let steps = if curve.closed { n } else { n - 1 };
    let walker = ChordWalker::new(curve);

    // Arc position reached after `steps` chords of length d is monotone in d.
    let reach = |d: f64| walker.walk(d, steps).1 - total;
    let (mut lo, mut hi) = (0.0, total / steps as f64);
    if reach(hi) < 0.0 {
        // only possible through rounding; widen
        hi *= 1.0 + 1e-9;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reach(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // `lo` is the largest bracket known to complete every step
    let d = if lo > 0.0 { lo } else { 0.5 * (lo + hi) };
    let (mut pts, _) = walker.walk(d, steps);
    if curve.closed {
        pts.truncate(n);
    } else {
        pts.truncate(n - 1);
        pts.push(*curve.points.last().unwrap());
    }
    if pts.len() != n {
        return Err(Error::Degenerate(format!(
            "could not resample curve '{}' to {n} points",
            curve.label
        )));
    }
    Curve::with_tolerance(pts, curve.closed, curve.label.clone(), 0.0)
}

/// Walks a polyline in steps of constant Euclidean chord length.
struct ChordWalker<'a> {
    curve: &'a Curve,
    cum: Vec<f64>,
}

impl<'a> ChordWalker<'a> {
    fn new(curve: &'a Curve) -> Self {
        ChordWalker {
            cum: curve.cumulative_length(),
            curve,
        }
    }

    /// Returns the visited points (start included) and the arc coordinate of
    /// the last step; running off an open end reports the overshoot as extra
    /// arc length so the result stays monotone in `d`.
    fn walk(&self, d: f64, steps: usize) -> (Vec<Point2>, f64) {
        let m = self.curve.segment_count();
        let total = *self.cum.last().unwrap();
        let mut pts = Vec::with_capacity(steps + 1);
        let mut seg = 0usize; // segment index, may exceed m for closed wrap
        let mut t = 0.0;
        let mut p = self.curve.points[0];
        pts.push(p);
        let mut arc = 0.0;
        let max_seg = if self.curve.closed { 2 * m } else { m };
        for _ in 0..steps {
            let mut found = false;
            while seg < max_seg {
                let (a, b) = self.curve.segment(seg % m);
                let e = b - a;
                let len2 = e.norm_sq();
                // solve |a + u e - p| = d for the root u > t
                let w = a - p;
                let bq = w.dot(e);
                let cq = w.norm_sq() - d * d;
                let disc = bq * bq - len2 * cq;
                if disc >= 0.0 {
                    let u = (-bq + disc.sqrt()) / len2;
                    if u >= t && u <= 1.0 {
                        t = u;
                        p = a.lerp(b, u);
                        let lap = (seg / m) as f64 * total;
                        arc = lap + self.cum[seg % m] + u * (self.cum[seg % m + 1] - self.cum[seg % m]);
                        found = true;
                        break;
                    }
                }
                seg += 1;
                t = 0.0;
            }
            if !found {
                let end = if self.curve.closed {
                    self.curve.points[0]
                } else {
                    *self.curve.points.last().unwrap()
                };
                let lap = if self.curve.closed { 2.0 * total } else { total };
                return (pts, lap + (d - end.dist(p)).max(0.0) + 1e-300);
            }
            pts.push(p);
        }
        (pts, arc)
    }
}

/// Makes closed curves counter-clockwise; for two open curves reverses `c2`
/// when that lowers the summed endpoint-to-endpoint distance.
pub fn normalize_direction(c1: &Curve, c2: &Curve) -> (Curve, Curve) {
    let orient_ccw = |c: &Curve| {
        if c.closed && ring_signed_area(&c.points) < 0.0 {
            c.reversed()
        } else {
            c.clone()
        }
    };
    let a = orient_ccw(c1);
    let mut b = orient_ccw(c2);
    if !a.closed && !b.closed {
        let (a0, a1) = (a.points[0], *a.points.last().unwrap());
        let (b0, b1) = (b.points[0], *b.points.last().unwrap());
        let same = a0.dist(b0) + a1.dist(b1);
        let swapped = a0.dist(b1) + a1.dist(b0);
        if swapped < same {
            b = b.reversed();
        }
    }
    (a, b)
}

/// Uniform scale about `reference` followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveTransform {
    pub scale: f64,
    pub translation: Point2,
    pub reference: Point2,
}

impl CurveTransform {
    pub fn identity() -> Self {
        CurveTransform {
            scale: 1.0,
            translation: Point2::ORIGIN,
            reference: Point2::ORIGIN,
        }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        self.reference + (p - self.reference) * self.scale + self.translation
    }

    pub fn apply_inverse(&self, q: Point2) -> Point2 {
        self.reference + (q - self.translation - self.reference) * (1.0 / self.scale)
    }

    pub fn apply_curve(&self, c: &Curve) -> Curve {
        c.map_points(|p| self.apply(p))
    }
}

/// Stretches `c1` about its centroid so that its RMS radius (closed) or
/// total length (open) equals that of `c2`, and moves its centroid onto
/// `c2`'s.
pub fn similarity_prescale(c1: &Curve, c2: &Curve) -> Result<(Curve, CurveTransform)> {
    if c1.closed != c2.closed {
        return Err(Error::InvalidInput(
            "prescale needs both curves open or both closed".into(),
        ));
    }
    let (g1, g2) = (c1.centroid(), c2.centroid());
    let (s1, s2) = if c1.closed {
        (c1.rms_radius(g1), c2.rms_radius(g2))
    } else {
        (c1.length(), c2.length())
    };
    if s1 < 1e-12 || s2 < 1e-12 {
        return Err(Error::Degenerate("zero-size curve in prescale".into()));
    }
    let tf = CurveTransform {
        scale: s2 / s1,
        translation: g2 - g1,
        reference: g1,
    };
    Ok((tf.apply_curve(c1), tf))
}

/// Splits `b1` at every point where it meets `b2`. Contacts at an open
/// `b1`'s own endpoints do not split it. Returns the pieces of `b1` in order
/// and the split points.
pub fn split_at_intersection(b1: &Curve, b2: &Curve) -> (Vec<Curve>, Vec<Point2>) {
    let tol = 1e-12 * (1.0 + b1.length());
    // (segment index, parameter, point)
    let mut hits: Vec<(usize, f64, Point2)> = Vec::new();
    for (i, (a, b)) in b1.segments().enumerate() {
        let e = b - a;
        let len2 = e.norm_sq();
        for (c, d) in b2.segments() {
            for p in segment_intersection_points(a, b, c, d) {
                let t = if len2 > 0.0 { (p - a).dot(e) / len2 } else { 0.0 };
                hits.push((i, t.clamp(0.0, 1.0), p));
            }
        }
    }
    // canonicalize hits on b1 vertices to (next segment, 0)
    let m = b1.segment_count();
    for h in hits.iter_mut() {
        if h.2 == b1.segment(h.0).1 || h.1 >= 1.0 {
            if b1.closed || h.0 + 1 < m {
                *h = ((h.0 + 1) % m, 0.0, b1.segment(h.0).1);
            } else {
                h.2 = b1.segment(h.0).1;
                h.1 = 1.0;
            }
        } else if h.2 == b1.segment(h.0).0 {
            h.1 = 0.0;
        }
    }
    hits.sort_by(|x, y| (x.0, x.1).partial_cmp(&(y.0, y.1)).unwrap());
    hits.dedup_by(|x, y| x.2.dist(y.2) <= tol);
    if b1.closed && hits.len() > 1 && hits[0].2.dist(hits[hits.len() - 1].2) <= tol {
        hits.pop();
    }
    if !b1.closed {
        let (first, last) = (b1.points[0], *b1.points.last().unwrap());
        hits.retain(|h| h.2.dist(first) > tol && h.2.dist(last) > tol);
    }
    if hits.is_empty() {
        return (vec![b1.clone()], Vec::new());
    }

    // Point sequence with split markers.
    let pts = &b1.points;
    let mut seq: Vec<(Point2, bool)> = Vec::new();
    let mut k = 0;
    for i in 0..m {
        let a = pts[i];
        let mut vertex_is_hit = false;
        while k < hits.len() && hits[k].0 == i && hits[k].1 == 0.0 {
            vertex_is_hit = true;
            k += 1;
        }
        seq.push((a, vertex_is_hit));
        while k < hits.len() && hits[k].0 == i {
            seq.push((hits[k].2, true));
            k += 1;
        }
    }
    if !b1.closed {
        seq.push((*pts.last().unwrap(), false));
    }

    let mut pieces: Vec<Vec<Point2>> = Vec::new();
    if b1.closed {
        let start = seq.iter().position(|s| s.1).unwrap();
        seq.rotate_left(start);
        let first = seq[0].0;
        let mut cur = vec![first];
        for &(p, split) in &seq[1..] {
            cur.push(p);
            if split {
                pieces.push(std::mem::replace(&mut cur, vec![p]));
            }
        }
        cur.push(first);
        pieces.push(cur);
    } else {
        let mut cur = vec![seq[0].0];
        for &(p, split) in &seq[1..] {
            cur.push(p);
            if split {
                pieces.push(std::mem::replace(&mut cur, vec![p]));
            }
        }
        pieces.push(cur);
    }
    let label = b1.label.clone();
    let curves = pieces
        .into_iter()
        .enumerate()
        .map(|(i, mut p)| {
            p.dedup_by(|x, y| x.dist(*y) <= tol);
            Curve {
                points: p,
                closed: false,
                label: format!("{label}.{i}"),
            }
        })
        .collect();
    (curves, hits.into_iter().map(|h| h.2).collect())
}
