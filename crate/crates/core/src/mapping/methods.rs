use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DisplacementField, MappingMethod};
use crate::error::{Error, Result};
use crate::geometry::{resample_equidistant, segments_intersect, Curve, Point2, SegmentGrid};

/// Largest tolerated share of normal rays that miss the target.
pub const MAX_MISSING_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldQuality {
    /// Pairs of displacement segments that intersect.
    pub crossing_count: usize,
    /// Share of the target arc length farther than `eps` from every endpoint.
    pub unmapped_fraction: f64,
    /// Largest ratio of adjacent endpoint spacing to source spacing.
    pub max_stretch: f64,
}

/// Each point of `c1` goes to its nearest point on the `c2` polyline.
pub fn map_minimal_distance(c1: &Curve, c2: &Curve) -> DisplacementField {
    let vectors = c1.points().par_iter().map(|&p| c2.project(p).point - p).collect();
    DisplacementField::new(c1.points().to_vec(), vectors, c1.is_closed(), MappingMethod::MinimalDistance)
        .expect("curves hold at least two finite points")
}

/// Index-wise correspondence after resampling both curves to `n` points.
/// Closed curves use the cyclic offset with least total squared length.
pub fn map_uniform(c1: &Curve, c2: &Curve, n: usize) -> Result<DisplacementField> {
    if c1.is_closed() != c2.is_closed() {
        return Err(Error::InvalidInput(
            "uniform mapping needs both curves open or both closed".into(),
        ));
    }
    let a = resample_equidistant(c1, n)?;
    let b = resample_equidistant(c2, n)?;
    let (p, q) = (a.points(), b.points());
    let offset = if a.is_closed() {
        (0..n)
            .into_par_iter()
            .map(|k| {
                let cost: f64 = (0..n).map(|i| (q[(i + k) % n] - p[i]).norm_sq()).sum();
                (k, cost)
            })
            .reduce(|| (0, f64::INFINITY), |x, y| if y.1 < x.1 || (y.1 == x.1 && y.0 < x.0) { y } else { x })
            .0
    } else {
        0
    };
    let vectors = (0..n).map(|i| q[(i + offset) % n] - p[i]).collect();
    DisplacementField::new(p.to_vec(), vectors, a.is_closed(), MappingMethod::Uniform)
}

/// Outward unit normals at the vertices of a polyline: the normalized sum
/// of the adjacent segment normals (CCW curves give outward normals).
pub fn vertex_normals(c: &Curve) -> Vec<Point2> {
    let p = c.points();
    let n = p.len();
    let seg_normal = |i: usize| (p[(i + 1) % n] - p[i]).perp_right().normalized();
    (0..n)
        .map(|i| {
            let prev = if i > 0 { Some(seg_normal(i - 1)) } else if c.is_closed() { Some(seg_normal(n - 1)) } else { None };
            let next = if i + 1 < n || c.is_closed() { Some(seg_normal(i)) } else { None };
            match (prev, next) {
                (Some(a), Some(b)) => {
                    let s = (a + b).normalized();
                    if s == Point2::ORIGIN {
                        a
                    } else {
                        s
                    }
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => Point2::ORIGIN,
            }
        })
        .collect()
}

/// Raw normal correspondence from the points of `from` onto `to`:
/// targets and indices of samples whose ray missed.
fn normal_targets(from: &Curve, to: &Curve) -> (Vec<Point2>, Vec<usize>) {
    let scale = from.points().iter().chain(to.points()).fold(1.0f64, |m, p| m.max(p.norm()));
    let tol = 1e-9 * scale;
    let normals = vertex_normals(from);
    let hits: Vec<Option<Point2>> = from
        .points()
        .par_iter()
        .zip(&normals)
        .map(|(&p, &nrm)| {
            let mut fwd: Option<(f64, Point2)> = None;
            let mut back: Option<(f64, Point2)> = None;
            for (s, q) in to.ray_hits(p, nrm) {
                if s >= -tol {
                    if fwd.map_or(true, |f| s < f.0) {
                        fwd = Some((s, q));
                    }
                } else if back.map_or(true, |b| s > b.0) {
                    back = Some((s, q));
                }
            }
            fwd.or(back).map(|h| h.1)
        })
        .collect();
    let missing: Vec<usize> = hits.iter().enumerate().filter(|h| h.1.is_none()).map(|h| h.0).collect();
    let targets = hits
        .into_iter()
        .zip(from.points())
        .map(|(h, &p)| h.unwrap_or_else(|| to.project(p).point))
        .collect();
    (targets, missing)
}

/// Correspondence along vertex normals to the nearest crossing with the
/// target (forward direction preferred). With `reverse`, rays are cast from
/// `c2` onto `c1` and the pairs are inverted so the field still maps
/// `c1` to `c2`.
pub fn map_normal(c1: &Curve, c2: &Curve, reverse: bool) -> Result<DisplacementField> {
    let (from, to) = if reverse { (c2, c1) } else { (c1, c2) };
    let (targets, missing) = normal_targets(from, to);
    let frac = missing.len() as f64 / from.len() as f64;
    if frac > MAX_MISSING_FRACTION {
        return Err(Error::Mapping(format!(
            "{:.0}% of normal rays miss the target curve; use diffusion mapping instead",
            100.0 * frac
        )));
    }
    let field = if reverse {
        let vectors = from.points().iter().zip(&targets).map(|(&q, &h)| q - h).collect();
        DisplacementField::new(targets, vectors, c1.is_closed(), MappingMethod::ReverseNormal)?
    } else {
        let vectors = from.points().iter().zip(&targets).map(|(&p, &h)| h - p).collect();
        DisplacementField::new(from.points().to_vec(), vectors, c1.is_closed(), MappingMethod::Normal)?
    };
    Ok(field.with_missing(missing))
}

/// Number of intersecting pairs among the displacement segments.
pub fn crossing_count(field: &DisplacementField) -> usize {
    let segs: Vec<(Point2, Point2)> = field.sources().iter().zip(field.targets()).map(|(&s, t)| (s, t)).collect();
    let grid = SegmentGrid::new(segs.clone());
    (0..segs.len())
        .into_par_iter()
        .map(|i| {
            let (a, b) = segs[i];
            grid.candidates(a, b)
                .into_iter()
                .filter(|&j| j > i && segments_intersect(a, b, segs[j].0, segs[j].1))
                .count()
        })
        .sum()
}

/// Length of `a-b` within distance `eps` of any of `pts`.
fn covered_length(a: Point2, b: Point2, pts: &[Point2], eps: f64) -> f64 {
    let e = b - a;
    let len2 = e.norm_sq();
    let len = len2.sqrt();
    if len == 0.0 {
        return 0.0;
    }
    let mut iv: Vec<(f64, f64)> = pts
        .iter()
        .filter_map(|&q| {
            // |a + t e - q|^2 <= eps^2
            let w = a - q;
            let bq = w.dot(e) / len2;
            let c = (w.norm_sq() - eps * eps) / len2;
            let disc = bq * bq - c;
            if disc < 0.0 {
                return None;
            }
            let r = disc.sqrt();
            let (lo, hi) = ((-bq - r).max(0.0), (-bq + r).min(1.0));
            (lo < hi).then_some((lo, hi))
        })
        .collect();
    iv.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (lo, hi) in iv {
        match cur {
            Some((cl, ch)) if lo <= ch => cur = Some((cl, ch.max(hi))),
            Some((cl, ch)) => {
                total += ch - cl;
                cur = Some((lo, hi));
            }
            None => cur = Some((lo, hi)),
        }
    }
    if let Some((cl, ch)) = cur {
        total += ch - cl;
    }
    total * len
}

pub fn field_quality(field: &DisplacementField, c2: &Curve, eps: f64) -> FieldQuality {
    let targets = field.targets();
    let total = c2.length();
    let covered: f64 = c2
        .segments()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(a, b)| covered_length(a, b, &targets, eps))
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let unmapped_fraction = if total > 0.0 { (1.0 - covered / total).clamp(0.0, 1.0) } else { 0.0 };
    let n = field.len();
    let pairs = if field.is_closed() { n } else { n - 1 };
    let src = field.sources();
    let max_stretch = (0..pairs)
        .filter_map(|i| {
            let j = (i + 1) % n;
            let d = src[i].dist(src[j]);
            (d > 0.0).then(|| targets[i].dist(targets[j]) / d)
        })
        .fold(0.0, f64::max);
    FieldQuality {
        crossing_count: crossing_count(field),
        unmapped_fraction,
        max_stretch,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(r: f64, n: usize) -> Curve {
        Curve::circle(Point2::ORIGIN, r, n).unwrap()
    }

    #[test]
    fn minimal_distance_identity_and_radial() {
        let c = circle(1.0, 64);
        assert!(map_minimal_distance(&c, &c).max_length() < 1e-12);
        let f = map_minimal_distance(&circle(1.0, 256), &circle(2.0, 256));
        for v in f.vectors() {
            assert!((v.norm() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn uniform_open_segments() {
        let a = Curve::new(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)], false, "a").unwrap();
        let b = Curve::new(vec![Point2::new(0.0, 1.0), Point2::new(2.0, 1.0)], false, "b").unwrap();
        let f = map_uniform(&a, &b, 3).unwrap();
        let expect = [Point2::new(0.0, 1.0), Point2::new(0.5, 1.0), Point2::new(1.0, 1.0)];
        for (v, e) in f.vectors().iter().zip(expect) {
            assert!(v.dist(e) < 1e-12);
        }
        assert!(map_uniform(&a, &circle(1.0, 8), 3).is_err());
    }

    #[test]
    fn uniform_closed_picks_cyclic_offset() {
        let a = circle(1.0, 32);
        let b = a.rotated(5);
        let f = map_uniform(&a, &b, 32).unwrap();
        assert!(f.max_length() < 1e-9);
    }

    #[test]
    fn normal_concentric_squares() {
        let sq = |h: f64| {
            Curve::new(
                vec![Point2::new(-h, -h), Point2::new(h, -h), Point2::new(h, h), Point2::new(-h, h)],
                true,
                "sq",
            )
            .unwrap()
        };
        let a = resample_equidistant(&sq(1.0), 40).unwrap();
        let f = map_normal(&a, &sq(2.0), false).unwrap();
        for (p, v) in f.sources().iter().zip(f.vectors()) {
            let corner = (p.x.abs() - 1.0).abs() < 1e-9 && (p.y.abs() - 1.0).abs() < 1e-9;
            if corner {
                // bisector normal reaches the outer corner
                assert!((v.norm() - 2f64.sqrt()).abs() < 1e-9);
            } else {
                assert!((v.norm() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normal_reverse_inverts_raw_pairs() {
        let a = circle(1.0, 50);
        let b = circle(1.7, 70);
        let f = map_normal(&a, &b, true).unwrap();
        assert_eq!(f.len(), 70);
        for (t, q) in f.targets().iter().zip(b.points()) {
            assert!(t.dist(*q) < 1e-12);
        }
        for s in f.sources() {
            assert!(a.distance_to(*s) < 1e-9);
        }
    }

    #[test]
    fn normal_misses_are_reported() {
        let a = circle(1.0, 40);
        let far = Curve::circle(Point2::new(50.0, 0.0), 0.5, 40).unwrap();
        assert!(matches!(map_normal(&a, &far, false), Err(Error::Mapping(_))));
    }

    #[test]
    fn quality_of_constructed_fields() {
        let c = circle(1.0, 16);
        let q = field_quality(&DisplacementField::zero(&c, MappingMethod::Uniform).unwrap(), &c, 0.5);
        assert_eq!(q.crossing_count, 0);
        assert_eq!(q.unmapped_fraction, 0.0);
        assert!((q.max_stretch - 1.0).abs() < 1e-12);
        let crossed = DisplacementField::new(
            vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)],
            vec![Point2::new(1.0, 1.0), Point2::new(-1.0, 1.0)],
            false,
            MappingMethod::Uniform,
        )
        .unwrap();
        assert_eq!(crossing_count(&crossed), 1);
    }

    #[test]
    fn covered_length_unions_intervals() {
        let a = Point2::new(0.0, 0.0);
        let b = Point2::new(10.0, 0.0);
        let pts = [Point2::new(1.0, 0.0), Point2::new(1.5, 0.0), Point2::new(9.0, 0.6)];
        // [0, 2.5] and a chord of half-width 0.8 around x = 9
        assert!((covered_length(a, b, &pts, 1.0) - (2.5 + 1.6)).abs() < 1e-12);
    }
}
