use std::collections::{HashMap, HashSet, VecDeque};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{intern, TaggedEdge, TriMesh};
use crate::error::{Error, Result};
use crate::geometry::{
    closest_on_segment, orient, point_in_polygon, segment_intersection_points, Curve, Point2,
    SegmentGrid,
};

/// Point inside a subdomain together with the label its triangles receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSeed {
    pub point: Point2,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangulateOptions {
    /// Minimum interior angle target in degrees.
    pub min_angle: f64,
    /// Upper bound on inserted Steiner points; `None` picks one from the
    /// domain area and `target_h`.
    pub max_steiner: Option<usize>,
}

impl Default for TriangulateOptions {
    fn default() -> Self {
        TriangulateOptions {
            min_angle: 20.0,
            max_steiner: None,
        }
    }
}

/// Quality-conforming triangulation of the domain bounded by `outer`.
///
/// Inner closed curves oriented clockwise are holes; counter-clockwise ones
/// bound labelled subdomains. Open inner curves are internal interfaces and
/// may end on other curves.
pub fn triangulate(
    outer: &Curve,
    inner: &[Curve],
    target_h: f64,
    seeds: &[RegionSeed],
) -> Result<TriMesh> {
    triangulate_with(outer, inner, target_h, seeds, TriangulateOptions::default())
}

pub fn triangulate_with(
    outer: &Curve,
    inner: &[Curve],
    target_h: f64,
    seeds: &[RegionSeed],
    opts: TriangulateOptions,
) -> Result<TriMesh> {
    if !(target_h > 0.0 && target_h.is_finite()) {
        return Err(Error::InvalidInput(format!("target_h must be positive, got {target_h}")));
    }
    if !outer.is_closed() {
        return Err(Error::InvalidInput(format!("outer curve '{}' is not closed", outer.label())));
    }
    let outer = if outer.signed_area()? < 0.0 { outer.reversed() } else { outer.clone() };
    let mut curves: Vec<Curve> = Vec::with_capacity(inner.len() + 1);
    curves.push(outer);
    curves.extend(inner.iter().cloned());
    for c in curves.iter().filter(|c| c.is_closed()) {
        c.validate_simple()?;
    }
    check_pairwise(&curves)?;
    for c in &curves[1..] {
        let probe = c.segment(0).0.lerp(c.segment(0).1, 0.5);
        let on_outer = curves[0].distance_to(probe) < 1e-9 * (1.0 + probe.norm());
        if !on_outer && !point_in_polygon(probe, curves[0].points()) {
            return Err(Error::InvalidInput(format!(
                "curve '{}' is not inside outer curve '{}'",
                c.label(),
                curves[0].label()
            )));
        }
    }
    let pslg = Pslg::build(&curves, target_h)?;
    pslg.warn_small_angles(opts.min_angle);

    let outer_area = curves[0].signed_area()?;
    let budget = opts.max_steiner.unwrap_or_else(|| {
        (20.0 * outer_area / (0.433 * target_h * target_h)) as usize + 10 * pslg.points.len() + 1000
    });

    let mut cdt = Cdt::new(&pslg.points);
    for (i, &p) in pslg.points.iter().enumerate() {
        cdt.insert_input(i + 3, p)?;
    }
    cdt.vtag.extend(pslg.vtag.iter().copied());
    cdt.recover_segments(&pslg.segments)?;

    let holes: Vec<&Curve> = curves[1..].iter().filter(|c| c.is_closed() && c.signed_area().map_or(false, |a| a < 0.0)).collect();
    let subdomains: Vec<&Curve> = curves[1..].iter().filter(|c| c.is_closed() && c.signed_area().map_or(false, |a| a > 0.0)).collect();
    let region_labels = cdt.classify(&curves[0], &holes, &subdomains, seeds);

    cdt.refine(target_h, opts.min_angle.to_radians(), budget);
    cdt.into_mesh(pslg.labels, region_labels)
}

fn check_pairwise(curves: &[Curve]) -> Result<()> {
    let endpoint_ok = |c: &Curve, p: Point2| {
        !c.is_closed() && {
            let pts = c.points();
            let tol = 1e-9 * (1.0 + p.norm());
            pts[0].dist(p) <= tol || pts[pts.len() - 1].dist(p) <= tol
        }
    };
    for j in 0..curves.len() {
        let grid = SegmentGrid::new(curves[j].segments().collect());
        let segs_j: Vec<(Point2, Point2)> = curves[j].segments().collect();
        for i in 0..j {
            for (a, b) in curves[i].segments() {
                for k in grid.candidates(a, b) {
                    let (c, d) = segs_j[k];
                    for p in segment_intersection_points(a, b, c, d) {
                        if !(endpoint_ok(&curves[i], p) || endpoint_ok(&curves[j], p)) {
                            return Err(Error::Intersection(format!(
                                "curves '{}' and '{}' intersect at ({}, {})",
                                curves[i].label(),
                                curves[j].label(),
                                p.x,
                                p.y
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Planar straight-line graph: deduplicated points and tagged segments
/// subdivided to at most `target_h`.
struct Pslg {
    points: Vec<Point2>,
    vtag: Vec<Option<u32>>,
    segments: Vec<TaggedEdge>,
    labels: Vec<String>,
}

impl Pslg {
    fn build(curves: &[Curve], h: f64) -> Result<Pslg> {
        let scale = curves[0]
            .points()
            .iter()
            .fold(1.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()));
        let tol = 1e-9 * scale;
        // Snap endpoints of open curves onto the curves they touch.
        let mut polys: Vec<Vec<Point2>> = curves.iter().map(|c| c.points().to_vec()).collect();
        for i in 0..curves.len() {
            if curves[i].is_closed() {
                continue;
            }
            for end in [0, polys[i].len() - 1] {
                let p = polys[i][end];
                for j in 0..curves.len() {
                    if j == i {
                        continue;
                    }
                    let n = polys[j].len();
                    let nseg = if curves[j].is_closed() { n } else { n - 1 };
                    let hit = (0..nseg).find_map(|s| {
                        let (a, b) = (polys[j][s], polys[j][(s + 1) % n]);
                        let (q, _) = closest_on_segment(a, b, p);
                        (q.dist(p) <= tol).then_some((s, a, b))
                    });
                    if let Some((s, a, b)) = hit {
                        if a.dist(p) <= tol {
                            polys[i][end] = a;
                        } else if b.dist(p) <= tol {
                            polys[i][end] = b;
                        } else {
                            polys[j].insert(s + 1, p);
                        }
                        break;
                    }
                }
            }
        }

        let mut labels = Vec::new();
        let mut points: Vec<Point2> = Vec::new();
        let mut vtag = Vec::new();
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut id = |p: Point2, tag: u32, points: &mut Vec<Point2>, vtag: &mut Vec<Option<u32>>| {
            *index.entry((p.x.to_bits(), p.y.to_bits())).or_insert_with(|| {
                points.push(p);
                vtag.push(Some(tag));
                points.len() - 1
            })
        };
        let mut segments = Vec::new();
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        for (c, poly) in curves.iter().zip(&polys) {
            let tag = intern(&mut labels, c.label());
            let n = poly.len();
            let nseg = if c.is_closed() { n } else { n - 1 };
            for s in 0..nseg {
                let (a, b) = (poly[s], poly[(s + 1) % n]);
                let k = ((a.dist(b) / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                let mut prev = id(a, tag, &mut points, &mut vtag);
                for m in 1..=k {
                    let q = if m == k { b } else { a.lerp(b, m as f64 / k as f64) };
                    let cur = id(q, tag, &mut points, &mut vtag);
                    if cur != prev && seen.insert((prev.min(cur), prev.max(cur))) {
                        segments.push(TaggedEdge { v: [prev, cur], tag });
                    }
                    prev = cur;
                }
            }
        }
        Ok(Pslg {
            points,
            vtag,
            segments,
            labels,
        })
    }

    fn warn_small_angles(&self, min_angle_deg: f64) {
        let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
        for s in &self.segments {
            incident.entry(s.v[0]).or_default().push(s.v[1]);
            incident.entry(s.v[1]).or_default().push(s.v[0]);
        }
        let mut worst = 180.0f64;
        for (&v, nbrs) in &incident {
            for i in 0..nbrs.len() {
                for j in i + 1..nbrs.len() {
                    let (u, w) = (self.points[nbrs[i]] - self.points[v], self.points[nbrs[j]] - self.points[v]);
                    worst = worst.min(u.cross(w).abs().atan2(u.dot(w)).to_degrees());
                }
            }
        }
        if worst < min_angle_deg {
            warn!(
                "input contains an angle of {worst:.2} degrees; minimum angle {min_angle_deg} cannot be guaranteed near it"
            );
        }
    }
}

const NONE: usize = usize::MAX;
const EXTERIOR: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Tri {
    v: [usize; 3],
    nb: [usize; 3],
    region: u32,
    alive: bool,
}

impl Tri {
    /// Edge opposite local vertex `i`.
    fn edge(&self, i: usize) -> (usize, usize) {
        (self.v[(i + 1) % 3], self.v[(i + 2) % 3])
    }
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

struct Cavity {
    tris: Vec<usize>,
    /// Boundary edges (a, b) in CCW order of the owning triangle, the
    /// outside neighbour and the owning triangle's region.
    boundary: Vec<(usize, usize, usize, u32)>,
}

struct Cdt {
    pts: Vec<Point2>,
    tris: Vec<Tri>,
    free: Vec<usize>,
    vt: Vec<usize>,
    vtag: Vec<Option<u32>>,
    constrained: HashMap<(usize, usize), u32>,
    hint: usize,
    walk_turn: usize,
}

impl Cdt {
    fn new(points: &[Point2]) -> Cdt {
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let c = lo.lerp(hi, 0.5);
        let d = (hi.x - lo.x).max(hi.y - lo.y).max(1e-9);
        let pts = vec![
            Point2::new(c.x - 100.0 * d, c.y - 100.0 * d),
            Point2::new(c.x + 100.0 * d, c.y - 100.0 * d),
            Point2::new(c.x, c.y + 100.0 * d),
        ];
        Cdt {
            pts,
            tris: vec![Tri {
                v: [0, 1, 2],
                nb: [NONE; 3],
                region: EXTERIOR,
                alive: true,
            }],
            free: Vec::new(),
            vt: vec![0, 0, 0],
            vtag: vec![None, None, None],
            constrained: HashMap::new(),
            hint: 0,
            walk_turn: 0,
        }
    }

    fn incircle(&self, t: usize, p: Point2) -> f64 {
        let v = self.tris[t].v;
        robust::incircle(
            self.pts[v[0]].coord(),
            self.pts[v[1]].coord(),
            self.pts[v[2]].coord(),
            p.coord(),
        )
    }

    /// Triangle whose closure contains `p`.
    fn locate(&mut self, p: Point2, start: usize) -> usize {
        let mut t = if self.tris.get(start).map_or(false, |t| t.alive) {
            start
        } else {
            self.tris.iter().position(|t| t.alive).expect("live triangle")
        };
        let cap = 4 * self.tris.len() + 64;
        'walk: for _ in 0..cap {
            self.walk_turn = self.walk_turn.wrapping_add(1);
            let tri = &self.tris[t];
            for r in 0..3 {
                let i = (r + self.walk_turn) % 3;
                let (a, b) = tri.edge(i);
                if orient(self.pts[a], self.pts[b], p) < 0.0 && tri.nb[i] != NONE {
                    t = tri.nb[i];
                    continue 'walk;
                }
            }
            return t;
        }
        (0..self.tris.len())
            .find(|&t| {
                let tri = &self.tris[t];
                tri.alive && (0..3).all(|i| {
                    let (a, b) = tri.edge(i);
                    orient(self.pts[a], self.pts[b], p) >= 0.0
                })
            })
            .expect("point inside the super triangle")
    }

    fn cavity(&self, start: usize, p: Point2, allow: Option<(usize, usize)>) -> Cavity {
        let mut in_cav: HashSet<usize> = HashSet::from([start]);
        let mut stack = vec![start];
        let mut tris = vec![start];
        let mut boundary = Vec::new();
        while let Some(t) = stack.pop() {
            let tri = &self.tris[t];
            for i in 0..3 {
                let (a, b) = tri.edge(i);
                let n = tri.nb[i];
                if n != NONE && in_cav.contains(&n) {
                    continue;
                }
                let k = key(a, b);
                let blocked = self.constrained.contains_key(&k) && Some(k) != allow;
                if n != NONE && !blocked && self.incircle(n, p) > 0.0 {
                    in_cav.insert(n);
                    stack.push(n);
                    tris.push(n);
                } else {
                    boundary.push((a, b, n, tri.region));
                }
            }
        }
        // an edge may have been recorded as boundary before its neighbour
        // joined the cavity
        boundary.retain(|&(_, _, n, _)| n == NONE || !in_cav.contains(&n));
        Cavity { tris, boundary }
    }

    fn star_shaped(&self, cav: &Cavity, p: Point2) -> bool {
        cav.boundary
            .iter()
            .all(|&(a, b, _, _)| orient(self.pts[a], self.pts[b], p) > 0.0)
    }

    fn alloc(&mut self, tri: Tri) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.tris[i] = tri;
                i
            }
            None => {
                self.tris.push(tri);
                self.tris.len() - 1
            }
        }
    }

    /// Replaces the cavity by a fan around the new vertex `pi`; returns the
    /// new triangles.
    fn commit(&mut self, cav: Cavity, pi: usize) -> Vec<usize> {
        for &t in &cav.tris {
            self.tris[t].alive = false;
            self.free.push(t);
        }
        let mut by_first: HashMap<usize, usize> = HashMap::with_capacity(cav.boundary.len());
        let mut by_second: HashMap<usize, usize> = HashMap::with_capacity(cav.boundary.len());
        let mut created = Vec::with_capacity(cav.boundary.len());
        for &(a, b, out, region) in &cav.boundary {
            let t = self.alloc(Tri {
                v: [pi, a, b],
                nb: [out, NONE, NONE],
                region,
                alive: true,
            });
            if out != NONE {
                let o = &mut self.tris[out];
                for i in 0..3 {
                    if o.edge(i) == (b, a) {
                        o.nb[i] = t;
                    }
                }
            }
            by_first.insert(a, t);
            by_second.insert(b, t);
            created.push(t);
        }
        for &t in &created {
            let [_, a, b] = self.tris[t].v;
            self.tris[t].nb[1] = by_first[&b];
            self.tris[t].nb[2] = by_second[&a];
            for v in self.tris[t].v {
                self.vt[v] = t;
            }
        }
        if let Some(&t) = created.first() {
            self.hint = t;
        }
        created
    }

    fn push_point(&mut self, p: Point2, tag: Option<u32>) -> usize {
        self.pts.push(p);
        self.vt.push(NONE);
        self.vtag.push(tag);
        self.pts.len() - 1
    }

    fn insert_input(&mut self, expected: usize, p: Point2) -> Result<()> {
        let t = self.locate(p, self.hint);
        if self.tris[t].v.iter().any(|&v| self.pts[v] == p) {
            return Err(Error::Degenerate("duplicate input vertex".into()));
        }
        let cav = self.cavity(t, p, None);
        if !self.star_shaped(&cav, p) {
            return Err(Error::Degenerate(format!("cannot insert input vertex ({}, {})", p.x, p.y)));
        }
        self.pts.push(p);
        self.vt.push(NONE);
        debug_assert_eq!(self.pts.len() - 1, expected);
        self.commit(cav, expected);
        Ok(())
    }

    fn triangles_around(&self, v: usize) -> Vec<usize> {
        let start = self.vt[v];
        let mut out = vec![start];
        let mut seen: HashSet<usize> = HashSet::from([start]);
        let mut k = 0;
        while k < out.len() {
            let tri = &self.tris[out[k]];
            for i in 0..3 {
                if tri.v[i] != v && tri.nb[i] != NONE && seen.insert(tri.nb[i]) {
                    let n = tri.nb[i];
                    if self.tris[n].v.contains(&v) {
                        out.push(n);
                    }
                }
            }
            k += 1;
        }
        out
    }

    /// A live triangle having (a, b) as an edge.
    fn triangle_with_edge(&self, a: usize, b: usize) -> Option<usize> {
        self.triangles_around(a)
            .into_iter()
            .find(|&t| self.tris[t].v.contains(&b))
    }

    /// Inserts the midpoint of constrained or missing edge (a, b).
    fn split_edge(&mut self, a: usize, b: usize, tag: u32) -> Option<(usize, Vec<usize>)> {
        let m = self.pts[a].lerp(self.pts[b], 0.5);
        let k = key(a, b);
        let start = match self.triangle_with_edge(a, b) {
            Some(t) => t,
            None => {
                let h = self.vt[a];
                self.locate(m, h)
            }
        };
        if self.tris[start].v.iter().any(|&v| self.pts[v] == m) {
            return None;
        }
        let cav = self.cavity(start, m, Some(k));
        if !self.star_shaped(&cav, m) {
            return None;
        }
        self.constrained.remove(&k);
        let mi = self.push_point(m, Some(tag));
        let created = self.commit(cav, mi);
        Some((mi, created))
    }

    fn has_edge(&self, a: usize, b: usize) -> bool {
        self.triangle_with_edge(a, b).is_some()
    }

    fn recover_segments(&mut self, segments: &[TaggedEdge]) -> Result<()> {
        let offset = 3;
        let mut queue: VecDeque<(usize, usize, u32)> = segments
            .iter()
            .map(|s| (s.v[0] + offset, s.v[1] + offset, s.tag))
            .collect();
        let mut splits = 0usize;
        let cap = 64 * segments.len() + 1024;
        while let Some((a, b, tag)) = queue.pop_front() {
            if self.has_edge(a, b) {
                self.constrained.insert(key(a, b), tag);
                continue;
            }
            splits += 1;
            if splits > cap {
                return Err(Error::Degenerate("segment recovery did not converge".into()));
            }
            match self.split_edge(a, b, tag) {
                Some((m, _)) => {
                    queue.push_back((a, m, tag));
                    queue.push_back((m, b, tag));
                }
                None => return Err(Error::Degenerate("segment recovery failed".into())),
            }
        }
        Ok(())
    }

    /// Flood-fills components separated by constrained edges and assigns
    /// region ids. Returns the region label table.
    fn classify(
        &mut self,
        outer: &Curve,
        holes: &[&Curve],
        subdomains: &[&Curve],
        seeds: &[RegionSeed],
    ) -> Vec<String> {
        let n = self.tris.len();
        let mut comp = vec![NONE; n];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for s in 0..n {
            if !self.tris[s].alive || comp[s] != NONE {
                continue;
            }
            let id = comps.len();
            let mut members = vec![s];
            comp[s] = id;
            let mut k = 0;
            while k < members.len() {
                let tri = &self.tris[members[k]];
                for i in 0..3 {
                    let (a, b) = tri.edge(i);
                    let nb = tri.nb[i];
                    if nb != NONE && comp[nb] == NONE && !self.constrained.contains_key(&key(a, b)) {
                        comp[nb] = id;
                        members.push(nb);
                    }
                }
                k += 1;
            }
            comps.push(members);
        }

        let mut label_of: Vec<Option<String>> = vec![None; comps.len()];
        let mut interior = vec![false; comps.len()];
        for (c, members) in comps.iter().enumerate() {
            if members.iter().any(|&t| self.tris[t].v.iter().any(|&v| v < 3)) {
                continue;
            }
            let v = self.tris[members[0]].v;
            let g = (self.pts[v[0]] + self.pts[v[1]] + self.pts[v[2]]) * (1.0 / 3.0);
            if !point_in_polygon(g, outer.points()) || holes.iter().any(|h| point_in_polygon(g, h.points())) {
                continue;
            }
            interior[c] = true;
            label_of[c] = subdomains
                .iter()
                .filter(|s| point_in_polygon(g, s.points()))
                .min_by(|a, b| {
                    let (x, y) = (a.signed_area().unwrap_or(0.0), b.signed_area().unwrap_or(0.0));
                    x.total_cmp(&y)
                })
                .map(|s| s.label().to_string());
        }
        for s in seeds {
            let t = self.locate(s.point, self.hint);
            let c = comp[t];
            if interior[c] {
                label_of[c] = Some(s.label.clone());
            } else {
                warn!("region seed '{}' lies outside the domain", s.label);
            }
        }
        let n_default = (0..comps.len()).filter(|&c| interior[c] && label_of[c].is_none()).count();
        let mut k = 0;
        let mut labels = Vec::new();
        for c in 0..comps.len() {
            if !interior[c] {
                continue;
            }
            let label = label_of[c].clone().unwrap_or_else(|| {
                let l = if n_default > 1 && k > 0 {
                    format!("{}.{k}", outer.label())
                } else {
                    outer.label().to_string()
                };
                k += 1;
                l
            });
            let id = intern(&mut labels, &label);
            for &t in &comps[c] {
                self.tris[t].region = id;
            }
        }
        labels
    }

    fn circumcenter(&self, t: usize) -> Point2 {
        let v = self.tris[t].v;
        let (a, b, c) = (self.pts[v[0]], self.pts[v[1]], self.pts[v[2]]);
        let (u, w) = (b - a, c - a);
        let d = 2.0 * u.cross(w);
        let (uu, ww) = (u.norm_sq(), w.norm_sq());
        a + Point2::new(w.y * uu - u.y * ww, u.x * ww - w.x * uu) * (1.0 / d)
    }

    fn is_bad(&self, t: usize, h: f64, min_angle: f64) -> bool {
        let tri = &self.tris[t];
        if !tri.alive || tri.region == EXTERIOR {
            return false;
        }
        let p = tri.v.map(|v| self.pts[v]);
        let len = |i: usize| p[(i + 1) % 3].dist(p[(i + 2) % 3]);
        let l = [len(0), len(1), len(2)];
        if l.iter().any(|&x| x > h * (1.0 + 1e-9)) {
            return true;
        }
        // smallest angle sits opposite the shortest edge
        let i = (0..3).min_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
        let (u, w) = (p[(i + 1) % 3] - p[i], p[(i + 2) % 3] - p[i]);
        let angle = u.cross(w).abs().atan2(u.dot(w));
        if angle >= min_angle {
            return false;
        }
        // an angle between two input segments cannot be improved
        let v0 = tri.v[i];
        let corner_fixed = [tri.v[(i + 1) % 3], tri.v[(i + 2) % 3]]
            .iter()
            .all(|&w| self.constrained.contains_key(&key(v0, w)));
        !corner_fixed
    }

    fn encroaches(&self, a: usize, b: usize, p: usize) -> bool {
        if p < 3 {
            return false;
        }
        let (pa, pb, pp) = (self.pts[a], self.pts[b], self.pts[p]);
        (pa - pp).dot(pb - pp) < -1e-12 * pa.dist(pb).powi(2)
    }

    fn encroaches_point(&self, a: usize, b: usize, p: Point2) -> bool {
        let (pa, pb) = (self.pts[a], self.pts[b]);
        (pa - p).dot(pb - p) < -1e-12 * pa.dist(pb).powi(2)
    }

    /// Constrained edges of `t` whose apex in `t` encroaches them.
    fn encroached_edges_of(&self, t: usize, out: &mut VecDeque<(usize, usize)>) {
        let tri = &self.tris[t];
        if !tri.alive || tri.region == EXTERIOR {
            return;
        }
        for i in 0..3 {
            let (a, b) = tri.edge(i);
            if self.constrained.contains_key(&key(a, b)) && self.encroaches(a, b, tri.v[i]) {
                out.push_back((a, b));
            }
        }
    }

    fn refine(&mut self, h: f64, min_angle: f64, budget: usize) {
        let mut seg_queue: VecDeque<(usize, usize)> = VecDeque::new();
        for t in 0..self.tris.len() {
            self.encroached_edges_of(t, &mut seg_queue);
        }
        let mut bad: VecDeque<usize> = (0..self.tris.len()).filter(|&t| self.is_bad(t, h, min_angle)).collect();
        let mut inserted = 0usize;
        let mut unfixable: HashSet<[usize; 3]> = HashSet::new();

        loop {
            if inserted >= budget {
                warn!("mesh refinement stopped after {inserted} Steiner points; quality may be below target");
                break;
            }
            if let Some((a, b)) = seg_queue.pop_front() {
                let k = key(a, b);
                let Some(&tag) = self.constrained.get(&k) else { continue };
                let still = self
                    .triangles_around(a)
                    .into_iter()
                    .filter(|&t| self.tris[t].v.contains(&b))
                    .any(|t| {
                        let tri = &self.tris[t];
                        tri.region != EXTERIOR && tri.v.iter().any(|&v| v != a && v != b && self.encroaches(a, b, v))
                    });
                if !still {
                    continue;
                }
                if let Some((m, created)) = self.split_edge(a, b, tag) {
                    self.constrained.insert(key(a, m), tag);
                    self.constrained.insert(key(m, b), tag);
                    inserted += 1;
                    for &t in &created {
                        self.encroached_edges_of(t, &mut seg_queue);
                        if self.is_bad(t, h, min_angle) {
                            bad.push_back(t);
                        }
                    }
                }
                continue;
            }
            let Some(t) = bad.pop_front() else { break };
            if !self.is_bad(t, h, min_angle) || unfixable.contains(&self.tris[t].v) {
                continue;
            }
            let c = self.circumcenter(t);
            if !c.is_finite() {
                unfixable.insert(self.tris[t].v);
                continue;
            }
            let loc = self.locate(c, t);
            if self.tris[loc].v.iter().any(|&v| self.pts[v].dist(c) < 1e-12 * h) {
                unfixable.insert(self.tris[t].v);
                continue;
            }
            let cav = self.cavity(loc, c, None);
            let mut encroached: Vec<(usize, usize)> = cav
                .boundary
                .iter()
                .filter(|&&(a, b, _, _)| self.constrained.contains_key(&key(a, b)) && self.encroaches_point(a, b, c))
                .map(|&(a, b, _, _)| (a, b))
                .collect();
            if encroached.is_empty() && !cav.tris.contains(&t) {
                // circumcentre is hidden behind a segment: split the first
                // constrained edge crossed on the way there
                let v = self.tris[t].v;
                let g = (self.pts[v[0]] + self.pts[v[1]] + self.pts[v[2]]) * (1.0 / 3.0);
                if let Some((&(a, b), _)) = self
                    .constrained
                    .iter()
                    .filter(|(&(a, b), _)| crate::geometry::segments_intersect(g, c, self.pts[a], self.pts[b]))
                    .map(|(k, _)| (k, (self.pts[k.0].lerp(self.pts[k.1], 0.5) - g).norm_sq()))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
                {
                    encroached.push((a, b));
                } else {
                    unfixable.insert(v);
                    continue;
                }
            }
            if !encroached.is_empty() {
                seg_queue.extend(encroached.iter().copied());
                // force the split even if no apex encroaches
                let mut did = false;
                while let Some((a, b)) = seg_queue.pop_front() {
                    let k = key(a, b);
                    let Some(&tag) = self.constrained.get(&k) else { continue };
                    if let Some((m, created)) = self.split_edge(a, b, tag) {
                        did = true;
                        self.constrained.insert(key(a, m), tag);
                        self.constrained.insert(key(m, b), tag);
                        inserted += 1;
                        for &nt in &created {
                            self.encroached_edges_of(nt, &mut seg_queue);
                            if self.is_bad(nt, h, min_angle) {
                                bad.push_back(nt);
                            }
                        }
                    }
                }
                if did {
                    bad.push_back(t);
                } else {
                    unfixable.insert(self.tris[t].v);
                }
                continue;
            }
            if !self.star_shaped(&cav, c) {
                unfixable.insert(self.tris[t].v);
                continue;
            }
            let ci = self.push_point(c, None);
            let created = self.commit(cav, ci);
            inserted += 1;
            for &nt in &created {
                self.encroached_edges_of(nt, &mut seg_queue);
                if self.is_bad(nt, h, min_angle) {
                    bad.push_back(nt);
                }
            }
        }
    }

    fn into_mesh(self, boundary_labels: Vec<String>, region_labels: Vec<String>) -> Result<TriMesh> {
        let mut remap = vec![NONE; self.pts.len()];
        let mut vertices = Vec::new();
        let mut vtag = Vec::new();
        let mut triangles = Vec::new();
        let mut regions = Vec::new();
        for tri in self.tris.iter().filter(|t| t.alive && t.region != EXTERIOR) {
            let mut out = [0; 3];
            for (k, &v) in tri.v.iter().enumerate() {
                if remap[v] == NONE {
                    remap[v] = vertices.len();
                    vertices.push(self.pts[v]);
                    vtag.push(self.vtag.get(v).copied().flatten());
                }
                out[k] = remap[v];
            }
            triangles.push(out);
            regions.push(tri.region);
        }
        if triangles.is_empty() {
            return Err(Error::Degenerate("triangulated domain is empty".into()));
        }
        let mut segments: Vec<TaggedEdge> = self
            .constrained
            .iter()
            .filter(|(&(a, b), _)| remap[a] != NONE && remap[b] != NONE)
            .map(|(&(a, b), &tag)| TaggedEdge { v: [remap[a], remap[b]], tag })
            .collect();
        segments.sort_by_key(|s| (s.v, s.tag));
        TriMesh::from_parts(vertices, triangles, vtag, regions, boundary_labels, region_labels, segments)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::quality_report;

    fn square(label: &str) -> Curve {
        Curve::new(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0),
            ],
            true,
            label,
        )
        .unwrap()
    }

    fn assert_conforming(m: &TriMesh) {
        // every interior edge shared by exactly two triangles, boundary by one
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in m.triangles() {
            for k in 0..3 {
                *count.entry(key(t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        assert!(count.values().all(|&c| c == 1 || c == 2));
        for t in 0..m.triangle_count() {
            assert!(m.triangle_area(t) > 0.0);
        }
    }

    #[test]
    fn unit_square_meets_quality() {
        let m = triangulate(&square("outer"), &[], 0.2, &[]).unwrap();
        assert_conforming(&m);
        let q = quality_report(&m, 1.0);
        assert!(q.min_edge_ratio >= 0.1, "{q:?}");
        assert!(q.max_edge_length <= 0.2 + 1e-12, "{q:?}");
        assert!(q.min_angle >= 20.0 - 1e-9, "{q:?}");
        assert!((m.area() - 1.0).abs() < 1e-12);
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn annulus_has_hole() {
        let outer = Curve::circle(Point2::ORIGIN, 1.0, 64).unwrap();
        let hole = Curve::circle(Point2::ORIGIN, 0.5, 32).unwrap().reversed().with_label("hole");
        let m = triangulate(&outer, &[hole], 0.15, &[]).unwrap();
        assert_conforming(&m);
        assert_eq!(m.euler_characteristic(), 0);
        for t in 0..m.triangle_count() {
            let [a, b, c] = m.triangle_points(t);
            let g = (a + b + c) * (1.0 / 3.0);
            assert!(g.norm() > 0.45);
        }
        assert_eq!(m.boundary_loops().len(), 2);
    }

    #[test]
    fn interface_splits_regions() {
        let cut = Curve::new(vec![Point2::new(0.5, 0.0), Point2::new(0.5, 1.0)], false, "cut").unwrap();
        let m = triangulate(&square("outer"), &[cut], 0.25, &[]).unwrap();
        assert_conforming(&m);
        assert_eq!(m.region_labels().len(), 2);
        // every triangle lies on one side of x = 0.5 and sides carry distinct tags
        let mut side_tag: [Option<u32>; 2] = [None, None];
        for t in 0..m.triangle_count() {
            let p = m.triangle_points(t);
            let left = p.iter().all(|q| q.x <= 0.5 + 1e-12);
            let right = p.iter().all(|q| q.x >= 0.5 - 1e-12);
            assert!(left || right);
            let tag = m.triangle_region_tags()[t];
            let slot = &mut side_tag[usize::from(right)];
            assert_eq!(*slot.get_or_insert(tag), tag);
        }
        assert_ne!(side_tag[0], side_tag[1]);
        // interface present as mesh edges covering its whole length
        let cut_tag = m.boundary_labels().iter().position(|l| l == "cut").unwrap() as u32;
        let len: f64 = m
            .segments()
            .iter()
            .filter(|s| s.tag == cut_tag)
            .map(|s| {
                assert!(m.has_edge(s.v[0], s.v[1]));
                m.vertices()[s.v[0]].dist(m.vertices()[s.v[1]])
            })
            .sum();
        assert!((len - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_and_subdomains_label_regions() {
        let inner = Curve::circle(Point2::new(0.5, 0.5), 0.2, 24).unwrap().with_label("core");
        let m = triangulate(
            &square("outer"),
            &[inner],
            0.1,
            &[RegionSeed { point: Point2::new(0.05, 0.05), label: "shell".into() }],
        )
        .unwrap();
        let mut labels = m.region_labels().to_vec();
        labels.sort();
        assert_eq!(labels, vec!["core".to_string(), "shell".to_string()]);
        let core_area: f64 = (0..m.triangle_count())
            .filter(|&t| m.triangle_region(t) == "core")
            .map(|t| m.triangle_area(t))
            .sum();
        let poly = Curve::circle(Point2::new(0.5, 0.5), 0.2, 24).unwrap().signed_area().unwrap();
        assert!((core_area - poly).abs() < 1e-12);
    }

    #[test]
    fn crossing_curves_rejected() {
        let bar = Curve::new(vec![Point2::new(-0.5, 0.5), Point2::new(0.5, 0.5)], false, "bar").unwrap();
        let err = triangulate(&square("outer"), &[bar], 0.2, &[]).unwrap_err();
        match err {
            Error::Intersection(msg) => assert!(msg.contains("outer") && msg.contains("bar")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sharp_input_angle_is_best_effort() {
        let wedge = Curve::new(
            vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 0.1)],
            true,
            "wedge",
        )
        .unwrap();
        let m = triangulate(&wedge, &[], 0.1, &[]).unwrap();
        assert_conforming(&m);
        assert!((m.area() - 0.05).abs() < 1e-12);
    }
}
