//! Linear triangle meshes of 2D domains: construction by constrained
//! Delaunay refinement, quality checks, uniform refinement, decimation and
//! boundary-driven deformation.

mod coarsen;
mod deform;
mod msh;
mod triangulate;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Curve, Point2};

pub use coarsen::{coarsen, CoarsenOptions};
pub use deform::{deform, Deformer};
pub use msh::{msh_string, parse_msh, read_msh, write_msh};
pub use triangulate::{triangulate, triangulate_with, RegionSeed, TriangulateOptions};

/// Constrained edge (boundary or internal interface) with its curve label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaggedEdge {
    pub v: [usize; 2],
    pub tag: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    vertex_boundary_tag: Vec<Option<u32>>,
    triangle_region_tag: Vec<u32>,
    boundary_labels: Vec<String>,
    region_labels: Vec<String>,
    segments: Vec<TaggedEdge>,
    /// Edges with a single adjacent triangle, oriented as in that triangle.
    boundary: Vec<TaggedEdge>,
}

/// Index of `label` in `labels`, appending it when absent.
pub(crate) fn intern(labels: &mut Vec<String>, label: &str) -> u32 {
    match labels.iter().position(|l| l == label) {
        Some(i) => i as u32,
        None => {
            labels.push(label.to_string());
            (labels.len() - 1) as u32
        }
    }
}

pub const DEFAULT_BOUNDARY_LABEL: &str = "boundary";

impl TriMesh {
    /// Assembles a mesh from parts and checks that every triangle is
    /// positively oriented. Boundary edges that are not listed in
    /// `segments` receive the label `"boundary"`.
    pub fn from_parts(
        vertices: Vec<Point2>,
        triangles: Vec<[usize; 3]>,
        vertex_boundary_tag: Vec<Option<u32>>,
        triangle_region_tag: Vec<u32>,
        mut boundary_labels: Vec<String>,
        region_labels: Vec<String>,
        segments: Vec<TaggedEdge>,
    ) -> Result<TriMesh> {
        let nv = vertices.len();
        if vertex_boundary_tag.len() != nv || triangle_region_tag.len() != triangles.len() {
            return Err(Error::InvalidInput("mesh tag arrays have wrong length".into()));
        }
        if let Some(t) = triangles.iter().flatten().find(|&&v| v >= nv) {
            return Err(Error::InvalidInput(format!("triangle references vertex {t} of {nv}")));
        }
        if region_labels.is_empty() && !triangles.is_empty() {
            return Err(Error::InvalidInput("mesh has no region labels".into()));
        }
        for (i, t) in triangles.iter().enumerate() {
            let a = signed_tri_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if !(a > 0.0) {
                return Err(Error::Inverted(format!("triangle {i} has signed area {a:e}")));
            }
        }
        let seg_lookup: HashMap<(usize, usize), u32> = segments
            .iter()
            .map(|s| ((s.v[0].min(s.v[1]), s.v[0].max(s.v[1])), s.tag))
            .collect();
        let mut edge_count: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let e = edge_count.entry((a.min(b), a.max(b))).or_insert((0, [a, b]));
                e.0 += 1;
            }
        }
        let mut boundary: Vec<TaggedEdge> = Vec::new();
        let mut default_tag = None;
        let mut keys: Vec<_> = edge_count.iter().filter(|(_, v)| v.0 == 1).collect();
        keys.sort_by_key(|(k, _)| **k);
        for (k, (_, dir)) in keys {
            let tag = match seg_lookup.get(k) {
                Some(&t) => t,
                None => *default_tag
                    .get_or_insert_with(|| intern(&mut boundary_labels, DEFAULT_BOUNDARY_LABEL)),
            };
            boundary.push(TaggedEdge { v: *dir, tag });
        }
        if let Some(&(_, (c, _))) = edge_count.iter().find(|(_, v)| v.0 > 2).map(|(k, v)| (k, v)).as_ref() {
            return Err(Error::InvalidInput(format!("non-manifold edge shared by {c} triangles")));
        }
        let mut vertex_boundary_tag = vertex_boundary_tag;
        for e in &boundary {
            for &v in &e.v {
                if vertex_boundary_tag[v].is_none() {
                    vertex_boundary_tag[v] = Some(e.tag);
                }
            }
        }
        Ok(TriMesh {
            vertices,
            triangles,
            vertex_boundary_tag,
            triangle_region_tag,
            boundary_labels,
            region_labels,
            segments,
            boundary,
        })
    }

    /// Structured right-triangle mesh of the rectangle `[x0,x1] x [y0,y1]`
    /// with `nx * ny` cells; boundary sides are labelled
    /// `bottom`, `right`, `top`, `left`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64, nx: usize, ny: usize) -> Result<TriMesh> {
        if nx == 0 || ny == 0 || !(x1 > x0) || !(y1 > y0) {
            return Err(Error::InvalidInput("degenerate rectangle mesh".into()));
        }
        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Point2::new(
                    x0 + (x1 - x0) * i as f64 / nx as f64,
                    y0 + (y1 - y0) * j as f64 / ny as f64,
                ));
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                // alternate diagonals for a symmetric pattern
                if (i + j) % 2 == 0 {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                } else {
                    triangles.push([a, b, d]);
                    triangles.push([b, c, d]);
                }
            }
        }
        let labels: Vec<String> = ["bottom", "right", "top", "left"].iter().map(|s| s.to_string()).collect();
        let mut segments = Vec::new();
        for i in 0..nx {
            segments.push(TaggedEdge { v: [idx(i, 0), idx(i + 1, 0)], tag: 0 });
            segments.push(TaggedEdge { v: [idx(i + 1, ny), idx(i, ny)], tag: 2 });
        }
        for j in 0..ny {
            segments.push(TaggedEdge { v: [idx(nx, j), idx(nx, j + 1)], tag: 1 });
            segments.push(TaggedEdge { v: [idx(0, j + 1), idx(0, j)], tag: 3 });
        }
        let nt = triangles.len();
        TriMesh::from_parts(
            vertices.clone(),
            triangles,
            vec![None; vertices.len()],
            vec![0; nt],
            labels,
            vec!["domain".into()],
            segments,
        )
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_boundary_tag(&self, v: usize) -> Option<&str> {
        self.vertex_boundary_tag[v].map(|t| self.boundary_labels[t as usize].as_str())
    }

    pub fn vertex_boundary_tags(&self) -> &[Option<u32>] {
        &self.vertex_boundary_tag
    }

    pub fn triangle_region(&self, t: usize) -> &str {
        &self.region_labels[self.triangle_region_tag[t] as usize]
    }

    pub fn triangle_region_tags(&self) -> &[u32] {
        &self.triangle_region_tag
    }

    pub fn boundary_labels(&self) -> &[String] {
        &self.boundary_labels
    }

    pub fn region_labels(&self) -> &[String] {
        &self.region_labels
    }

    /// Constrained edges: boundary pieces and internal interfaces.
    pub fn segments(&self) -> &[TaggedEdge] {
        &self.segments
    }

    /// Edges on the domain boundary, oriented counter-clockwise around the
    /// domain (holes clockwise).
    pub fn boundary_edges(&self) -> &[TaggedEdge] {
        &self.boundary
    }

    pub fn is_boundary_vertex(&self) -> Vec<bool> {
        let mut on = vec![false; self.vertices.len()];
        for e in &self.boundary {
            on[e.v[0]] = true;
            on[e.v[1]] = true;
        }
        on
    }

    pub fn triangle_points(&self, t: usize) -> [Point2; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_tri_area(a, b, c)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut e: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                [a.min(b), a.max(b)]
            }))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.triangles.iter().any(|t| {
            (0..3).any(|k| {
                let (p, q) = (t[k], t[(k + 1) % 3]);
                (p == a && q == b) || (p == b && q == a)
            })
        })
    }

    /// Same connectivity and tags with new vertex positions; fails on any
    /// non-positive triangle.
    pub fn with_vertices(&self, vertices: Vec<Point2>) -> Result<TriMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidInput("vertex count mismatch".into()));
        }
        let n_inv = count_inverted(&vertices, &self.triangles);
        if n_inv > 0 {
            return Err(Error::Inverted(format!(
                "{n_inv} triangles inverted after motion; use a smaller step or remesh"
            )));
        }
        let mut m = self.clone();
        m.vertices = vertices;
        Ok(m)
    }

    /// Euler characteristic V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.triangles.len() as i64
    }

    /// Index of the triangle containing `p` (closed), by linear scan.
    pub fn locate(&self, p: Point2) -> Option<usize> {
        let eps = 1e-12;
        (0..self.triangles.len()).find(|&t| {
            let [a, b, c] = self.triangle_points(t);
            let area = signed_tri_area(a, b, c);
            let tol = -eps * area;
            signed_tri_area(a, b, p) >= tol && signed_tri_area(b, c, p) >= tol && signed_tri_area(c, a, p) >= tol
        })
    }

    /// Closed boundary loops as curves, one per connected boundary
    /// component, each oriented as the mesh boundary.
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        let mut next: HashMap<usize, usize> = HashMap::new();
        for e in &self.boundary {
            next.insert(e.v[0], e.v[1]);
        }
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut seen = vec![false; self.vertices.len()];
        let mut loops = Vec::new();
        for s in starts {
            if seen[s] {
                continue;
            }
            let mut lp = vec![s];
            seen[s] = true;
            let mut cur = next[&s];
            while cur != s && !seen[cur] {
                seen[cur] = true;
                lp.push(cur);
                match next.get(&cur) {
                    Some(&n) => cur = n,
                    None => break,
                }
            }
            loops.push(lp);
        }
        loops
    }

    pub fn boundary_curves(&self) -> Result<Vec<Curve>> {
        self.boundary_loops()
            .into_iter()
            .map(|lp| {
                let label = self
                    .vertex_boundary_tag(lp[0])
                    .unwrap_or(DEFAULT_BOUNDARY_LABEL)
                    .to_string();
                Curve::with_tolerance(lp.iter().map(|&v| self.vertices[v]).collect(), true, label, 0.0)
            })
            .collect()
    }
}

#[inline]
pub(crate) fn signed_tri_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * (b - a).cross(c - a)
}

pub(crate) fn count_inverted(vertices: &[Point2], triangles: &[[usize; 3]]) -> usize {
    triangles
        .iter()
        .filter(|t| !(signed_tri_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) > 0.0))
        .count()
}

/// Quality thresholds; defaults follow the side-ratio 0.1 rule and a mesh
/// size five times below the gradient length scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityThresholds {
    pub min_edge_ratio: f64,
    pub gradient_factor: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        QualityThresholds {
            min_edge_ratio: 0.1,
            gradient_factor: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshQualityReport {
    pub min_edge_ratio: f64,
    pub max_edge_length: f64,
    pub min_angle: f64,
    pub n_inverted: usize,
    pub passed: bool,
}

pub fn triangle_edge_ratio(a: Point2, b: Point2, c: Point2) -> f64 {
    let l = [a.dist(b), b.dist(c), c.dist(a)];
    let lo = l.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = l.iter().cloned().fold(0.0, f64::max);
    if hi > 0.0 {
        lo / hi
    } else {
        0.0
    }
}

/// Smallest interior angle in degrees.
pub fn triangle_min_angle(a: Point2, b: Point2, c: Point2) -> f64 {
    let ang = |p: Point2, q: Point2, r: Point2| {
        let (u, v) = (q - p, r - p);
        u.cross(v).abs().atan2(u.dot(v))
    };
    ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b)).to_degrees()
}

pub fn quality_report(mesh: &TriMesh, gradient_length: f64) -> MeshQualityReport {
    quality_report_with(mesh, gradient_length, QualityThresholds::default())
}

pub fn quality_report_with(
    mesh: &TriMesh,
    gradient_length: f64,
    th: QualityThresholds,
) -> MeshQualityReport {
    let mut min_ratio: f64 = 1.0;
    let mut max_edge: f64 = 0.0;
    let mut min_angle: f64 = 180.0;
    for t in 0..mesh.triangle_count() {
        let [a, b, c] = mesh.triangle_points(t);
        min_ratio = min_ratio.min(triangle_edge_ratio(a, b, c));
        max_edge = max_edge.max(a.dist(b)).max(b.dist(c)).max(c.dist(a));
        min_angle = min_angle.min(triangle_min_angle(a, b, c));
    }
    let n_inverted = count_inverted(&mesh.vertices, &mesh.triangles);
    let passed = min_ratio >= th.min_edge_ratio
        && n_inverted == 0
        && max_edge <= gradient_length / th.gradient_factor;
    MeshQualityReport {
        min_edge_ratio: min_ratio,
        max_edge_length: max_edge,
        min_angle,
        n_inverted,
        passed,
    }
}

/// Uniform red refinement: every triangle is split into four through its
/// edge midpoints. Midpoints of boundary edges lie on the boundary polyline.
pub fn refine(mesh: &TriMesh) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut vtag = mesh.vertex_boundary_tag.clone();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let seg_tag: HashMap<(usize, usize), u32> = mesh
        .segments
        .iter()
        .map(|s| ((s.v[0].min(s.v[1]), s.v[0].max(s.v[1])), s.tag))
        .collect();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point2>, vtag: &mut Vec<Option<u32>>| {
        let key = (a.min(b), a.max(b));
        *mid.entry(key).or_insert_with(|| {
            vertices.push(vertices[a].lerp(vertices[b], 0.5));
            vtag.push(seg_tag.get(&key).copied());
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    let mut regions = Vec::with_capacity(4 * mesh.triangles.len());
    for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
        let ab = midpoint(a, b, &mut vertices, &mut vtag);
        let bc = midpoint(b, c, &mut vertices, &mut vtag);
        let ca = midpoint(c, a, &mut vertices, &mut vtag);
        triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        regions.extend_from_slice(&[mesh.triangle_region_tag[t]; 4]);
    }
    let mut segments = Vec::with_capacity(2 * mesh.segments.len());
    for s in &mesh.segments {
        let key = (s.v[0].min(s.v[1]), s.v[0].max(s.v[1]));
        match mid.get(&key) {
            Some(&m) => {
                segments.push(TaggedEdge { v: [s.v[0], m], tag: s.tag });
                segments.push(TaggedEdge { v: [m, s.v[1]], tag: s.tag });
            }
            None => segments.push(*s),
        }
    }
    TriMesh::from_parts(
        vertices,
        triangles,
        vtag,
        regions,
        mesh.boundary_labels.clone(),
        mesh.region_labels.clone(),
        segments,
    )
    .expect("midpoint subdivision preserves orientation")
}
