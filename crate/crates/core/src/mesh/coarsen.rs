use std::collections::{BTreeSet, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};

use super::{signed_tri_area, triangle_edge_ratio, TaggedEdge, TriMesh};
use crate::error::{Error, Result};
use crate::geometry::{closest_on_segment, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarsenOptions {
    /// Requested reduction of the vertex count.
    pub factor: f64,
    /// Largest allowed distance of an original boundary vertex from the
    /// coarsened boundary. Defaults to a tenth of the expected edge length.
    pub max_boundary_deviation: Option<f64>,
    /// Collapses producing a triangle below this side ratio are rejected.
    pub min_edge_ratio: f64,
}

impl CoarsenOptions {
    pub fn new(factor: f64) -> Self {
        CoarsenOptions {
            factor,
            max_boundary_deviation: None,
            min_edge_ratio: 0.1,
        }
    }
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

struct Work {
    pts: Vec<Point2>,
    tris: Vec<Option<[usize; 3]>>,
    regions: Vec<u32>,
    vtris: Vec<BTreeSet<usize>>,
    alive: Vec<bool>,
    /// Constrained edge -> (tag, original vertices it now covers).
    segs: HashMap<(usize, usize), (u32, Vec<Point2>)>,
    seg_deg: Vec<usize>,
}

impl Work {
    fn neighbours(&self, v: usize) -> BTreeSet<usize> {
        self.vtris[v]
            .iter()
            .flat_map(|&t| self.tris[t].unwrap())
            .filter(|&w| w != v)
            .collect()
    }

    /// Collapses `a` onto `b` if that keeps the mesh valid.
    fn try_collapse(&mut self, a: usize, b: usize, opts: &CoarsenOptions, tol: f64) -> bool {
        let on_seg = self.seg_deg[a] > 0;
        let ab_seg = self.segs.contains_key(&key(a, b));
        if on_seg && (self.seg_deg[a] != 2 || !ab_seg) {
            return false;
        }
        if !on_seg && ab_seg {
            return false;
        }
        let shared: Vec<usize> = self.vtris[a].intersection(&self.vtris[b]).copied().collect();
        if shared.is_empty() {
            return false;
        }
        // link condition
        let opposite: BTreeSet<usize> = shared
            .iter()
            .flat_map(|&t| self.tris[t].unwrap())
            .filter(|&w| w != a && w != b)
            .collect();
        let common: BTreeSet<usize> = self.neighbours(a).intersection(&self.neighbours(b)).copied().collect();
        if common != opposite {
            return false;
        }
        for &t in self.vtris[a].iter().filter(|t| !shared.contains(t)) {
            let tri = self.tris[t].unwrap().map(|v| if v == a { b } else { v });
            let p = tri.map(|v| self.pts[v]);
            let area = signed_tri_area(p[0], p[1], p[2]);
            if !(area > 0.0) || triangle_edge_ratio(p[0], p[1], p[2]) < opts.min_edge_ratio {
                return false;
            }
        }
        let mut merged = None;
        if on_seg {
            let p = self
                .segs
                .keys()
                .filter(|&&(x, y)| (x == a || y == a) && key(x, y) != key(a, b))
                .map(|&(x, y)| if x == a { y } else { x })
                .next();
            let Some(p) = p else { return false };
            if self.segs.contains_key(&key(p, b)) {
                return false;
            }
            let (tag, mut cover) = self.segs[&key(p, a)].clone();
            cover.push(self.pts[a]);
            cover.extend(self.segs[&key(a, b)].1.iter().copied());
            let (pp, pb) = (self.pts[p], self.pts[b]);
            if cover.iter().any(|&q| closest_on_segment(pp, pb, q).0.dist(q) > tol) {
                return false;
            }
            merged = Some((p, tag, cover));
        }

        for &t in &shared {
            for v in self.tris[t].unwrap() {
                self.vtris[v].remove(&t);
            }
            self.tris[t] = None;
        }
        let rest: Vec<usize> = self.vtris[a].iter().copied().collect();
        for t in rest {
            let tri = self.tris[t].as_mut().unwrap();
            for v in tri.iter_mut() {
                if *v == a {
                    *v = b;
                }
            }
            self.vtris[b].insert(t);
        }
        self.vtris[a].clear();
        self.alive[a] = false;
        if let Some((p, tag, cover)) = merged {
            self.segs.remove(&key(p, a));
            self.segs.remove(&key(a, b));
            self.segs.insert(key(p, b), (tag, cover));
            self.seg_deg[a] = 0;
        }
        true
    }
}

/// Edge-collapse decimation toward `factor` times fewer vertices. Boundary
/// and interface vertices only slide along their own polyline and junctions
/// are kept, so the boundary moves by at most the configured deviation.
pub fn coarsen(mesh: &TriMesh, opts: CoarsenOptions) -> Result<TriMesh> {
    if !(opts.factor >= 1.0 && opts.factor.is_finite()) {
        return Err(Error::InvalidInput(format!("coarsen factor must be >= 1, got {}", opts.factor)));
    }
    let nv = mesh.vertex_count();
    let target = (nv as f64 / opts.factor).ceil() as usize;
    let min_vertices = 3 * mesh.boundary_loops().len().max(1);
    if target < min_vertices {
        return Err(Error::InvalidInput(format!(
            "coarsening to {target} vertices is below the minimum of {min_vertices} for this topology"
        )));
    }
    let mean_edge = {
        let e = mesh.edges();
        e.iter().map(|&[a, b]| mesh.vertices()[a].dist(mesh.vertices()[b])).sum::<f64>() / e.len() as f64
    };
    let tol = opts
        .max_boundary_deviation
        .unwrap_or(mean_edge * opts.factor.sqrt() / 10.0);

    let mut segs = HashMap::new();
    let mut seg_deg = vec![0usize; nv];
    let mut constrained: Vec<TaggedEdge> = mesh.segments().to_vec();
    let seg_keys: std::collections::HashSet<_> = constrained.iter().map(|s| key(s.v[0], s.v[1])).collect();
    for e in mesh.boundary_edges() {
        if !seg_keys.contains(&key(e.v[0], e.v[1])) {
            constrained.push(*e);
        }
    }
    for s in &constrained {
        if segs.insert(key(s.v[0], s.v[1]), (s.tag, Vec::new())).is_none() {
            seg_deg[s.v[0]] += 1;
            seg_deg[s.v[1]] += 1;
        }
    }
    let mut vtris = vec![BTreeSet::new(); nv];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for &v in tri {
            vtris[v].insert(t);
        }
    }
    let mut w = Work {
        pts: mesh.vertices().to_vec(),
        tris: mesh.triangles().iter().map(|&t| Some(t)).collect(),
        regions: mesh.triangle_region_tags().to_vec(),
        vtris,
        alive: vec![true; nv],
        segs,
        seg_deg,
    };
    let mut count = nv;
    loop {
        let mut edges: Vec<(f64, usize, usize)> = Vec::new();
        for tri in w.tris.iter().flatten() {
            for k in 0..3 {
                let (a, b) = key(tri[k], tri[(k + 1) % 3]);
                edges.push((w.pts[a].dist(w.pts[b]), a, b));
            }
        }
        edges.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        edges.dedup_by(|x, y| x.1 == y.1 && x.2 == y.2);
        let mut touched = vec![false; nv];
        let mut progress = false;
        for &(_, a, b) in &edges {
            if count <= target {
                break;
            }
            if !w.alive[a] || !w.alive[b] || touched[a] || touched[b] {
                continue;
            }
            let done = w.try_collapse(a, b, &opts, tol) || w.try_collapse(b, a, &opts, tol);
            if done {
                count -= 1;
                progress = true;
                touched[a] = true;
                touched[b] = true;
                for v in w.neighbours(if w.alive[a] { a } else { b }) {
                    touched[v] = true;
                }
            }
        }
        if count <= target || !progress {
            break;
        }
    }
    if count > target {
        warn!("coarsening stopped at {count} vertices, target was {target}");
    }

    let mut remap = vec![usize::MAX; nv];
    let mut vertices = Vec::with_capacity(count);
    let mut vtag = Vec::with_capacity(count);
    for v in 0..nv {
        if w.alive[v] && !w.vtris[v].is_empty() {
            remap[v] = vertices.len();
            vertices.push(w.pts[v]);
            vtag.push(mesh.vertex_boundary_tags()[v]);
        }
    }
    let mut triangles = Vec::new();
    let mut regions = Vec::new();
    for (t, tri) in w.tris.iter().enumerate() {
        if let Some(tri) = tri {
            triangles.push(tri.map(|v| remap[v]));
            regions.push(w.regions[t]);
        }
    }
    let original: std::collections::HashSet<_> = mesh.segments().iter().map(|s| s.tag).collect();
    let mut segments: Vec<TaggedEdge> = w
        .segs
        .iter()
        .filter(|(_, (tag, _))| original.contains(tag))
        .map(|(&(a, b), &(tag, _))| TaggedEdge { v: [remap[a], remap[b]], tag })
        .collect();
    segments.sort_by_key(|s| (s.v, s.tag));
    TriMesh::from_parts(
        vertices,
        triangles,
        vtag,
        regions,
        mesh.boundary_labels().to_vec(),
        mesh.region_labels().to_vec(),
        segments,
    )
}
