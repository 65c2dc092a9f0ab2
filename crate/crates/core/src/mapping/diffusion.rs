use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::{DisplacementField, MappingMethod};
use crate::error::{Error, Result};
use crate::fem::{barycentric, hat_gradients, solve_laplace, BoundaryConditions, FieldState};
use crate::geometry::{point_in_polygon, resample_equidistant, segments_intersect, Curve, Point2};
use crate::mesh::{triangulate, TriMesh};

const START: &str = "start";
const END: &str = "end";

/// Harmonic potential on the region between two nested closed curves with
/// a continuous (nodally averaged) gradient for streamline tracing.
#[derive(Debug, Clone)]
pub struct GapPotential {
    potential: FieldState,
    grad: Vec<Point2>,
    neighbours: Vec<[Option<usize>; 3]>,
    start: Curve,
    end: Curve,
}

fn check_nested(a: &Curve, b: &Curve) -> Result<(Curve, Curve)> {
    if !(a.is_closed() && b.is_closed()) {
        return Err(Error::InvalidInput("diffusion mapping needs two closed curves".into()));
    }
    for (p, q) in a.segments() {
        if b.segments().any(|(r, s)| segments_intersect(p, q, r, s)) {
            return Err(Error::Intersection(format!(
                "curves '{}' and '{}' intersect; split them with split_at_intersection and map the pieces",
                a.label(),
                b.label()
            )));
        }
    }
    if point_in_polygon(a.points()[0], b.points()) {
        Ok((b.clone(), a.clone()))
    } else if point_in_polygon(b.points()[0], a.points()) {
        Ok((a.clone(), b.clone()))
    } else {
        Err(Error::InvalidInput("diffusion mapping needs one curve inside the other".into()))
    }
}

impl GapPotential {
    /// Solves `lap c = 0` between `start` (c = 1) and `end` (c = 0).
    pub fn new(start: &Curve, end: &Curve, h: f64) -> Result<GapPotential> {
        let start = start.clone().with_label(START);
        let end = end.clone().with_label(END);
        let (outer, inner) = check_nested(&start, &end)?;
        let hole = if inner.signed_area()? > 0.0 { inner.reversed() } else { inner };
        let mesh = Arc::new(triangulate(&outer, &[hole], h, &[])?);
        let bc = BoundaryConditions::zero_flux().dirichlet(START, 1.0).dirichlet(END, 0.0);
        let potential = solve_laplace(mesh.clone(), &bc)?;
        let grad = nodal_gradients(&mesh, potential.values());
        let neighbours = neighbours(&mesh);
        Ok(GapPotential {
            potential,
            grad,
            neighbours,
            start,
            end,
        })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        self.potential.mesh()
    }

    pub fn potential(&self) -> &FieldState {
        &self.potential
    }

    fn find(&self, p: Point2) -> Option<usize> {
        let mesh = self.mesh();
        (0..mesh.triangle_count())
            .find(|&t| barycentric(mesh.triangle_points(t), p).iter().all(|&l| l >= -1e-10))
            .or_else(|| {
                // seeds on the boundary may fall just outside in floating point
                (0..mesh.triangle_count())
                    .map(|t| (t, barycentric(mesh.triangle_points(t), p).iter().fold(0.0f64, |m, &l| m.min(l))))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .filter(|x| x.1 > -1e-6)
                    .map(|x| x.0)
            })
    }

    /// Walks from triangle `t` towards `p`. Stops at the boundary, so the
    /// returned triangle may not contain `p` (its linear data then
    /// extrapolates).
    fn walk(&self, mut t: usize, p: Point2) -> usize {
        let mesh = self.mesh();
        for _ in 0..mesh.triangle_count() {
            let l = barycentric(mesh.triangle_points(t), p);
            // barycentric k is opposite vertex k, i.e. edge (k+1, k+2)
            let (k, &m) = l.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            if m >= -1e-12 {
                return t;
            }
            match self.neighbours[t][k] {
                Some(n) => t = n,
                None => return t,
            }
        }
        t
    }

    /// Unit direction of `-grad c` at `p`, evaluated through triangle `t`.
    fn direction(&self, t: usize, p: Point2) -> (Point2, f64) {
        let mesh = self.mesh();
        let l = barycentric(mesh.triangle_points(t), p);
        let tri = mesh.triangles()[t];
        let g = (0..3).fold(Point2::ORIGIN, |acc, k| acc + self.grad[tri[k]] * l[k]);
        (-g.normalized(), g.norm())
    }

    /// Endpoint on the end curve of the streamline through `seed`.
    pub fn trace(&self, seed: Point2, index: usize, h: f64) -> Result<Point2> {
        let mesh = self.mesh();
        let scale = mesh.vertices().iter().fold(1.0f64, |m, p| m.max(p.norm()));
        let arrive = 1e-6 * scale;
        let tol = 1e-7 * h;
        let diam = self.start.length().max(self.end.length());
        let stagnation = |p: Point2| {
            Error::Mapping(format!(
                "streamline from seed {index} stagnates at ({:.6}, {:.6})",
                p.x, p.y
            ))
        };
        let mut t = self.find(seed).ok_or_else(|| {
            Error::Mapping(format!("seed {index} at ({:.6}, {:.6}) is outside the gap mesh", seed.x, seed.y))
        })?;
        let mut p = seed;
        let mut ds = 0.25 * h;
        let mut travelled = 0.0;
        let field = |t: usize, q: Point2| -> (usize, Point2, f64) {
            let t = self.walk(t, q);
            let (d, g) = self.direction(t, q);
            (t, d, g)
        };
        let rk4 = |t: usize, p: Point2, ds: f64| -> Option<(usize, Point2)> {
            let (t1, k1, g1) = field(t, p);
            let (t2, k2, g2) = field(t1, p + k1 * (0.5 * ds));
            let (t3, k3, g3) = field(t2, p + k2 * (0.5 * ds));
            let (_, k4, g4) = field(t3, p + k3 * ds);
            if [g1, g2, g3, g4].iter().any(|&g| g < 1e-12) {
                return None;
            }
            Some((t1, p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (ds / 6.0)))
        };
        loop {
            if ds < 1e-12 * scale {
                return Err(stagnation(p));
            }
            let full = rk4(t, p, ds);
            let half = rk4(t, p, 0.5 * ds).and_then(|(t2, q)| rk4(t2, q, 0.5 * ds));
            let (Some((_, q1)), Some((t2, q2))) = (full, half) else {
                ds *= 0.5;
                continue;
            };
            let err = q1.dist(q2);
            if err > tol {
                ds *= 0.5;
                continue;
            }
            if q2.dist(p) < 1e-12 * scale {
                return Err(stagnation(p));
            }
            // arrival: first crossing of the step with the end curve
            let step = q2 - p;
            let hit = self
                .end
                .ray_hits(p, step)
                .into_iter()
                .filter(|h| (0.0..=1.0).contains(&h.0))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, x)) = hit {
                return Ok(x);
            }
            let proj = self.end.project(q2);
            if proj.distance < arrive {
                return Ok(proj.point);
            }
            travelled += step.norm();
            if travelled > 10.0 * diam {
                return Err(Error::Mapping(format!("streamline from seed {index} does not reach the end curve")));
            }
            p = q2;
            t = self.walk(t2, p);
            if err < 0.1 * tol {
                ds = (ds * 2.0).min(h);
            }
        }
    }
}

/// Area-weighted average of the element gradients around each vertex.
fn nodal_gradients(mesh: &TriMesh, c: &[f64]) -> Vec<Point2> {
    let mut g = vec![Point2::ORIGIN; mesh.vertex_count()];
    let mut w = vec![0.0; mesh.vertex_count()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let pts = mesh.triangle_points(t);
        let area = mesh.triangle_area(t);
        let grads = hat_gradients(pts);
        let ge = (0..3).fold(Point2::ORIGIN, |acc, k| acc + grads[k] * c[tri[k]]);
        for &v in tri {
            g[v] += ge * area;
            w[v] += area;
        }
    }
    g.iter().zip(&w).map(|(&g, &w)| g * (1.0 / w)).collect()
}

/// Neighbour across the edge opposite each corner.
fn neighbours(mesh: &TriMesh) -> Vec<[Option<usize>; 3]> {
    let mut edge: HashMap<(usize, usize), usize> = HashMap::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for k in 0..3 {
            edge.insert((tri[(k + 1) % 3], tri[(k + 2) % 3]), t);
        }
    }
    mesh.triangles()
        .iter()
        .map(|tri| {
            let mut n = [None; 3];
            for (k, slot) in n.iter_mut().enumerate() {
                *slot = edge.get(&(tri[(k + 2) % 3], tri[(k + 1) % 3])).copied();
            }
            n
        })
        .collect()
}

/// Correspondence along streamlines of the harmonic potential that is 1 on
/// `c1` and 0 on `c2`, seeded at `n_stream` equidistant points of `c1`.
/// With `reverse` the streamlines start on `c2` and the pairs are inverted.
pub fn map_diffusion(c1: &Curve, c2: &Curve, reverse: bool, n_stream: usize, h: f64) -> Result<DisplacementField> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("mesh size must be positive, got {h}")));
    }
    let (from, to) = if reverse { (c2, c1) } else { (c1, c2) };
    let gap = GapPotential::new(from, to, h)?;
    let seeds = resample_equidistant(from, n_stream)?;
    let ends = seeds
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, &s)| gap.trace(s, i, h))
        .collect::<Result<Vec<_>>>()?;
    let seeds = seeds.into_points();
    let field = if reverse {
        let vectors = seeds.iter().zip(&ends).map(|(&q, &e)| q - e).collect();
        DisplacementField::new(ends, vectors, true, MappingMethod::ReverseDiffusion)?
    } else {
        let vectors = seeds.iter().zip(&ends).map(|(&s, &e)| e - s).collect();
        DisplacementField::new(seeds, vectors, true, MappingMethod::Diffusion)?
    };
    Ok(field)
}
