//! Linear finite elements on triangle meshes: assembly, boundary
//! conditions, steady Laplace solves and reaction-diffusion stepping on
//! static and growing domains.

mod kinetics;
pub mod sparse;
mod stepping;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mesh::TriMesh;
pub use kinetics::{CompiledKinetics, Kinetics, Monomial, ReactionModel};
pub use sparse::{CsrMatrix, Cholesky, DirichletSolver};
pub use stepping::{
    simulate, step_rd, step_rd_growing, write_trajectory, GrowthSeries, InitialCondition,
    PreEquilibration, Schedule, SimulationOptions, StaticStepper, Trajectory,
};

type Mat3 = [[f64; 3]; 3];

/// Area, stiffness and consistent mass of one linear triangle.
pub fn element_matrices(p: [Point2; 3]) -> Result<(f64, Mat3, Mat3)> {
    let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]);
    if !(area > 0.0) {
        return Err(Error::Inverted(format!("element area {area:e}")));
    }
    // gradient of the hat function of vertex i: perpendicular of the opposite edge
    let g: [Point2; 3] = std::array::from_fn(|i| {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        Point2::new(a.y - b.y, b.x - a.x) * (1.0 / (2.0 * area))
    });
    let mut k = [[0.0; 3]; 3];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * g[i].dot(g[j]);
            m[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
        }
    }
    Ok((area, k, m))
}

/// Gradients of the three hat functions of a triangle.
pub(crate) fn hat_gradients(p: [Point2; 3]) -> [Point2; 3] {
    let area2 = (p[1] - p[0]).cross(p[2] - p[0]);
    std::array::from_fn(|i| {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        Point2::new(a.y - b.y, b.x - a.x) * (1.0 / area2)
    })
}

#[derive(Debug, Clone)]
pub struct BoundaryOperator {
    /// `B_ij = int phi_i phi_j ds` over edges with this label.
    pub mass: CsrMatrix,
    /// `b_i = int phi_i ds` over edges with this label.
    pub load: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub boundary: BTreeMap<String, BoundaryOperator>,
}

/// Global P1 stiffness, mass and per-label boundary matrices. Element
/// matrices are computed in parallel and summed in element order.
pub fn assemble(mesh: &TriMesh) -> Result<Assembly> {
    let elems: Vec<(f64, Mat3, Mat3)> = (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| element_matrices(mesh.triangle_points(t)).map_err(|e| match e {
            Error::Inverted(m) => Error::Inverted(format!("triangle {t}: {m}")),
            e => e,
        }))
        .collect::<Result<_>>()?;
    let n = mesh.vertex_count();
    let mut kt = Vec::with_capacity(9 * elems.len());
    let mut mt = Vec::with_capacity(9 * elems.len());
    for (tri, (_, k, m)) in mesh.triangles().iter().zip(&elems) {
        for i in 0..3 {
            for j in 0..3 {
                kt.push((tri[i], tri[j], k[i][j]));
                mt.push((tri[i], tri[j], m[i][j]));
            }
        }
    }
    let mut per_label: BTreeMap<String, (Vec<(usize, usize, f64)>, Vec<f64>)> = BTreeMap::new();
    for e in mesh.boundary_edges() {
        let label = &mesh.boundary_labels()[e.tag as usize];
        let (t, load) = per_label
            .entry(label.clone())
            .or_insert_with(|| (Vec::new(), vec![0.0; n]));
        let [a, b] = e.v;
        let len = mesh.vertices()[a].dist(mesh.vertices()[b]);
        t.extend([(a, a, len / 3.0), (b, b, len / 3.0), (a, b, len / 6.0), (b, a, len / 6.0)]);
        load[a] += len / 2.0;
        load[b] += len / 2.0;
    }
    Ok(Assembly {
        stiffness: CsrMatrix::from_triplets(n, kt),
        mass: CsrMatrix::from_triplets(n, mt),
        boundary: per_label
            .into_iter()
            .map(|(l, (t, load))| (l, BoundaryOperator { mass: CsrMatrix::from_triplets(n, t), load }))
            .collect(),
    })
}

/// Boundary condition kinds. Flux is the inward normal flux `D dc/dn`
/// measured along the outward normal `n`, so a positive Neumann value feeds
/// material into the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryKind {
    Dirichlet { value: f64 },
    Neumann { flux: f64 },
    /// `alpha c + flux = beta`.
    Robin { alpha: f64, beta: f64 },
}

impl BoundaryKind {
    pub const ZERO_FLUX: BoundaryKind = BoundaryKind::Neumann { flux: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEntry {
    pub label: String,
    /// Species index; `None` applies to every species.
    #[serde(default)]
    pub species: Option<usize>,
    #[serde(flatten)]
    pub kind: BoundaryKind,
}

/// Boundary conditions per label and species. Later entries override
/// earlier ones; anything unlisted is zero-flux.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundaryConditions {
    entries: Vec<BoundaryEntry>,
}

impl BoundaryConditions {
    pub fn zero_flux() -> Self {
        BoundaryConditions::default()
    }

    pub fn with(mut self, label: &str, species: Option<usize>, kind: BoundaryKind) -> Self {
        self.entries.push(BoundaryEntry {
            label: label.to_string(),
            species,
            kind,
        });
        self
    }

    pub fn dirichlet(self, label: &str, value: f64) -> Self {
        self.with(label, None, BoundaryKind::Dirichlet { value })
    }

    pub fn entries(&self) -> &[BoundaryEntry] {
        &self.entries
    }

    pub fn get(&self, label: &str, species: usize) -> BoundaryKind {
        self.entries
            .iter()
            .rev()
            .find(|e| e.label == label && e.species.map_or(true, |s| s == species))
            .map_or(BoundaryKind::ZERO_FLUX, |e| e.kind)
    }

    /// Every entry must name a boundary label of the mesh, a valid species
    /// and finite values.
    pub fn validate(&self, mesh: &TriMesh, n_species: usize) -> Result<()> {
        let on_boundary: std::collections::BTreeSet<&str> = mesh
            .boundary_edges()
            .iter()
            .map(|e| mesh.boundary_labels()[e.tag as usize].as_str())
            .collect();
        for e in &self.entries {
            if !on_boundary.contains(e.label.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "boundary condition for unknown label '{}' (mesh boundary labels: {:?})",
                    e.label, on_boundary
                )));
            }
            if let Some(s) = e.species {
                if s >= n_species {
                    return Err(Error::InvalidInput(format!(
                        "boundary condition for species {s}, model has {n_species}"
                    )));
                }
            }
            let finite = match e.kind {
                BoundaryKind::Dirichlet { value } => value.is_finite(),
                BoundaryKind::Neumann { flux } => flux.is_finite(),
                BoundaryKind::Robin { alpha, beta } => alpha.is_finite() && beta.is_finite() && alpha >= 0.0,
            };
            if !finite {
                return Err(Error::InvalidInput(format!("invalid boundary values on '{}'", e.label)));
            }
        }
        Ok(())
    }
}

/// Boundary data of one species on one mesh.
#[derive(Debug, Clone)]
pub(crate) struct SpeciesBoundary {
    pub fixed: Vec<bool>,
    pub values: Vec<f64>,
    /// Robin contribution `sum alpha B` to the operator.
    pub robin: Option<CsrMatrix>,
    /// Flux contribution to the right-hand side.
    pub load: Vec<f64>,
}

pub(crate) fn species_boundary(
    mesh: &TriMesh,
    asm: &Assembly,
    bc: &BoundaryConditions,
    species: usize,
) -> SpeciesBoundary {
    let n = mesh.vertex_count();
    let mut fixed = vec![false; n];
    let mut values = vec![0.0; n];
    let mut robin: Option<CsrMatrix> = None;
    let mut load = vec![0.0; n];
    for (label, op) in &asm.boundary {
        match bc.get(label, species) {
            BoundaryKind::Dirichlet { .. } | BoundaryKind::Neumann { .. } => {}
            BoundaryKind::Robin { alpha, beta } => {
                let term = op.mass.scaled(alpha);
                robin = Some(match robin {
                    Some(r) => r.linear_combination(1.0, &term, 1.0),
                    None => term,
                });
                load.iter_mut().zip(&op.load).for_each(|(l, b)| *l += beta * b);
            }
        }
        if let BoundaryKind::Neumann { flux } = bc.get(label, species) {
            load.iter_mut().zip(&op.load).for_each(|(l, b)| *l += flux * b);
        }
    }
    for e in mesh.boundary_edges() {
        let label = &mesh.boundary_labels()[e.tag as usize];
        if let BoundaryKind::Dirichlet { value } = bc.get(label, species) {
            for &v in &e.v {
                fixed[v] = true;
                values[v] = value;
            }
        }
    }
    SpeciesBoundary {
        fixed,
        values,
        robin,
        load,
    }
}

/// Per-vertex concentrations of every species at time `t`, stored
/// species-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    mesh: Arc<TriMesh>,
    n_species: usize,
    c: Vec<f64>,
    t: f64,
}

impl FieldState {
    pub fn new(mesh: Arc<TriMesh>, n_species: usize, c: Vec<f64>, t: f64) -> Result<FieldState> {
        if n_species == 0 || c.len() != n_species * mesh.vertex_count() {
            return Err(Error::InvalidInput(format!(
                "{} values for {} species on {} vertices",
                c.len(),
                n_species,
                mesh.vertex_count()
            )));
        }
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            let nv = mesh.vertex_count();
            return Err(Error::Simulation(format!(
                "non-finite concentration of species {} at vertex {}",
                i / nv,
                i % nv
            )));
        }
        Ok(FieldState { mesh, n_species, c, t })
    }

    pub fn uniform(mesh: Arc<TriMesh>, values: &[f64], t: f64) -> Result<FieldState> {
        let nv = mesh.vertex_count();
        let c = values.iter().flat_map(|&v| std::iter::repeat(v).take(nv)).collect();
        FieldState::new(mesh, values.len(), c, t)
    }

    /// Uniform values times `1 + amplitude * U(-1, 1)`, drawn per vertex and
    /// species from a ChaCha stream seeded with `seed`.
    pub fn noisy(mesh: Arc<TriMesh>, values: &[f64], amplitude: f64, seed: u64, t: f64) -> Result<FieldState> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let nv = mesh.vertex_count();
        let c = values
            .iter()
            .flat_map(|&v| (0..nv).map(|_| v * (1.0 + amplitude * rng.gen_range(-1.0..1.0))).collect::<Vec<_>>())
            .collect();
        FieldState::new(mesh, values.len(), c, t)
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }

    pub fn species(&self, s: usize) -> &[f64] {
        let nv = self.mesh.vertex_count();
        &self.c[s * nv..(s + 1) * nv]
    }

    pub fn at(&self, vertex: usize, species: usize) -> f64 {
        self.c[species * self.mesh.vertex_count() + vertex]
    }

    pub(crate) fn with_values(&self, mesh: Arc<TriMesh>, c: Vec<f64>, t: f64) -> Result<FieldState> {
        FieldState::new(mesh, self.n_species, c, t)
    }

    /// `int c_s dA`, exact for the piecewise-linear field.
    pub fn integral(&self, s: usize) -> f64 {
        let c = self.species(s);
        (0..self.mesh.triangle_count())
            .map(|t| {
                let tri = self.mesh.triangles()[t];
                self.mesh.triangle_area(t) / 3.0 * (c[tri[0]] + c[tri[1]] + c[tri[2]])
            })
            .sum()
    }

    pub fn mean(&self, s: usize) -> f64 {
        self.integral(s) / self.mesh.area()
    }

    /// Area-weighted spatial variance `int (c - mean)^2 dA / area`.
    pub fn variance(&self, s: usize) -> f64 {
        let mean = self.mean(s);
        let c = self.species(s);
        let total: f64 = (0..self.mesh.triangle_count())
            .map(|t| {
                let d = self.mesh.triangles()[t].map(|v| c[v] - mean);
                let sq = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let cross = d[0] * d[1] + d[1] * d[2] + d[2] * d[0];
                self.mesh.triangle_area(t) / 6.0 * (sq + cross)
            })
            .sum();
        total / self.mesh.area()
    }

    pub fn min_value(&self) -> f64 {
        self.c.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Value of species `s` at `p` by linear interpolation, `None` outside
    /// the mesh.
    pub fn evaluate(&self, p: Point2, s: usize) -> Option<f64> {
        let t = self.mesh.locate(p)?;
        let pts = self.mesh.triangle_points(t);
        let w = barycentric(pts, p);
        let c = self.species(s);
        Some((0..3).map(|k| w[k] * c[self.mesh.triangles()[t][k]]).sum())
    }

    pub fn to_csv_string(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("vertex_id,x,y");
        for k in 0..self.n_species {
            let _ = write!(s, ",c_{k}");
        }
        s.push('\n');
        for (v, p) in self.mesh.vertices().iter().enumerate() {
            let _ = write!(s, "{v},{:?},{:?}", p.x, p.y);
            for k in 0..self.n_species {
                let _ = write!(s, ",{:?}", self.at(v, k));
            }
            s.push('\n');
        }
        s
    }

    /// Parses the output of [`FieldState::to_csv_string`] on `mesh`. Rows
    /// must list every vertex at its mesh position.
    pub fn from_csv_str(mesh: Arc<TriMesh>, text: &str, t: f64) -> std::result::Result<FieldState, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
        if header.len() < 4 || header[..3] != ["vertex_id", "x", "y"] {
            return Err("expected header 'vertex_id,x,y,c_0,...'".into());
        }
        let ns = header.len() - 3;
        let nv = mesh.vertex_count();
        let scale = mesh.vertices().iter().fold(1.0f64, |m, p| m.max(p.norm()));
        let mut c = vec![f64::NAN; ns * nv];
        let mut seen = vec![false; nv];
        for (k, line) in lines.enumerate() {
            let f: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("row {}: {e}", k + 2))?;
            if f.len() != ns + 3 {
                return Err(format!("row {}: expected {} columns", k + 2, ns + 3));
            }
            let v = f[0] as usize;
            if f[0] < 0.0 || f[0].fract() != 0.0 || v >= nv {
                return Err(format!("row {}: vertex id {} not in mesh", k + 2, f[0]));
            }
            if mesh.vertices()[v].dist(Point2::new(f[1], f[2])) > 1e-9 * scale {
                return Err(format!("row {}: vertex {v} is not at its mesh position", k + 2));
            }
            seen[v] = true;
            for s in 0..ns {
                c[s * nv + v] = f[3 + s];
            }
        }
        if let Some(v) = seen.iter().position(|&s| !s) {
            return Err(format!("vertex {v} missing"));
        }
        FieldState::new(mesh, ns, c, t).map_err(|e| e.to_string())
    }

    pub fn read_csv(mesh: Arc<TriMesh>, path: &std::path::Path, t: f64) -> Result<FieldState> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FieldState::from_csv_str(mesh, &text, t).map_err(|m| Error::parse(path, m))
    }
}

pub(crate) fn barycentric(p: [Point2; 3], q: Point2) -> [f64; 3] {
    let area = (p[1] - p[0]).cross(p[2] - p[0]);
    let l1 = (p[2] - p[1]).cross(q - p[1]) / area;
    let l2 = (p[0] - p[2]).cross(q - p[2]) / area;
    [l1, l2, 1.0 - l1 - l2]
}

fn require_anchor(mesh: &TriMesh, bc: &BoundaryConditions, sb: &SpeciesBoundary) -> Result<()> {
    let has_robin = mesh
        .boundary_labels()
        .iter()
        .any(|l| matches!(bc.get(l, 0), BoundaryKind::Robin { alpha, .. } if alpha > 0.0));
    if !sb.fixed.iter().any(|&f| f) && !has_robin {
        return Err(Error::Singular(
            "steady problem without Dirichlet or Robin boundary is singular".into(),
        ));
    }
    Ok(())
}

/// Steady solution of `Laplace c = 0` with the given boundary conditions.
pub fn solve_laplace(mesh: impl Into<Arc<TriMesh>>, bc: &BoundaryConditions) -> Result<FieldState> {
    let mesh = mesh.into();
    bc.validate(&mesh, 1)?;
    let asm = assemble(&mesh)?;
    let sb = species_boundary(&mesh, &asm, bc, 0);
    require_anchor(&mesh, bc, &sb)?;
    let a = match &sb.robin {
        Some(r) => asm.stiffness.linear_combination(1.0, r, 1.0),
        None => asm.stiffness.clone(),
    };
    let solver = DirichletSolver::new(&a, &sb.fixed)?;
    let c = solver.solve(&sb.load, &sb.values);
    FieldState::new(mesh, 1, c, 0.0)
}

/// Harmonic extension of boundary displacements into the interior, with
/// the factorization cached for repeated use on one mesh.
#[derive(Debug, Clone)]
pub struct HarmonicExtension {
    boundary: Vec<bool>,
    solver: DirichletSolver,
}

impl HarmonicExtension {
    pub fn new(mesh: &TriMesh) -> Result<HarmonicExtension> {
        let asm = assemble(mesh)?;
        let boundary = mesh.is_boundary_vertex();
        let solver = DirichletSolver::new(&asm.stiffness, &boundary)?;
        Ok(HarmonicExtension { boundary, solver })
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    /// `disp` holds the prescribed values at boundary vertices; interior
    /// entries are ignored and replaced.
    pub fn extend(&self, disp: &[Point2]) -> Vec<Point2> {
        let n = disp.len();
        let zero = vec![0.0; n];
        let xs: Vec<f64> = disp.iter().map(|d| d.x).collect();
        let ys: Vec<f64> = disp.iter().map(|d| d.y).collect();
        let (x, y) = rayon::join(|| self.solver.solve(&zero, &xs), || self.solver.solve(&zero, &ys));
        x.into_iter().zip(y).map(|(x, y)| Point2::new(x, y)).collect()
    }
}
