use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kinetics::CompiledKinetics;
use super::{assemble, species_boundary, Assembly, BoundaryConditions, CsrMatrix, DirichletSolver, FieldState, ReactionModel, SpeciesBoundary};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mapping::DisplacementField;
use crate::mesh::{deform, Deformer, TriMesh};

/// Explicit reaction values per species (species-major).
fn explicit_reactions(k: &CompiledKinetics, state: &FieldState) -> Result<Vec<f64>> {
    let n = state.n_species();
    let nv = state.mesh().vertex_count();
    let mut out = vec![0.0; n * nv];
    let mut c = vec![0.0; n];
    let mut r = vec![0.0; n];
    for v in 0..nv {
        for s in 0..n {
            c[s] = state.at(v, s);
        }
        k.explicit(&c, &mut r);
        for s in 0..n {
            if !r[s].is_finite() {
                return Err(Error::Simulation(format!(
                    "reaction term of species {s} is not finite at vertex {v} (t = {})",
                    state.t()
                )));
            }
            out[s * nv + v] = r[s];
        }
    }
    Ok(out)
}

fn operator(asm: &Assembly, sb: &SpeciesBoundary, dt: f64, decay: f64, d: f64) -> CsrMatrix {
    let mut a = asm.mass.linear_combination(1.0 + dt * decay, &asm.stiffness, dt * d);
    if let Some(r) = &sb.robin {
        a = a.linear_combination(1.0, r, dt);
    }
    a
}

fn reaction_bound_check(k: &CompiledKinetics, state: &FieldState, dt: f64) {
    let n = state.n_species();
    let nv = state.mesh().vertex_count();
    let stride = (nv / 64).max(1);
    let mut worst: f64 = 0.0;
    for v in (0..nv).step_by(stride) {
        let c: Vec<f64> = (0..n).map(|s| state.at(v, s)).collect();
        worst = k.jacobian(&c).iter().fold(worst, |m, x| m.max(x.abs()));
    }
    if dt * worst > 1.0 {
        warn!("dt * max|dR/dc| = {:.3} exceeds 1; the explicit reaction step may be inaccurate", dt * worst);
    }
}

/// Cached factorizations for repeated IMEX steps of fixed size on one mesh.
#[derive(Debug, Clone)]
pub struct StaticStepper {
    mesh: Arc<TriMesh>,
    dt: f64,
    kinetics: CompiledKinetics,
    mass: CsrMatrix,
    boundary: Vec<SpeciesBoundary>,
    solvers: Vec<DirichletSolver>,
}

impl StaticStepper {
    pub fn new(mesh: Arc<TriMesh>, model: &ReactionModel, bc: &BoundaryConditions, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let kinetics = model.compile()?;
        bc.validate(&mesh, model.n_species())?;
        let asm = assemble(&mesh)?;
        let boundary: Vec<SpeciesBoundary> = (0..model.n_species())
            .map(|s| species_boundary(&mesh, &asm, bc, s))
            .collect();
        let solvers = (0..model.n_species())
            .into_par_iter()
            .map(|s| {
                let a = operator(&asm, &boundary[s], dt, kinetics.decay[s], model.diffusion[s]);
                DirichletSolver::new(&a, &boundary[s].fixed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StaticStepper {
            mesh,
            dt,
            kinetics,
            mass: asm.mass,
            boundary,
            solvers,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `(M (1 + dt g) + dt D K) c' = M (c + dt F(c))` per species, with the
    /// linear decay `g` implicit and the remaining reaction terms explicit.
    pub fn step(&self, state: &FieldState) -> Result<FieldState> {
        if !Arc::ptr_eq(state.mesh(), &self.mesh) && **state.mesh() != *self.mesh {
            return Err(Error::InvalidInput("state lives on a different mesh".into()));
        }
        let nv = self.mesh.vertex_count();
        let f = explicit_reactions(&self.kinetics, state)?;
        let dt = self.dt;
        let parts: Vec<Vec<f64>> = (0..state.n_species())
            .into_par_iter()
            .map(|s| {
                let c = state.species(s);
                let w: Vec<f64> = c.iter().zip(&f[s * nv..(s + 1) * nv]).map(|(c, r)| c + dt * r).collect();
                let mut rhs = self.mass.mul_vec(&w);
                rhs.iter_mut().zip(&self.boundary[s].load).for_each(|(r, l)| *r += dt * l);
                self.solvers[s].solve(&rhs, &self.boundary[s].values)
            })
            .collect();
        state.with_values(self.mesh.clone(), parts.concat(), state.t() + dt)
    }
}

/// One IMEX step on a static domain.
pub fn step_rd(state: &FieldState, model: &ReactionModel, bc: &BoundaryConditions, dt: f64) -> Result<FieldState> {
    let stepper = StaticStepper::new(state.mesh().clone(), model, bc, dt)?;
    reaction_bound_check(&stepper.kinetics, state, dt);
    stepper.step(state)
}

/// Boundary motion given as consecutive displacement fields. Stage `k`
/// covers `[t_k, t_k + dt_k]` and the next stage starts where it ends.
/// The sources of the first stage are tracked as material points: each
/// stage moves them by its field, interpolated along its source polyline,
/// and positions are linear in time within a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSeries {
    stages: Vec<DisplacementField>,
    material: Vec<Vec<Point2>>,
}

fn mean_spacing(f: &DisplacementField) -> f64 {
    let p = f.sources();
    let n = if f.is_closed() { p.len() } else { p.len() - 1 };
    (0..n).map(|i| p[i].dist(p[(i + 1) % p.len()])).sum::<f64>() / n as f64
}

impl GrowthSeries {
    /// Tracks the source points of the first stage.
    pub fn new(stages: Vec<DisplacementField>) -> Result<GrowthSeries> {
        let Some(first) = stages.first() else {
            return Err(Error::InvalidInput("growth series has no stages".into()));
        };
        let points = first.sources().to_vec();
        GrowthSeries::from_points(stages, points)
    }

    /// Tracks `points`, which must lie on the source polyline of the first
    /// stage (a coarser resampling, for instance).
    pub fn from_points(stages: Vec<DisplacementField>, points: Vec<Point2>) -> Result<GrowthSeries> {
        if stages.is_empty() {
            return Err(Error::InvalidInput("growth series has no stages".into()));
        }
        if points.len() < 2 {
            return Err(Error::InvalidInput("growth series needs at least two material points".into()));
        }
        for w in stages.windows(2) {
            let end = w[0].t() + w[0].dt();
            if (w[1].t() - end).abs() > 1e-9 * end.abs().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "growth stage starting at t={} does not follow the stage ending at t={end}",
                    w[1].t()
                )));
            }
        }
        let mut material = vec![points];
        for (k, stage) in stages.iter().enumerate() {
            let tol = 0.5 * mean_spacing(stage) + 1e-9;
            let next = material[k]
                .iter()
                .map(|&p| {
                    let (d, dist) = stage.interpolate(p);
                    if dist > tol {
                        Err(Error::InvalidInput(format!(
                            "boundary point ({:.6}, {:.6}) lies {dist:.3e} from the sources of the stage at t={}",
                            p.x,
                            p.y,
                            stage.t()
                        )))
                    } else {
                        Ok(p + d)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            material.push(next);
        }
        Ok(GrowthSeries { stages, material })
    }

    pub fn stages(&self) -> &[DisplacementField] {
        &self.stages
    }

    /// Material boundary points at the start of each stage and at the end.
    pub fn material(&self) -> &[Vec<Point2>] {
        &self.material
    }

    pub fn is_closed(&self) -> bool {
        self.stages[0].is_closed()
    }

    pub fn t_start(&self) -> f64 {
        self.stages[0].t()
    }

    pub fn t_end(&self) -> f64 {
        let last = self.stages.last().unwrap();
        last.t() + last.dt()
    }

    /// Material boundary points at time `t`.
    pub fn positions(&self, t: f64) -> Result<Vec<Point2>> {
        let eps = 1e-12 * self.t_end().abs().max(1.0);
        if t < self.t_start() - eps || t > self.t_end() + eps {
            return Err(Error::InvalidInput(format!(
                "time {t} outside the growth series [{}, {}]",
                self.t_start(),
                self.t_end()
            )));
        }
        let k = self
            .stages
            .iter()
            .position(|s| t <= s.t() + s.dt() + eps)
            .unwrap_or(self.stages.len() - 1);
        let s = &self.stages[k];
        let theta = ((t - s.t()) / s.dt()).clamp(0.0, 1.0);
        Ok(self.material[k].iter().zip(&self.material[k + 1]).map(|(&p, &q)| p.lerp(q, theta)).collect())
    }

    /// Field moving the boundary from time `t0` to `t1`.
    pub fn increment(&self, t0: f64, t1: f64) -> Result<DisplacementField> {
        let (a, b) = (self.positions(t0)?, self.positions(t1)?);
        let v = a.iter().zip(&b).map(|(&p, &q)| q - p).collect();
        DisplacementField::new(a, v, self.is_closed(), self.stages[0].method())?.with_time(t0, t1 - t0)
    }

    /// Reads `{"stages": [...], "points": ...}`: displacement-field CSV
    /// paths and an optional curve CSV of tracked points, relative to the
    /// JSON file.
    pub fn read_json(path: &Path) -> Result<GrowthSeries> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            stages: Vec<PathBuf>,
            #[serde(default)]
            points: Option<PathBuf>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Doc = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let stages = doc
            .stages
            .iter()
            .map(|p| DisplacementField::read_csv(&dir.join(p)))
            .collect::<Result<Vec<_>>>()?;
        match doc.points {
            Some(p) => GrowthSeries::from_points(stages, crate::geometry::Curve::read_csv(&dir.join(p))?.into_points()),
            None => GrowthSeries::new(stages),
        }
    }
}

/// One step of the moving-domain equation in conservative form:
/// `(M' (1 + dt g) + dt D K') c' = M (c + dt F(c))`, where primed matrices
/// belong to the moved mesh. Mesh velocity equals material velocity, so
/// the transport and dilution terms are carried by the change of `M`.
pub fn step_rd_growing(
    state: &FieldState,
    model: &ReactionModel,
    bc: &BoundaryConditions,
    growth: &GrowthSeries,
    dt: f64,
) -> Result<FieldState> {
    let kinetics = model.compile()?;
    moving_step(state, model, &kinetics, bc, growth, None, dt)
}

/// Mesh at the start of a growing run, moved as a whole at every step.
struct Reference {
    deformer: Deformer,
    t: f64,
}

/// With a reference the new mesh is the reference moved by the boundary
/// displacement accumulated since its time; otherwise the current mesh is
/// moved by the increment of this step.
fn moving_step(
    state: &FieldState,
    model: &ReactionModel,
    kinetics: &CompiledKinetics,
    bc: &BoundaryConditions,
    growth: &GrowthSeries,
    reference: Option<&Reference>,
    dt: f64,
) -> Result<FieldState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let t = state.t();
    let old = state.mesh();
    let moved = match reference {
        Some(r) => r.deformer.apply(&growth.increment(r.t, t + dt)?, 1.0),
        None => deform(old, &growth.increment(t, t + dt)?, 1.0),
    }
    .map_err(|e| match e {
        Error::Inverted(m) => Error::Inverted(format!("at t = {}: {m}; remesh the domain or use a smoother mapping", t + dt)),
        e => e,
    })?;
    let moved = Arc::new(moved);
    bc.validate(&moved, model.n_species())?;
    let old_mass = assemble(old)?.mass;
    let asm = assemble(&moved)?;
    let f = explicit_reactions(kinetics, state)?;
    let nv = old.vertex_count();
    let parts = (0..state.n_species())
        .into_par_iter()
        .map(|s| {
            let sb = species_boundary(&moved, &asm, bc, s);
            let a = operator(&asm, &sb, dt, kinetics.decay[s], model.diffusion[s]);
            let w: Vec<f64> = state
                .species(s)
                .iter()
                .zip(&f[s * nv..(s + 1) * nv])
                .map(|(c, r)| c + dt * r)
                .collect();
            let mut rhs = old_mass.mul_vec(&w);
            rhs.iter_mut().zip(&sb.load).for_each(|(r, l)| *r += dt * l);
            Ok(DirichletSolver::new(&a, &sb.fixed)?.solve(&rhs, &sb.values))
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    state.with_values(moved, parts.concat(), t + dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Absolute end time.
    pub t_end: f64,
    pub dt: f64,
    /// Keep every `output_stride`-th step (the final state is always kept).
    #[serde(default = "default_stride")]
    pub output_stride: usize,
}

fn default_stride() -> usize {
    1
}

/// Static run before the main schedule until `max |dc/dt| < tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreEquilibration {
    pub tol: f64,
    pub max_time: f64,
}

/// Uniform initial values with seeded relative noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    /// Per-species values; the homogeneous steady state when absent.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.01
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition {
            values: None,
            noise: default_noise(),
        }
    }
}

impl InitialCondition {
    pub fn build(&self, mesh: Arc<TriMesh>, model: &ReactionModel, seed: u64, t: f64) -> Result<FieldState> {
        let values = match &self.values {
            Some(v) if v.len() != model.n_species() => {
                return Err(Error::InvalidInput(format!(
                    "{} initial values for {} species",
                    v.len(),
                    model.n_species()
                )))
            }
            Some(v) => v.clone(),
            None => model.homogeneous_steady_state(None)?,
        };
        FieldState::noisy(mesh, &values, self.noise, seed, t)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOptions {
    pub schedule: Schedule,
    pub growth: Option<GrowthSeries>,
    pub pre_equilibrate: Option<PreEquilibration>,
}

impl SimulationOptions {
    pub fn new(schedule: Schedule) -> Self {
        SimulationOptions {
            schedule,
            growth: None,
            pre_equilibrate: None,
        }
    }

    pub fn with_growth(mut self, growth: GrowthSeries) -> Self {
        self.growth = Some(growth);
        self
    }

    pub fn with_pre_equilibration(mut self, pre: PreEquilibration) -> Self {
        self.pre_equilibrate = Some(pre);
        self
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub frames: Vec<FieldState>,
    pub steps: usize,
    /// Simulated time spent in pre-equilibration.
    pub pre_equilibration_time: f64,
}

impl Trajectory {
    pub fn last(&self) -> &FieldState {
        self.frames.last().expect("trajectory holds the initial state")
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(FieldState::t).collect()
    }
}

fn max_rate(a: &FieldState, b: &FieldState, dt: f64) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (y - x).abs() / dt)
        .fold(0.0, f64::max)
}

/// Time loop over static or growing-domain steps.
pub fn simulate(
    model: &ReactionModel,
    bc: &BoundaryConditions,
    initial: FieldState,
    opts: &SimulationOptions,
) -> Result<Trajectory> {
    let schedule = opts.schedule;
    let growth = opts.growth.as_ref();
    if initial.n_species() != model.n_species() {
        return Err(Error::InvalidInput(format!(
            "initial state has {} species, model has {}",
            initial.n_species(),
            model.n_species()
        )));
    }
    if !(schedule.dt > 0.0) || schedule.output_stride == 0 || !schedule.t_end.is_finite() {
        return Err(Error::InvalidInput("schedule needs dt > 0, output_stride >= 1 and finite t_end".into()));
    }
    let kinetics = model.compile()?;
    reaction_bound_check(&kinetics, &initial, schedule.dt);
    let mut state = initial;
    let mut pre_time = 0.0;
    if let Some(p) = opts.pre_equilibrate {
        let stepper = StaticStepper::new(state.mesh().clone(), model, bc, schedule.dt)?;
        let t0 = state.t();
        loop {
            let next = stepper.step(&state)?;
            pre_time += schedule.dt;
            let rate = max_rate(&state, &next, schedule.dt);
            state = next;
            if rate < p.tol {
                info!("pre-equilibrated after {pre_time} time units");
                break;
            }
            if pre_time >= p.max_time {
                warn!("pre-equilibration stopped at max_time {} with |dc/dt| = {rate:e}", p.max_time);
                break;
            }
        }
        state = state.with_values(state.mesh().clone(), state.values().to_vec(), t0)?;
    }
    let t0 = state.t();
    let mut frames = vec![state.clone()];
    if schedule.t_end <= t0 {
        return Ok(Trajectory {
            frames,
            steps: 0,
            pre_equilibration_time: pre_time,
        });
    }
    let span = schedule.t_end - t0;
    let n_steps = ((span / schedule.dt) - 1e-9).ceil().max(1.0) as usize;
    let mut static_stepper: Option<StaticStepper> = None;
    let mut reference: Option<Reference> = None;
    let mut warned = false;
    for k in 1..=n_steps {
        let t_next = if k == n_steps { schedule.t_end } else { t0 + k as f64 * schedule.dt };
        let dt = t_next - state.t();
        state = match growth {
            Some(g) => {
                if reference.is_none() {
                    reference = Some(Reference {
                        deformer: Deformer::new(state.mesh().clone())?,
                        t: state.t(),
                    });
                }
                moving_step(&state, model, &kinetics, bc, g, reference.as_ref(), dt)?
            }
            None => {
                let reuse = static_stepper.as_ref().map_or(false, |s| (s.dt() - dt).abs() <= 1e-12 * dt);
                if !reuse {
                    static_stepper = Some(StaticStepper::new(state.mesh().clone(), model, bc, dt)?);
                }
                let s = static_stepper.as_ref().unwrap().step(&state)?;
                // keep the nominal time grid free of accumulated rounding
                s.with_values(s.mesh().clone(), s.values().to_vec(), t_next)?
            }
        };
        if !warned && state.min_value() < -1e-8 {
            warn!("negative concentration {:e} at t = {}", state.min_value(), state.t());
            warned = true;
        }
        if k % schedule.output_stride == 0 || k == n_steps {
            frames.push(state.clone());
        }
    }
    Ok(Trajectory {
        frames,
        steps: n_steps,
        pre_equilibration_time: pre_time,
    })
}

/// Writes `frame_00000.csv`, ... into `dir`; returns the paths.
pub fn write_trajectory(traj: &Trajectory, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    traj.frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let p = dir.join(format!("frame_{k:05}.csv"));
            std::fs::write(&p, f.to_csv_string()).map_err(|e| Error::io(&p, e))?;
            Ok(p)
        })
        .collect()
}
