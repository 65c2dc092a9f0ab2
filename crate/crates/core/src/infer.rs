//! Parameter estimation against target patterns: distance metrics, global
//! screening, simplex refinement and information-criterion model ranking.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble, simulate, BoundaryConditions, FieldState, InitialCondition, ReactionModel,
    SimulationOptions,
};
use crate::geometry::Point2;
use crate::mesh::TriMesh;

/// Distance between a simulated and a target field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    /// `int (a - b)^2 dA / scale^2`, summed over species.
    Sse {
        #[serde(default = "unit")]
        scale: f64,
    },
    /// `1 - r` with `r` the Pearson correlation of nodal values, averaged
    /// over species.
    NormalizedCorrelation,
    /// `1 - |A ∩ B| / |A ∪ B|` for the regions where each field exceeds
    /// `threshold`, averaged over species.
    ThresholdOverlap { threshold: f64 },
}

fn unit() -> f64 {
    1.0
}

impl Metric {
    pub fn sse() -> Metric {
        Metric::Sse { scale: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Sse { .. } => "sse",
            Metric::NormalizedCorrelation => "normalized_correlation",
            Metric::ThresholdOverlap { .. } => "threshold_overlap",
        }
    }
}

/// Target values on the vertices of `mesh`, interpolating when the target
/// lives on another mesh.
fn on_mesh(target: &FieldState, mesh: &Arc<TriMesh>) -> Result<Vec<f64>> {
    if Arc::ptr_eq(target.mesh(), mesh) || **target.mesh() == **mesh {
        return Ok(target.values().to_vec());
    }
    let nv = mesh.vertex_count();
    let mut out = vec![0.0; nv * target.n_species()];
    for (v, &p) in mesh.vertices().iter().enumerate() {
        for s in 0..target.n_species() {
            out[s * nv + v] = target.evaluate(p, s).ok_or_else(|| {
                Error::InvalidInput(format!("vertex ({:.6}, {:.6}) lies outside the target mesh", p.x, p.y))
            })?;
        }
    }
    Ok(out)
}

fn pearson_distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return if a == b { 0.0 } else { 1.0 };
    }
    (1.0 - sab / (saa * sbb).sqrt()).clamp(0.0, 2.0)
}

/// Polygon vertex carrying the two linear fields.
#[derive(Clone, Copy)]
struct Node {
    p: Point2,
    f: [f64; 2],
}

fn clip(poly: &[Node], k: usize, thr: f64) -> Vec<Node> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (ia, ib) = (a.f[k] > thr, b.f[k] > thr);
        if ia {
            out.push(a);
        }
        if ia != ib {
            let t = (thr - a.f[k]) / (b.f[k] - a.f[k]);
            out.push(Node {
                p: a.p.lerp(b.p, t),
                f: [a.f[0] + t * (b.f[0] - a.f[0]), a.f[1] + t * (b.f[1] - a.f[1])],
            });
        }
    }
    out
}

fn polygon_area(poly: &[Node]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].p.cross(poly[(i + 1) % n].p)).sum::<f64>().abs() * 0.5
}

/// Areas of `{a > thr}`, `{b > thr}` and their intersection, exact for
/// piecewise-linear fields.
fn superlevel_areas(mesh: &TriMesh, a: &[f64], b: &[f64], thr: f64) -> (f64, f64, f64) {
    mesh.triangles()
        .par_iter()
        .enumerate()
        .map(|(t, tri)| {
            let pts = mesh.triangle_points(t);
            let poly: Vec<Node> = (0..3).map(|k| Node { p: pts[k], f: [a[tri[k]], b[tri[k]]] }).collect();
            let pa = clip(&poly, 0, thr);
            let pb = clip(&poly, 1, thr);
            let pab = clip(&pa, 1, thr);
            (polygon_area(&pa), polygon_area(&pb), polygon_area(&pab))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2))
}

pub fn evaluate_metric(sim: &FieldState, target: &FieldState, metric: &Metric) -> Result<f64> {
    if sim.n_species() != target.n_species() {
        return Err(Error::InvalidInput(format!(
            "simulated field has {} species, target has {}",
            sim.n_species(),
            target.n_species()
        )));
    }
    let mesh = sim.mesh();
    let tv = on_mesh(target, mesh)?;
    let nv = mesh.vertex_count();
    let ns = sim.n_species();
    let species = |c: &[f64], s: usize| c[s * nv..(s + 1) * nv].to_vec();
    let d = match *metric {
        Metric::Sse { scale } => {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::InvalidInput(format!("sse scale must be positive, got {scale}")));
            }
            let m = assemble(mesh)?.mass;
            (0..ns)
                .map(|s| {
                    let diff: Vec<f64> = sim.species(s).iter().zip(species(&tv, s)).map(|(a, b)| a - b).collect();
                    m.bilinear(&diff, &diff).max(0.0)
                })
                .sum::<f64>()
                / (scale * scale)
        }
        Metric::NormalizedCorrelation => {
            (0..ns).map(|s| pearson_distance(sim.species(s), &species(&tv, s))).sum::<f64>() / ns as f64
        }
        Metric::ThresholdOverlap { threshold } => {
            (0..ns)
                .map(|s| {
                    let (a, b, i) = superlevel_areas(mesh, sim.species(s), &species(&tv, s), threshold);
                    let u = a + b - i;
                    if u <= 0.0 {
                        0.0
                    } else {
                        (1.0 - i / u).clamp(0.0, 1.0)
                    }
                })
                .sum::<f64>()
                / ns as f64
        }
    };
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBound {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub scale: Scale,
}

impl ParamBound {
    pub fn new(name: &str, lo: f64, hi: f64, scale: Scale) -> Result<ParamBound> {
        let b = ParamBound {
            name: name.to_string(),
            lo,
            hi,
            scale,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidInput(format!(
                "bounds of '{}' must satisfy lo < hi, got [{}, {}]",
                self.name, self.lo, self.hi
            )));
        }
        if self.scale == Scale::Log && self.lo <= 0.0 {
            return Err(Error::InvalidInput(format!("log-scale bounds of '{}' must be positive", self.name)));
        }
        Ok(())
    }

    /// Value at unit coordinate `u` in `[0, 1]`.
    pub fn at(&self, u: f64) -> f64 {
        match self.scale {
            Scale::Linear => self.lo + u * (self.hi - self.lo),
            Scale::Log => (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp(),
        }
    }

    /// Unit coordinate of `x`.
    pub fn unit(&self, x: f64) -> f64 {
        match self.scale {
            Scale::Linear => (x - self.lo) / (self.hi - self.lo),
            Scale::Log => (x.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln()),
        }
    }

    /// `n` evenly spaced values (in the bound's scale), endpoints included.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.at(0.5)],
            _ => (0..n).map(|i| self.at(i as f64 / (n - 1) as f64)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenOptions {
    /// Largest number of objective evaluations.
    pub budget: usize,
    /// Seed of the Latin-hypercube fallback.
    pub seed: u64,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        ScreenOptions { budget: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub params: Vec<f64>,
    /// `+inf` for failed evaluations.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub bounds: Vec<ParamBound>,
    pub samples: Vec<Sample>,
    pub best: usize,
    /// Whether the samples form a full factorial grid.
    pub factorial: bool,
}

impl ScreenResult {
    pub fn best_sample(&self) -> &Sample {
        &self.samples[self.best]
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for b in &self.bounds {
            s.push_str(&b.name);
            s.push(',');
        }
        s.push_str("objective\n");
        for smp in &self.samples {
            for p in &smp.params {
                let _ = write!(s, "{p:?},");
            }
            let _ = writeln!(s, "{:?}", smp.value);
        }
        s
    }
}

fn latin_hypercube(bounds: &[ParamBound], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = bounds
        .iter()
        .map(|b| {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(&mut rng);
            strata
                .into_iter()
                .map(|k| b.at((k as f64 + rng.gen::<f64>()) / n as f64))
                .collect()
        })
        .collect();
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

fn full_factorial(bounds: &[ParamBound], n: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds.iter().map(|b| b.grid(n)).collect();
    let total = n.pow(bounds.len() as u32);
    (0..total)
        .map(|mut k| {
            let mut p = vec![0.0; bounds.len()];
            for d in (0..bounds.len()).rev() {
                p[d] = axes[d][k % n];
                k /= n;
            }
            p
        })
        .collect()
}

fn guarded<F: Fn(&[f64]) -> Result<f64>>(f: &F, p: &[f64]) -> f64 {
    match f(p) {
        Ok(v) if v.is_finite() => v,
        Ok(_) => f64::INFINITY,
        Err(e) => {
            log::debug!("objective failed at {p:?}: {e}");
            f64::INFINITY
        }
    }
}

/// Full factorial screen with `n_per_dim` values per parameter, or a
/// seeded Latin hypercube of `budget` samples when the grid is larger.
/// Evaluations run in parallel; failures are kept with value `+inf`.
pub fn grid_screen<F>(objective: F, bounds: &[ParamBound], n_per_dim: usize, opts: ScreenOptions) -> Result<ScreenResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if bounds.is_empty() || n_per_dim == 0 || opts.budget == 0 {
        return Err(Error::InvalidInput("screen needs bounds, n_per_dim >= 1 and budget >= 1".into()));
    }
    for b in bounds {
        b.validate()?;
    }
    let grid = (n_per_dim as f64).powi(bounds.len() as i32);
    let factorial = grid <= opts.budget as f64;
    let points = if factorial {
        full_factorial(bounds, n_per_dim)
    } else {
        latin_hypercube(bounds, opts.budget, opts.seed)
    };
    let samples: Vec<Sample> = points
        .into_par_iter()
        .map(|params| {
            let value = guarded(&objective, &params);
            Sample { params, value }
        })
        .collect();
    let best = samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .map(|x| x.0)
        .unwrap();
    if !samples[best].value.is_finite() {
        return Err(Error::Optimization(format!("all {} screen samples failed", samples.len())));
    }
    Ok(ScreenResult {
        bounds: bounds.to_vec(),
        samples,
        best,
        factorial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineOptions {
    pub max_evals: usize,
    /// Stop once the simplex diameter in unit coordinates drops below this.
    pub tol: f64,
    /// Initial simplex edge in unit coordinates.
    pub initial_step: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            max_evals: 2000,
            tol: 1e-8,
            initial_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub params: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
    /// Best value after each iteration.
    pub trace: Vec<f64>,
}

/// Nelder–Mead descent in the unit coordinates of `bounds`, with trial
/// points clipped to the box.
pub fn local_refine<F>(objective: F, start: &[f64], bounds: &[ParamBound], opts: RefineOptions) -> Result<RefineResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = bounds.len();
    if start.len() != d || d == 0 {
        return Err(Error::InvalidInput(format!("start has {} values for {d} bounds", start.len())));
    }
    for (b, &x) in bounds.iter().zip(start) {
        b.validate()?;
        if !(x >= b.lo && x <= b.hi) {
            return Err(Error::InvalidInput(format!("start {} = {x} outside [{}, {}]", b.name, b.lo, b.hi)));
        }
    }
    let to_params = |u: &[f64]| -> Vec<f64> { u.iter().zip(bounds).map(|(&u, b)| b.at(u.clamp(0.0, 1.0))).collect() };
    let evals = std::cell::Cell::new(0usize);
    let f = |u: &[f64]| {
        evals.set(evals.get() + 1);
        guarded(&objective, &to_params(u))
    };
    let u0: Vec<f64> = start.iter().zip(bounds).map(|(&x, b)| b.unit(x).clamp(0.0, 1.0)).collect();
    let f0 = f(&u0);
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(u0.clone(), f0)];
    for i in 0..d {
        let mut u = u0.clone();
        u[i] = if u[i] + opts.initial_step <= 1.0 { u[i] + opts.initial_step } else { u[i] - opts.initial_step };
        let v = f(&u);
        simplex.push((u, v));
    }
    let mut trace = vec![f0];
    let mut converged = false;
    let clip = |u: Vec<f64>| -> Vec<f64> { u.into_iter().map(|x| x.clamp(0.0, 1.0)).collect() };
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };
    loop {
        // stable sort keeps the incumbent first among ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push(simplex[0].1);
        let diam = simplex[1..]
            .iter()
            .map(|(u, _)| u.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diam < opts.tol {
            converged = true;
            break;
        }
        if evals.get() >= opts.max_evals {
            break;
        }
        let worst = simplex[d].clone();
        let centroid: Vec<f64> = (0..d).map(|k| simplex[..d].iter().map(|s| s.0[k]).sum::<f64>() / d as f64).collect();
        let xr = clip(combine(&centroid, &worst.0, -1.0));
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = clip(combine(&centroid, &worst.0, -2.0));
            let fe = f(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = clip(combine(&centroid, &xr, 0.5));
            let v = f(&x);
            (x, v)
        } else {
            let x = combine(&centroid, &worst.0, 0.5);
            let v = f(&x);
            (x, v)
        };
        if fc < worst.1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for s in simplex.iter_mut().skip(1) {
            s.0 = combine(&best, &s.0, 0.5);
            s.1 = f(&s.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (u, value) = simplex.swap_remove(0);
    let (params, value) = if value <= f0 { (to_params(&u), value) } else { (start.to_vec(), f0) };
    if !value.is_finite() {
        return Err(Error::Optimization("objective is not finite anywhere the simplex visited".into()));
    }
    if !converged {
        log::warn!("simplex stopped after {} evaluations without converging", evals.get());
    }
    Ok(RefineResult {
        params,
        value,
        converged,
        evaluations: evals.get(),
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub tag: String,
    /// Best objective value (sse-type).
    pub objective: f64,
    /// Number of fitted parameters.
    pub k: usize,
    /// Effective data size.
    pub n: usize,
    /// Name of the metric behind `objective`.
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRank {
    pub tag: String,
    pub score: f64,
    pub delta: f64,
    pub relative_likelihood: f64,
}

/// Ranks fits by `n ln(objective / n) + penalty` (penalty `2k` for AIC,
/// `k ln n` for BIC), best first.
pub fn compare_models(fits: &[ModelFit], criterion: Criterion) -> Result<Vec<ModelRank>> {
    let Some(first) = fits.first() else {
        return Err(Error::InvalidInput("no models to compare".into()));
    };
    if let Some(f) = fits.iter().find(|f| f.metric != first.metric) {
        return Err(Error::InvalidInput(format!(
            "models '{}' ({}) and '{}' ({}) use different metrics",
            first.tag, first.metric, f.tag, f.metric
        )));
    }
    let mut ranks = fits
        .iter()
        .map(|f| {
            if !(f.objective > 0.0 && f.objective.is_finite()) || f.n == 0 {
                return Err(Error::InvalidInput(format!(
                    "model '{}' needs a positive finite objective and n > 0",
                    f.tag
                )));
            }
            let n = f.n as f64;
            let penalty = match criterion {
                Criterion::Aic => 2.0 * f.k as f64,
                Criterion::Bic => f.k as f64 * n.ln(),
            };
            Ok(ModelRank {
                tag: f.tag.clone(),
                score: n * (f.objective / n).ln() + penalty,
                delta: 0.0,
                relative_likelihood: 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranks.sort_by(|a, b| a.score.total_cmp(&b.score));
    let best = ranks[0].score;
    for r in &mut ranks {
        r.delta = r.score - best;
        r.relative_likelihood = (-0.5 * r.delta).exp();
    }
    Ok(ranks)
}

/// Target field compared with the simulated end state.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub target: FieldState,
    pub metric: Metric,
    pub weight: f64,
}

/// Weighted sum of metric distances between simulation end states and
/// targets, as a function of named model parameters.
#[derive(Debug, Clone)]
pub struct Objective {
    pub model: ReactionModel,
    pub parameters: Vec<String>,
    pub bc: BoundaryConditions,
    pub mesh: Arc<TriMesh>,
    pub initial: InitialCondition,
    pub seed: u64,
    pub options: SimulationOptions,
    pub datasets: Vec<Dataset>,
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::InvalidInput("objective has no datasets".into()));
        }
        if let Some(d) = self.datasets.iter().find(|d| !(d.weight > 0.0 && d.weight.is_finite())) {
            return Err(Error::InvalidInput(format!("dataset weight must be positive, got {}", d.weight)));
        }
        for p in &self.parameters {
            if self.model.param(p).is_none() {
                return Err(Error::InvalidInput(format!(
                    "unknown parameter '{p}'; known: {:?}",
                    self.model.parameter_names()
                )));
            }
        }
        Ok(())
    }

    pub fn model_at(&self, theta: &[f64]) -> Result<ReactionModel> {
        if theta.len() != self.parameters.len() {
            return Err(Error::InvalidInput(format!(
                "{} values for {} parameters",
                theta.len(),
                self.parameters.len()
            )));
        }
        self.parameters
            .iter()
            .zip(theta)
            .try_fold(self.model.clone(), |m, (p, &v)| m.with_param(p, v))
    }

    pub fn simulate(&self, theta: &[f64]) -> Result<FieldState> {
        let model = self.model_at(theta)?;
        let s0 = self.initial.build(self.mesh.clone(), &model, self.seed, 0.0)?;
        Ok(simulate(&model, &self.bc, s0, &self.options)?.last().clone())
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<f64> {
        let end = self.simulate(theta)?;
        self.datasets
            .iter()
            .map(|d| Ok(d.weight * evaluate_metric(&end, &d.target, &d.metric)?))
            .sum()
    }

    /// Vertices compared across all datasets.
    pub fn effective_size(&self) -> usize {
        self.datasets.iter().map(|d| d.target.mesh().vertex_count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Arc<TriMesh> {
        Arc::new(TriMesh::rectangle(0.0, 0.0, 1.0, 1.0, 8, 8).unwrap())
    }

    fn field(m: &Arc<TriMesh>, f: impl Fn(Point2) -> f64) -> FieldState {
        FieldState::new(m.clone(), 1, m.vertices().iter().map(|&p| f(p)).collect(), 0.0).unwrap()
    }

    #[test]
    fn identical_fields_are_at_distance_zero() {
        let m = square();
        let a = field(&m, |p| p.x * p.y + 0.3);
        for metric in [Metric::sse(), Metric::NormalizedCorrelation, Metric::ThresholdOverlap { threshold: 0.5 }] {
            assert_eq!(evaluate_metric(&a, &a, &metric).unwrap(), 0.0);
        }
    }

    #[test]
    fn correlation_ignores_affine_rescaling() {
        let m = square();
        let a = field(&m, |p| (3.0 * p.x).sin() + p.y);
        let b = field(&m, |p| 2.0 * ((3.0 * p.x).sin() + p.y) + 3.0);
        assert!(evaluate_metric(&a, &b, &Metric::NormalizedCorrelation).unwrap() < 1e-12);
        assert!(evaluate_metric(&a, &b, &Metric::sse()).unwrap() > 0.0);
    }

    #[test]
    fn sse_of_constant_offset_is_area_times_square() {
        let m = square();
        let a = field(&m, |p| p.x);
        let b = field(&m, |p| p.x + 0.5);
        let d = evaluate_metric(&a, &b, &Metric::Sse { scale: 2.0 }).unwrap();
        assert!((d - 0.25 / 4.0).abs() < 1e-14);
    }

    #[test]
    fn half_planes_overlap_with_one_third_jaccard() {
        let m = square();
        let a = field(&m, |p| p.x);
        let b = field(&m, |p| p.y);
        let d = evaluate_metric(&a, &b, &Metric::ThresholdOverlap { threshold: 0.5 }).unwrap();
        assert!((d - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn species_mismatch_is_an_error() {
        let m = square();
        let a = FieldState::uniform(m.clone(), &[1.0], 0.0).unwrap();
        let b = FieldState::uniform(m, &[1.0, 2.0], 0.0).unwrap();
        assert!(evaluate_metric(&a, &b, &Metric::sse()).is_err());
    }

    #[test]
    fn target_on_another_mesh_is_interpolated() {
        let fine = Arc::new(TriMesh::rectangle(0.0, 0.0, 1.0, 1.0, 16, 16).unwrap());
        let a = field(&square(), |p| 2.0 * p.x - p.y);
        let b = field(&fine, |p| 2.0 * p.x - p.y);
        assert!(evaluate_metric(&a, &b, &Metric::sse()).unwrap() < 1e-28);
    }

    #[test]
    fn screen_finds_quadratic_minimum() {
        let b = [ParamBound::new("x", 0.0, 2.0, Scale::Linear).unwrap()];
        let r = grid_screen(|p: &[f64]| Ok((p[0] - 1.0).powi(2)), &b, 11, ScreenOptions::default()).unwrap();
        assert_eq!(r.samples.len(), 11);
        assert!((r.best_sample().params[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_bounds_give_decades() {
        let b = ParamBound::new("k", 1e-3, 1e1, Scale::Log).unwrap();
        for (x, e) in b.grid(5).iter().zip([1e-3, 1e-2, 1e-1, 1e0, 1e1]) {
            assert!((x / e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_grid_falls_back_to_latin_hypercube() {
        let b: Vec<ParamBound> = (0..3).map(|i| ParamBound::new(&format!("p{i}"), 0.0, 1.0, Scale::Linear).unwrap()).collect();
        let opts = ScreenOptions { budget: 20, seed: 9 };
        let f = |p: &[f64]| Ok(p.iter().sum::<f64>());
        let r = grid_screen(f, &b, 10, opts).unwrap();
        assert!(!r.factorial);
        assert_eq!(r.samples.len(), 20);
        for d in 0..3 {
            let mut strata: Vec<usize> = r.samples.iter().map(|s| (s.params[d] * 20.0) as usize).collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..20).collect::<Vec<_>>());
        }
        assert_eq!(r, grid_screen(f, &b, 10, opts).unwrap());
    }

    #[test]
    fn failures_are_kept_as_infinite() {
        let b = [ParamBound::new("x", 0.0, 1.0, Scale::Linear).unwrap()];
        let r = grid_screen(
            |p: &[f64]| if p[0] < 0.5 { Err(Error::Simulation("boom".into())) } else { Ok(p[0]) },
            &b,
            5,
            ScreenOptions::default(),
        )
        .unwrap();
        assert_eq!(r.samples.len(), 5);
        assert!(r.samples[0].value.is_infinite());
        assert!(grid_screen(|_: &[f64]| Err(Error::Simulation("x".into())), &b, 3, ScreenOptions::default()).is_err());
    }

    fn box2() -> Vec<ParamBound> {
        vec![
            ParamBound::new("x", -5.0, 5.0, Scale::Linear).unwrap(),
            ParamBound::new("y", -5.0, 5.0, Scale::Linear).unwrap(),
        ]
    }

    #[test]
    fn simplex_on_quadratic_bowl() {
        let f = |p: &[f64]| Ok((p[0] - 1.0).powi(2) + 3.0 * (p[1] - 1.0).powi(2));
        let r = local_refine(f, &[2.0, 2.0], &box2(), RefineOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.params[0] - 1.0).abs() < 1e-4 && (r.params[1] - 1.0).abs() < 1e-4);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn simplex_on_rosenbrock() {
        let f = |p: &[f64]| Ok(100.0 * (p[1] - p[0] * p[0]).powi(2) + (1.0 - p[0]).powi(2));
        let r = local_refine(f, &[-1.2, 1.0], &box2(), RefineOptions { max_evals: 2000, ..Default::default() }).unwrap();
        assert!(r.value < 1e-3, "{}", r.value);
        assert!(r.evaluations <= 2000 + 3);
    }

    #[test]
    fn simplex_at_optimum_stays() {
        let f = |p: &[f64]| Ok(p[0].powi(2) + p[1].powi(2));
        let r = local_refine(f, &[0.0, 0.0], &box2(), RefineOptions::default()).unwrap();
        assert_eq!(r.params, vec![0.0, 0.0]);
        assert_eq!(r.value, 0.0);
    }

    fn fit(tag: &str, objective: f64, k: usize, n: usize) -> ModelFit {
        ModelFit {
            tag: tag.into(),
            objective,
            k,
            n,
            metric: "sse".into(),
        }
    }

    #[test]
    fn aic_penalizes_parameters() {
        let r = compare_models(&[fit("big", 2.0, 4, 100), fit("small", 2.0, 2, 100)], Criterion::Aic).unwrap();
        assert_eq!(r[0].tag, "small");
        assert!((r[1].delta - 4.0).abs() < 1e-12);
        assert!((r[1].relative_likelihood - (-2.0f64).exp()).abs() < 1e-15);
        let single = compare_models(&[fit("only", 1.0, 3, 10)], Criterion::Aic).unwrap();
        assert_eq!(single[0].delta, 0.0);
    }

    #[test]
    fn aic_tie_from_closed_form() {
        let n = 50usize;
        let o1 = 3.7;
        // n ln(o2/n) + 2*5 = n ln(o1/n) + 2*2
        let o2 = o1 * (-2.0 * 3.0 / n as f64).exp();
        let r = compare_models(&[fit("a", o1, 2, n), fit("b", o2, 5, n)], Criterion::Aic).unwrap();
        assert!(r[1].delta.abs() < 1e-9);
    }

    #[test]
    fn mixed_metrics_are_rejected() {
        let mut b = fit("b", 1.0, 1, 10);
        b.metric = "normalized_correlation".into();
        assert!(compare_models(&[fit("a", 1.0, 1, 10), b], Criterion::Aic).is_err());
    }
}
