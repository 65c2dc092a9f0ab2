//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so the lines are always printed.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use morphokit::fem::{
    simulate, solve_laplace, BoundaryConditions, FieldState, GrowthSeries, InitialCondition,
    ReactionModel, Schedule, SimulationOptions, StaticStepper,
};
use morphokit::infer::{grid_screen, local_refine, Dataset, Metric, Objective, ParamBound, RefineOptions, Scale, ScreenOptions};
use morphokit::mapping::{run_mapping_pipeline, DisplacementField, LandmarkSet, MappingConfig, MappingMethod, ThinPlateSpline};
use morphokit::mesh::{coarsen, quality_report, refine, triangulate, CoarsenOptions};
use morphokit::{Curve, Point2, TriMesh};

type Check = Result<String, Box<dyn std::error::Error>>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+).into());
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn main() {
    let criteria = [
        Criterion { name: "laplace convergence on the annulus", budget: Duration::from_secs(10), run: laplace_convergence },
        Criterion { name: "mass conservation without reaction", budget: Duration::from_secs(5), run: mass_conservation },
        Criterion { name: "dilution under isotropic area doubling", budget: Duration::from_secs(30), run: growth_dilution },
        Criterion { name: "turing pattern against the dispersion relation", budget: Duration::from_secs(120), run: turing_oracle },
        Criterion { name: "displacement-field suite", budget: Duration::from_secs(60), run: mapping_suite },
        Criterion { name: "similarity prescale on offset circles", budget: Duration::from_secs(5), run: prescale_offset_circles },
        Criterion { name: "reverse normal mapping on kidney in circle", budget: Duration::from_secs(5), run: kidney_reverse_normal },
        Criterion { name: "thin-plate spline landmarks", budget: Duration::from_secs(1), run: tps_landmarks },
        Criterion { name: "mesh quality, coarsen and refine", budget: Duration::from_secs(10), run: mesh_quality },
        Criterion { name: "closed-loop parameter recovery", budget: Duration::from_secs(600), run: closed_loop_inference },
        Criterion { name: "deterministic pipeline rerun", budget: Duration::from_secs(300), run: determinism },
    ];
    let mut failed = 0;
    for (k, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget).into()),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {} ({:.2} s): {detail}", k + 1, c.name, took.as_secs_f64()),
            Err(e) => {
                failed += 1;
                println!("criterion {:>2} FAIL {} ({:.2} s): {e}", k + 1, c.name, took.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn l2_error(s: &FieldState, exact: impl Fn(Point2) -> f64) -> f64 {
    let m = s.mesh();
    let c = s.species(0);
    (0..m.triangle_count())
        .map(|t| {
            let tri = m.triangles()[t];
            let p = m.triangle_points(t);
            let sum: f64 = [(0, 1), (1, 2), (2, 0)]
                .iter()
                .map(|&(i, j)| {
                    let q = p[i].lerp(p[j], 0.5);
                    (0.5 * (c[tri[i]] + c[tri[j]]) - exact(q)).powi(2)
                })
                .sum();
            sum * m.triangle_area(t) / 3.0
        })
        .sum::<f64>()
        .sqrt()
}

/// Moves boundary vertices onto the exact circles.
fn snap_annulus(mesh: &TriMesh) -> morphokit::Result<TriMesh> {
    let v = (0..mesh.vertex_count())
        .map(|i| {
            let p = mesh.vertices()[i];
            match mesh.vertex_boundary_tag(i) {
                Some("inner") => p.normalized(),
                Some("outer") => p.normalized() * 2.0,
                _ => p,
            }
        })
        .collect();
    mesh.with_vertices(v)
}

fn laplace_convergence() -> Check {
    let h = 0.25;
    let outer = Curve::circle(Point2::ORIGIN, 2.0, (4.0 * PI / h).ceil() as usize)?.with_label("outer");
    let inner = Curve::circle(Point2::ORIGIN, 1.0, (2.0 * PI / h).ceil() as usize)?.reversed().with_label("inner");
    let bc = BoundaryConditions::zero_flux().dirichlet("inner", 1.0).dirichlet("outer", 0.0);
    let exact = |p: Point2| (2.0 / p.norm()).ln() / 2f64.ln();
    let mut mesh = triangulate(&outer, &[inner], h, &[])?;
    let mut errors = Vec::new();
    for level in 0..4 {
        if level > 0 {
            mesh = snap_annulus(&refine(&mesh))?;
        }
        errors.push(l2_error(&solve_laplace(mesh.clone(), &bc)?, exact));
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    ensure!(ratios.iter().all(|r| (3.0..=5.0).contains(r)), "ratios {ratios:.3?} outside [3, 5]; errors {}", sci(&errors));
    Ok(format!("L2 errors {}, ratios {ratios:.3?}", sci(&errors)))
}

fn mass_conservation() -> Check {
    let m = Arc::new(TriMesh::rectangle(0.0, 0.0, 1.0, 1.0, 44, 44)?);
    let model = ReactionModel::diffusion_only(vec![1.0]);
    let s0 = FieldState::noisy(m.clone(), &[1.0], 0.5, 11, 0.0)?;
    let stepper = StaticStepper::new(m.clone(), &model, &BoundaryConditions::zero_flux(), 1e-3)?;
    let mut s = s0.clone();
    for _ in 0..100 {
        s = stepper.step(&s)?;
    }
    let drift = ((s.integral(0) - s0.integral(0)) / s0.integral(0)).abs();
    ensure!(drift < 1e-10, "relative drift {drift:.3e}");
    ensure!(s.variance(0) < s0.variance(0), "diffusion did not smooth the field");
    Ok(format!("{} vertices, relative drift {drift:.2e}", m.vertex_count()))
}

fn growth_dilution() -> Check {
    let h = 0.05;
    let c = Curve::circle(Point2::ORIGIN, 1.0, (2.0 * PI / h).ceil() as usize)?.with_label("rim");
    let factor = 2f64.sqrt() - 1.0;
    let stage = DisplacementField::new(
        c.points().to_vec(),
        c.points().iter().map(|&p| p * factor).collect(),
        true,
        MappingMethod::Normal,
    )?
    .with_time(0.0, 1.0)?;
    let mesh = Arc::new(triangulate(&c, &[], h, &[])?);
    let model = ReactionModel::diffusion_only(vec![0.0]);
    let s0 = FieldState::uniform(mesh, &[1.0], 0.0)?;
    let opts = SimulationOptions::new(Schedule { t_end: 1.0, dt: 0.05, output_stride: 20 }).with_growth(GrowthSeries::new(vec![stage])?);
    let end = simulate(&model, &BoundaryConditions::zero_flux(), s0.clone(), &opts)?.last().clone();
    let area_ratio = end.mesh().area() / s0.mesh().area();
    let mass_err = ((end.integral(0) - s0.integral(0)) / s0.integral(0)).abs();
    let mean_err = (end.mean(0) - 0.5).abs();
    ensure!((area_ratio - 2.0).abs() < 1e-2, "area ratio {area_ratio:.4}");
    ensure!(mass_err < 1e-3, "relative mass error {mass_err:.3e}");
    ensure!(mean_err < 1e-3, "mean {:.6} not one half", end.mean(0));
    Ok(format!(
        "area x{area_ratio:.4}, mass error {mass_err:.2e}, mean {:.6}",
        end.mean(0)
    ))
}

/// Largest real part of the eigenvalues of `J - k² D` for Schnakenberg
/// linearised at its homogeneous steady state.
fn dispersion(a: f64, b: f64, du: f64, dv: f64, k2: f64) -> f64 {
    let u = a + b;
    let v = b / (u * u);
    let (fu, fv, gu, gv) = (-1.0 + 2.0 * u * v, u * u, -2.0 * u * v, -u * u);
    let (p, s) = (fu - du * k2, gv - dv * k2);
    let tr = p + s;
    let det = p * s - fv * gu;
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        0.5 * (tr + disc.sqrt())
    } else {
        0.5 * tr
    }
}

/// Neumann cosine mode of the unit square carrying the most power.
fn dominant_mode(s: &FieldState, species: usize, max_index: usize) -> (usize, usize) {
    let m = s.mesh();
    let mut weight = vec![0.0; m.vertex_count()];
    for t in 0..m.triangle_count() {
        for &v in &m.triangles()[t] {
            weight[v] += m.triangle_area(t) / 3.0;
        }
    }
    let c = s.species(species);
    let mean = s.mean(species);
    let mut best = (0, 0, 0.0);
    for i in 0..=max_index {
        for j in 0..=max_index {
            if i + j == 0 {
                continue;
            }
            let phi = |p: Point2| (i as f64 * PI * p.x).cos() * (j as f64 * PI * p.y).cos();
            let (mut dot, mut norm) = (0.0, 0.0);
            for (v, &p) in m.vertices().iter().enumerate() {
                dot += weight[v] * (c[v] - mean) * phi(p);
                norm += weight[v] * phi(p) * phi(p);
            }
            let power = dot * dot / norm;
            if power > best.2 {
                best = (i, j, power);
            }
        }
    }
    (best.0, best.1)
}

fn schnakenberg_run(du: f64, dv: f64, t_end: f64) -> morphokit::Result<FieldState> {
    let (a, b) = (0.1, 0.9);
    let mesh = Arc::new(TriMesh::rectangle(0.0, 0.0, 1.0, 1.0, 48, 48)?);
    let model = ReactionModel::schnakenberg(a, b, du, dv);
    let s0 = InitialCondition { values: None, noise: 0.01 }.build(mesh, &model, 3, 0.0)?;
    let opts = SimulationOptions::new(Schedule { t_end, dt: 0.1, output_stride: usize::MAX });
    Ok(simulate(&model, &BoundaryConditions::zero_flux(), s0, &opts)?.last().clone())
}

fn turing_oracle() -> Check {
    let (a, b, du) = (0.1, 0.9, 1e-3);
    let pattern = schnakenberg_run(du, 40.0 * du, 150.0)?;
    let (i, j) = dominant_mode(&pattern, 0, 16);
    let k2 = PI * PI * (i * i + j * j) as f64;
    let rate = dispersion(a, b, du, 40.0 * du, k2);
    let band: Vec<f64> = (1..4000)
        .map(|n| n as f64 * 0.25)
        .filter(|&q| dispersion(a, b, du, 40.0 * du, q) > 0.0)
        .collect();
    let (lo, hi) = (band.first().copied().unwrap_or(f64::NAN), band.last().copied().unwrap_or(f64::NAN));
    let rel_var = pattern.variance(0) / pattern.mean(0);
    ensure!(rate > 0.0, "dominant mode ({i}, {j}) k^2={k2:.1} outside unstable band [{lo:.1}, {hi:.1}]");
    ensure!(rel_var > 1e-3, "no pattern: variance/mean {rel_var:.2e}");

    let flat = schnakenberg_run(du, 5.0 * du, 150.0)?;
    let flat_var = (0..2).map(|s| flat.variance(s) / flat.mean(s)).fold(0.0, f64::max);
    ensure!(flat_var < 1e-6, "sub-threshold variance/mean {flat_var:.2e}");
    Ok(format!(
        "mode ({i}, {j}) k^2={k2:.1} in band [{lo:.1}, {hi:.1}] growth {rate:.3}; sub-threshold variance/mean {flat_var:.1e}"
    ))
}

fn star(center: Point2, base: f64, harmonics: &[(f64, f64)], n: usize, label: &str) -> morphokit::Result<Curve> {
    Curve::from_polar(n, label, |t| {
        let r = base * (1.0 + harmonics.iter().enumerate().map(|(k, &(amp, ph))| amp * ((k + 2) as f64 * t + ph).cos()).sum::<f64>());
        center + Point2::new(r * t.cos(), r * t.sin())
    })
}

fn mapping_suite() -> Check {
    // concentric circles
    let c1 = Curve::circle(Point2::ORIGIN, 1.0, 256)?;
    let c2 = Curve::circle(Point2::ORIGIN, 2.0, 256)?;
    let cfg = |method| MappingConfig {
        method: Some(method),
        n_points: 256,
        ..MappingConfig::default()
    };
    let f = run_mapping_pipeline(&c1, &c2, &cfg(MappingMethod::Normal))?.field;
    let mut worst_len: f64 = 0.0;
    let mut worst_angle: f64 = 0.0;
    for (s, v) in f.sources().iter().zip(f.vectors()) {
        worst_len = worst_len.max((v.norm() - 1.0).abs());
        worst_angle = worst_angle.max((s.cross(*v) / (s.norm() * v.norm())).abs());
    }
    ensure!(f.len() == 256 && f.missing().is_empty(), "{} vectors, {} missing", f.len(), f.missing().len());
    ensure!(worst_len < 1e-3, "|len - 1| up to {worst_len:.2e}");
    ensure!(worst_angle < 1e-6, "vectors deviate from radial by sin {worst_angle:.2e}");

    // random star-shaped annuli
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut crossings = 0;
    for k in 0..100 {
        let mut harm = |amp: f64| -> Vec<(f64, f64)> { (0..3).map(|_| (rng.gen_range(0.0..amp), rng.gen_range(0.0..2.0 * PI))).collect() };
        let (hi, ho) = (harm(0.08), harm(0.08));
        let inner = star(Point2::ORIGIN, 1.0, &hi, 96, "inner")?;
        let outer = star(Point2::ORIGIN, 2.0, &ho, 96, "outer")?;
        let q = run_mapping_pipeline(&inner, &outer, &MappingConfig { n_points: 64, ..cfg(MappingMethod::Diffusion) })?.quality;
        if q.crossing_count > 0 {
            crossings += 1;
            eprintln!("annulus {k}: {} crossings", q.crossing_count);
        }
    }
    ensure!(crossings == 0, "{crossings} of 100 diffusion mappings have crossing vectors");

    // random open curves
    let mut bad = 0;
    for _ in 0..100 {
        let mut wiggle = || -> Vec<(f64, f64, f64)> {
            (1..4).map(|m| (rng.gen_range(-0.15..0.15), m as f64, rng.gen_range(0.0..2.0 * PI))).collect()
        };
        let (w1, w2) = (wiggle(), wiggle());
        let len2 = rng.gen_range(0.5..2.0);
        let shift = rng.gen_range(0.3..1.5);
        let n1 = rng.gen_range(20..80);
        let n2 = rng.gen_range(20..80);
        let graph = |w: &[(f64, f64, f64)], n: usize, len: f64, y0: f64| {
            let pts = (0..n)
                .map(|i| {
                    let x = len * i as f64 / (n - 1) as f64;
                    let y = y0 + w.iter().map(|&(a, m, ph)| a * (m * PI * x / len + ph).sin()).sum::<f64>();
                    Point2::new(x, y)
                })
                .collect();
            Curve::new(pts, false, "open")
        };
        let a = graph(&w1, n1, 1.0, 0.0)?;
        let b = graph(&w2, n2, len2, shift)?;
        let out = run_mapping_pipeline(&a, &b, &MappingConfig { n_points: 50, ..cfg(MappingMethod::Uniform) })?;
        let s: Vec<f64> = out.field.targets().iter().map(|&p| b.project(p).arclength).collect();
        let increasing = s.windows(2).all(|w| w[1] > w[0]);
        let decreasing = s.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            bad += 1;
        }
    }
    ensure!(bad == 0, "{bad} of 100 uniform mappings are not index-monotone");
    Ok(format!(
        "normal |len-1| <= {worst_len:.1e}; 100 diffusion annuli without crossings; 100 monotone uniform maps"
    ))
}

fn unmapped(c1: &Curve, c2: &Curve, prescale: bool) -> morphokit::Result<f64> {
    let cfg = MappingConfig {
        method: Some(MappingMethod::MinimalDistance),
        n_points: 200,
        prescale,
        ..MappingConfig::default()
    };
    Ok(run_mapping_pipeline(c1, c2, &cfg)?.quality.unmapped_fraction)
}

fn prescale_offset_circles() -> Check {
    let dir = fixtures().join("offset_circles");
    let (c1, c2) = (Curve::read_csv(&dir.join("c1.csv"))?, Curve::read_csv(&dir.join("c2.csv"))?);
    let (raw, scaled) = (unmapped(&c1, &c2, false)?, unmapped(&c1, &c2, true)?);
    ensure!(scaled < raw, "fixture: prescaled {scaled:.4} not below raw {raw:.4}");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let r2 = rng.gen_range(1.1..3.0);
        let off = Point2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let a = Curve::circle(Point2::ORIGIN, 1.0, 120)?;
        let b = Curve::circle(off, r2, 150)?;
        let (u, v) = (unmapped(&a, &b, false)?, unmapped(&a, &b, true)?);
        ensure!(v <= u + 1e-12, "r2={r2:.2} offset={off:?}: prescaled {v:.4} above raw {u:.4}");
    }
    Ok(format!("fixture unmapped fraction {raw:.3} -> {scaled:.3}; 20 random pairs not worse"))
}

fn kidney_reverse_normal() -> Check {
    let dir = fixtures().join("kidney_in_circle");
    let (k, c) = (Curve::read_csv(&dir.join("kidney.csv"))?, Curve::read_csv(&dir.join("circle.csv"))?);
    let crossings = |method| -> morphokit::Result<usize> {
        let cfg = MappingConfig {
            method: Some(method),
            n_points: 200,
            ..MappingConfig::default()
        };
        Ok(run_mapping_pipeline(&k, &c, &cfg)?.quality.crossing_count)
    };
    let (fwd, rev) = (crossings(MappingMethod::Normal)?, crossings(MappingMethod::ReverseNormal)?);
    ensure!(fwd > 0, "forward normal mapping has no crossings");
    ensure!(rev == 0, "reverse normal mapping has {rev} crossings");
    Ok(format!("crossings forward {fwd}, reverse {rev}"))
}

fn tps_landmarks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pt = |s: f64| Point2::new(rng.gen_range(-s..s), rng.gen_range(-s..s));
    let pairs: Vec<(Point2, Point2)> = (0..15)
        .map(|_| {
            let p = pt(5.0);
            (p, p + pt(0.7))
        })
        .collect();
    let tps = ThinPlateSpline::fit(&LandmarkSet::new(pairs.clone())?, 0.0)?;
    let residual = pairs.iter().map(|&(s, t)| tps.eval(s).dist(t)).fold(0.0, f64::max);
    ensure!(residual < 1e-9, "landmark residual {residual:.2e}");

    let (m, off) = ([[1.3, -0.4], [0.25, 0.8]], Point2::new(-2.0, 3.5));
    let affine = |p: Point2| Point2::new(m[0][0] * p.x + m[0][1] * p.y, m[1][0] * p.x + m[1][1] * p.y) + off;
    let pairs: Vec<(Point2, Point2)> = (0..8).map(|_| pt(4.0)).map(|p| (p, affine(p))).collect();
    let queries: Vec<Point2> = (0..20).map(|_| pt(6.0)).collect();
    let disp = morphokit::mapping::map_tps(&LandmarkSet::new(pairs)?, &queries)?;
    let affine_err = queries.iter().zip(&disp).map(|(&q, &d)| (q + d).dist(affine(q))).fold(0.0, f64::max);
    ensure!(affine_err < 1e-8, "affine reproduction error {affine_err:.2e}");
    Ok(format!("landmark residual {residual:.1e}, affine error {affine_err:.1e}"))
}

fn mesh_quality() -> Check {
    let square = Curve::new(
        vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0), Point2::new(0.0, 1.0)],
        true,
        "square",
    )?;
    let unit = triangulate(&square, &[], 0.1, &[])?;
    // one unit is 100 um; gradient length 50 um
    let um = unit.with_vertices(unit.vertices().iter().map(|&p| p * 100.0).collect())?;
    let q = quality_report(&um, 50.0);
    ensure!(q.passed, "unit square fails: {q:?}");
    ensure!(q.max_edge_length <= 10.0, "max edge {:.2} um", q.max_edge_length);
    let coarse = coarsen(&unit, CoarsenOptions::new(2.0))?;
    let fine = refine(&unit);
    let both = refine(&coarse);
    let inverted = [&coarse, &fine, &both].map(|m| quality_report(m, 1e9).n_inverted);
    ensure!(inverted == [0, 0, 0], "inverted elements after coarsen/refine: {inverted:?}");
    Ok(format!(
        "edge ratio {:.3}, max edge {:.2} um, {} -> {} (coarsen) / {} (refine) vertices, none inverted",
        q.min_edge_ratio,
        q.max_edge_length,
        unit.vertex_count(),
        coarse.vertex_count(),
        fine.vertex_count()
    ))
}

fn closed_loop_inference() -> Check {
    let theta = [0.1, 0.9];
    let mesh = Arc::new(TriMesh::rectangle(0.0, 0.0, 1.0, 1.0, 16, 16)?);
    let mut objective = Objective {
        model: ReactionModel::schnakenberg(0.2, 1.0, 1e-3, 4e-2),
        parameters: vec!["a".into(), "b".into()],
        bc: BoundaryConditions::zero_flux(),
        mesh,
        initial: InitialCondition { values: None, noise: 0.05 },
        seed: 4,
        options: SimulationOptions::new(Schedule { t_end: 20.0, dt: 0.1, output_stride: usize::MAX }),
        datasets: Vec::new(),
    };
    let target = objective.simulate(&theta)?;
    objective.datasets.push(Dataset { target, metric: Metric::sse(), weight: 1.0 });
    objective.validate()?;
    let bounds = [ParamBound::new("a", 0.05, 0.4, Scale::Linear)?, ParamBound::new("b", 0.5, 1.5, Scale::Linear)?];
    let f = |x: &[f64]| objective.evaluate(x);
    let screen = grid_screen(f, &bounds, 7, ScreenOptions::default())?;
    let start = screen.best_sample().params.clone();
    let fit = local_refine(f, &start, &bounds, RefineOptions::default())?;
    let rel: Vec<f64> = fit.params.iter().zip(theta).map(|(x, t)| (x - t).abs() / t).collect();
    ensure!(
        rel.iter().all(|&r| r < 0.05),
        "recovered {:?} from screen best {start:?}; relative errors {rel:.3?}",
        fit.params
    );
    Ok(format!(
        "screen best {start:.3?} -> {:.4?} after {} evaluations, relative errors {}",
        fit.params,
        fit.evaluations,
        sci(&rel)
    ))
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Check {
    let config = fixtures().join("growing_bud/run.json");
    let tmp = tempfile::tempdir()?;
    let run = |name: &str, jobs: &str| -> Result<PathBuf, String> {
        let out = tmp.path().join(name);
        let code = morphokit::cli::run_from([
            "morphokit".as_ref(),
            "--config".as_ref(),
            config.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
            "--jobs".as_ref(),
            jobs.as_ref(),
            "run".as_ref(),
        ] as [&std::ffi::OsStr; 8]);
        if code == 0 {
            Ok(out)
        } else {
            Err(format!("pipeline exited with {code}"))
        }
    };
    let (a, b) = (run("a", "1")?, run("b", "4")?);
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    ensure!(!fa.is_empty() && fa == fb, "different CSV sets: {} vs {}", fa.len(), fb.len());
    for f in &fa {
        ensure!(std::fs::read(a.join(f))? == std::fs::read(b.join(f))?, "{} differs", f.display());
    }
    Ok(format!("{} CSV files identical across --jobs 1 and --jobs 4", fa.len()))
}
