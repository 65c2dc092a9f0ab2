//! Batch command-line front end: one subcommand per pipeline stage plus
//! `run` for the whole chain. Every command writes `manifest_<command>.json`
//! into the output directory.

mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

pub use config::{
    CandidateSpec, FitSection, MapSection, MeshSection, ModelSpec, RunConfig, SegmentSection, SimulateSection,
    TargetSpec, Tolerances,
};

use crate::error::{Error, Result};
use crate::fem::{simulate, FieldState, GrowthSeries, ReactionModel, Schedule, SimulationOptions, Trajectory};
use crate::geometry::{resample_equidistant, Curve};
use crate::infer::{
    compare_models, grid_screen, local_refine, Dataset, ModelFit, Objective, ParamBound, ScreenOptions,
};
use crate::ingest::{extract_contours_resampled, load_image, segment_threshold, SegmentationSpec};
use crate::mapping::{run_mapping_pipeline, DisplacementField, LandmarkSet, MappingConfig, MappingMethod};
use crate::mesh::{
    coarsen, quality_report_with, read_msh, refine, triangulate_with, CoarsenOptions, MeshQualityReport, TriMesh,
    TriangulateOptions,
};
use crate::svg;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "morphokit", version, about = "Image-based modelling on growing 2D domains")]
pub struct Cli {
    /// Output directory; config `output`, else `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed; overrides MORPHOKIT_SEED and the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Threshold PGM images and write boundary curves.
    Segment(SegmentArgs),
    /// Displacement field between two curves.
    Map(MapArgs),
    /// Triangulate a domain or check an existing mesh.
    Mesh(MeshArgs),
    /// Reaction-diffusion on a static or growing mesh.
    Simulate(SimulateArgs),
    /// Parameter screen, refinement and model ranking.
    Fit(FitArgs),
    /// SVG rendering of curves, fields, meshes and states.
    Plot(PlotArgs),
    /// Segment, map, mesh, simulate and fit as configured.
    Run,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Segment(_) => "segment",
            Command::Map(_) => "map",
            Command::Mesh(_) => "mesh",
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Plot(_) => "plot",
            Command::Run => "run",
        }
    }
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    pub images: Vec<PathBuf>,
    /// Intensity interval `LO:HI[:LABEL]`; repeatable.
    #[arg(long = "threshold")]
    pub thresholds: Vec<String>,
    /// Gaussian pre-blur radius in pixels.
    #[arg(long)]
    pub blur: Option<f64>,
    /// Resample every curve to this many points.
    #[arg(long)]
    pub points: Option<usize>,
    /// Pixel size in um; overrides the image sidecar.
    #[arg(long)]
    pub pixel_size: Option<f64>,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    pub c1: Option<PathBuf>,
    pub c2: Option<PathBuf>,
    /// Mapping method; automatic choice when absent.
    #[arg(long, value_parser = parse_method)]
    pub method: Option<MappingMethod>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Similarity prescale of the first curve onto the second.
    #[arg(long)]
    pub prescale: bool,
    /// Landmark CSV (`x0,y0,x1,y1`) for tps mapping.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Args, Debug)]
pub struct MeshArgs {
    /// Outer boundary curve, or the mesh to check with `--check-only`.
    pub input: Option<PathBuf>,
    /// Hole, subdomain or interface curves.
    #[arg(long = "inner")]
    pub inner: Vec<PathBuf>,
    /// Target edge length.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub min_angle: Option<f64>,
    #[arg(long)]
    pub gradient_length: Option<f64>,
    #[arg(long)]
    pub coarsen: Option<f64>,
    #[arg(long)]
    pub refine: Option<usize>,
    /// Only report the quality of an existing MSH file.
    #[arg(long)]
    pub check_only: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Reaction model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Growth series JSON; enables growing-domain stepping.
    #[arg(long)]
    pub growth: Option<PathBuf>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Skip the SVG frames.
    #[arg(long)]
    pub no_svg: bool,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Grid values per parameter.
    #[arg(long)]
    pub screen: Option<usize>,
    /// Nelder-Mead refinement from the best screen sample.
    #[arg(long)]
    pub refine: bool,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PlotKind {
    Curve,
    Field,
    Mesh,
    State,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    pub kind: PlotKind,
    /// Curve files; a field file optionally followed by its two curves; a
    /// mesh; or a state CSV (with `--mesh`).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub species: usize,
}

fn parse_method(s: &str) -> std::result::Result<MappingMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!("unknown method '{s}'; expected minimal_distance, uniform, normal, reverse_normal, diffusion, reverse_diffusion or tps")
    })
}

/// Error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        if self.error.is_input_error() {
            EXIT_INPUT
        } else {
            EXIT_FAILURE
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

#[derive(Serialize)]
struct OutputEntry {
    path: String,
    sha256: String,
}

/// Output directory bookkeeping shared by all commands.
struct Context {
    out: PathBuf,
    seed: u64,
    outputs: Vec<OutputEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Context {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(OutputEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(rel, text.as_bytes())
    }

    fn write_curve(&mut self, rel: &str, c: &Curve) -> Result<PathBuf> {
        let desc = json!({"closed": c.is_closed(), "label": c.label(), "units": "um"});
        self.write_json(&Path::new(rel).with_extension("json").to_string_lossy(), &desc)?;
        self.write(rel, c.to_csv_string().as_bytes())
    }

    fn write_field(&mut self, rel: &str, f: &DisplacementField) -> Result<PathBuf> {
        self.write_json(&Path::new(rel).with_extension("json").to_string_lossy(), &f.descriptor())?;
        self.write(rel, f.to_csv_string().as_bytes())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("morphokit {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("MORPHOKIT_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("MORPHOKIT_SEED='{v}' is not an unsigned integer"))),
        Err(_) => Ok(config.unwrap_or(0)),
    }
}

pub fn execute(cli: Cli) -> StageResult<()> {
    let started = Instant::now();
    let name = cli.command.name();
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::read(p).stage("config")?,
        None => RunConfig::default(),
    };
    let seed = resolve_seed(cli.seed, cfg.seed).stage("config")?;
    cfg.seed = Some(seed);
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e)).stage("output")?;
    let mut ctx = Context {
        out,
        seed,
        outputs: Vec::new(),
    };
    let jobs = cli.jobs;
    let body = |ctx: &mut Context, cfg: &mut RunConfig| dispatch(cli.command, ctx, cfg);
    match jobs {
        Some(0) => return Err(Error::InvalidInput("--jobs must be at least 1".into())).stage("config"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
                .stage("config")?;
            pool.install(|| body(&mut ctx, &mut cfg))?;
        }
        None => body(&mut ctx, &mut cfg)?,
    }
    let config_json = serde_json::to_vec(&cfg).map_err(Error::from).stage("manifest")?;
    let manifest = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "config_file": cli.config,
        "config_sha256": sha256_hex(&config_json),
        "seed": seed,
        "jobs": jobs,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "outputs": ctx.outputs,
    });
    let path = ctx.out.join(format!("manifest_{name}.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from).stage("manifest")? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e)).stage("manifest")?;
    info!("{name} finished in {:.2} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn dispatch(command: Command, ctx: &mut Context, cfg: &mut RunConfig) -> StageResult<()> {
    match command {
        Command::Segment(a) => {
            let sec = cfg.segment.get_or_insert_with(Default::default);
            merge_segment(sec, a);
            cmd_segment(ctx, sec).stage("segment").map(drop)
        }
        Command::Map(a) => {
            let sec = cfg.map.get_or_insert_with(Default::default);
            merge_map(sec, a).stage("map")?;
            cmd_map(ctx, sec).stage("map").map(drop)
        }
        Command::Mesh(a) => {
            let check = a.check_only;
            let sec = cfg.mesh.get_or_insert_with(Default::default);
            merge_mesh(sec, a);
            if check {
                cmd_mesh_check(sec, &cfg.tolerances).stage("mesh")
            } else {
                cmd_mesh(ctx, sec, &cfg.tolerances).stage("mesh").map(drop)
            }
        }
        Command::Simulate(a) => {
            let sec = cfg.simulate.get_or_insert_with(Default::default);
            merge_simulate(sec, a);
            cmd_simulate(ctx, sec).stage("simulate").map(drop)
        }
        Command::Fit(a) => {
            let sim = cfg.simulate.get_or_insert_with(Default::default);
            if let Some(m) = a.mesh {
                sim.mesh = Some(m);
            }
            let fit = cfg.fit.get_or_insert_with(Default::default);
            if let Some(n) = a.screen {
                fit.screen = n;
            }
            if let Some(b) = a.budget {
                fit.budget = Some(b);
            }
            fit.refine |= a.refine;
            let (sim, fit) = (cfg.simulate.as_ref().unwrap(), cfg.fit.as_ref().unwrap());
            let mesh = load_sim_mesh(sim).stage("fit")?;
            let growth = sim.growth.as_deref().map(GrowthSeries::read_json).transpose().stage("fit")?;
            cmd_fit(ctx, fit, sim, mesh, growth).stage("fit")
        }
        Command::Plot(a) => cmd_plot(ctx, a).stage("plot"),
        Command::Run => cmd_run(ctx, cfg),
    }
}

fn merge_segment(sec: &mut SegmentSection, a: SegmentArgs) {
    if !a.images.is_empty() {
        sec.images = a.images;
    }
    if !a.thresholds.is_empty() {
        sec.thresholds = a.thresholds;
    }
    if let Some(b) = a.blur {
        sec.blur = b;
    }
    sec.points = a.points.or(sec.points);
    sec.pixel_size = a.pixel_size.or(sec.pixel_size);
}

fn merge_map(sec: &mut MapSection, a: MapArgs) -> Result<()> {
    match (a.c1, a.c2) {
        (Some(c1), Some(c2)) => sec.curves = vec![c1, c2],
        (Some(_), None) => return Err(Error::InvalidInput("map needs two curve files".into())),
        _ => {}
    }
    let m = &mut sec.mapping;
    m.method = a.method.or(m.method);
    if let Some(n) = a.points {
        m.n_points = n;
    }
    m.prescale |= a.prescale;
    if let Some(p) = a.landmarks {
        m.landmarks = Some(LandmarkSet::read_csv(&p)?);
    }
    if let Some(t) = a.t {
        m.t = t;
    }
    if let Some(dt) = a.dt {
        m.dt = dt;
    }
    Ok(())
}

fn merge_mesh(sec: &mut MeshSection, a: MeshArgs) {
    sec.outer = a.input.or(sec.outer.take());
    if !a.inner.is_empty() {
        sec.inner = a.inner;
    }
    if let Some(h) = a.h {
        sec.h = h;
    }
    if let Some(x) = a.min_angle {
        sec.min_angle = x;
    }
    sec.gradient_length = a.gradient_length.or(sec.gradient_length);
    sec.coarsen = a.coarsen.or(sec.coarsen);
    if let Some(r) = a.refine {
        sec.refine = r;
    }
}

fn merge_simulate(sec: &mut SimulateSection, a: SimulateArgs) {
    sec.mesh = a.mesh.or(sec.mesh.take());
    if let Some(m) = a.model {
        sec.model = Some(ModelSpec::Path(m));
    }
    sec.growth = a.growth.or(sec.growth.take());
    if a.t_end.is_some() || a.dt.is_some() || a.stride.is_some() {
        let base = sec.schedule.unwrap_or(Schedule {
            t_end: f64::NAN,
            dt: f64::NAN,
            output_stride: 1,
        });
        sec.schedule = Some(Schedule {
            t_end: a.t_end.unwrap_or(base.t_end),
            dt: a.dt.unwrap_or(base.dt),
            output_stride: a.stride.unwrap_or(base.output_stride),
        });
    }
    sec.svg &= !a.no_svg;
}

fn require<T: Clone>(v: &Option<T>, what: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::InvalidInput(format!("missing {what}")))
}

fn segmentation_spec(sec: &SegmentSection) -> Result<SegmentationSpec> {
    if sec.thresholds.is_empty() {
        return Err(Error::InvalidInput("no --threshold given".into()));
    }
    let spec = SegmentationSpec {
        thresholds: sec
            .thresholds
            .iter()
            .enumerate()
            .map(|(i, s)| SegmentationSpec::parse_threshold(s, i))
            .collect::<Result<_>>()?,
        smoothing_radius: sec.blur,
    };
    spec.validate()?;
    Ok(spec)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

/// Curves per image and threshold label, in input order.
fn cmd_segment(ctx: &mut Context, sec: &SegmentSection) -> Result<Vec<Vec<(String, Vec<Curve>)>>> {
    if sec.images.is_empty() {
        return Err(Error::InvalidInput("no input images".into()));
    }
    let spec = segmentation_spec(sec)?;
    let mut all = Vec::new();
    for path in &sec.images {
        let img = load_image(path, sec.pixel_size)?;
        let labels = segment_threshold(&img, &spec)?;
        let stem = file_stem(path);
        let mut per_image = Vec::new();
        for t in &spec.thresholds {
            let curves = extract_contours_resampled(&labels, &t.label, img.pixel_size(), sec.points)?;
            if curves.is_empty() {
                warn!("{}: no pixels in '{}'", path.display(), t.label);
            }
            for (k, c) in curves.iter().enumerate() {
                let name = if curves.len() == 1 {
                    format!("curves/{stem}_{}.csv", t.label)
                } else {
                    format!("curves/{stem}_{}_{k}.csv", t.label)
                };
                ctx.write_curve(&name, c)?;
            }
            info!("{}: {} curve(s) for '{}'", path.display(), curves.len(), t.label);
            per_image.push((t.label.clone(), curves));
        }
        all.push(per_image);
    }
    Ok(all)
}

fn write_mapping(ctx: &mut Context, prefix: &str, c1: &Curve, c2: &Curve, cfg: &MappingConfig) -> Result<DisplacementField> {
    let out = run_mapping_pipeline(c1, c2, cfg)?;
    ctx.write_field(&format!("{prefix}.csv"), &out.field)?;
    ctx.write_json(
        &format!("{prefix}_quality.json"),
        &json!({"quality": out.quality, "attempts": out.attempts}),
    )?;
    ctx.write(&format!("{prefix}.svg"), svg::field_svg(c1, c2, &out.field).as_bytes())?;
    info!(
        "{prefix}: {} vectors, {} crossings, unmapped {:.4}",
        out.field.len(),
        out.quality.crossing_count,
        out.quality.unmapped_fraction
    );
    Ok(out.field)
}

fn cmd_map(ctx: &mut Context, sec: &MapSection) -> Result<DisplacementField> {
    if sec.curves.len() < 2 {
        return Err(Error::InvalidInput("map needs two curve files".into()));
    }
    let c1 = Curve::read_csv(&sec.curves[0])?;
    let c2 = Curve::read_csv(&sec.curves[1])?;
    write_mapping(ctx, "field", &c1, &c2, &sec.mapping)
}

fn build_mesh(outer: &Curve, inner: &[Curve], sec: &MeshSection) -> Result<TriMesh> {
    let opts = TriangulateOptions {
        min_angle: sec.min_angle,
        ..Default::default()
    };
    let mut mesh = triangulate_with(outer, inner, sec.h, &sec.seeds, opts)?;
    if let Some(f) = sec.coarsen {
        mesh = coarsen(&mesh, CoarsenOptions::new(f))?;
    }
    for _ in 0..sec.refine {
        mesh = refine(&mesh);
    }
    Ok(mesh)
}

fn report(mesh: &TriMesh, sec: &MeshSection, tol: &Tolerances) -> MeshQualityReport {
    quality_report_with(mesh, sec.gradient_length.unwrap_or(f64::INFINITY), tol.quality)
}

fn write_mesh(ctx: &mut Context, prefix: &str, mesh: &TriMesh, sec: &MeshSection, tol: &Tolerances) -> Result<()> {
    let q = report(mesh, sec, tol);
    if !q.passed {
        warn!("mesh fails the quality check: {q:?}");
    }
    ctx.write(&format!("{prefix}.msh"), crate::mesh::msh_string(mesh).as_bytes())?;
    ctx.write_json(
        &format!("{prefix}_quality.json"),
        &json!({"vertices": mesh.vertex_count(), "triangles": mesh.triangle_count(), "report": q}),
    )?;
    ctx.write(&format!("{prefix}.svg"), svg::mesh_svg(mesh).as_bytes())?;
    Ok(())
}

fn cmd_mesh(ctx: &mut Context, sec: &MeshSection, tol: &Tolerances) -> Result<TriMesh> {
    let outer = Curve::read_csv(&require(&sec.outer, "outer boundary curve")?)?;
    let inner = sec.inner.iter().map(|p| Curve::read_csv(p)).collect::<Result<Vec<_>>>()?;
    let mesh = build_mesh(&outer, &inner, sec)?;
    write_mesh(ctx, "mesh", &mesh, sec, tol)?;
    Ok(mesh)
}

fn cmd_mesh_check(sec: &MeshSection, tol: &Tolerances) -> Result<()> {
    let mesh = read_msh(&require(&sec.outer, "mesh file")?)?;
    let q = report(&mesh, sec, tol);
    println!("{}", serde_json::to_string_pretty(&q)?);
    if q.passed {
        Ok(())
    } else {
        Err(Error::Degenerate(format!(
            "quality check failed: min edge ratio {:.4} (need {}), max edge {:.4}, {} inverted",
            q.min_edge_ratio, tol.quality.min_edge_ratio, q.max_edge_length, q.n_inverted
        )))
    }
}

fn load_model(sec: &SimulateSection) -> Result<ReactionModel> {
    require(&sec.model, "reaction model")?.load()
}

fn load_sim_mesh(sec: &SimulateSection) -> Result<Arc<TriMesh>> {
    Ok(Arc::new(read_msh(&require(&sec.mesh, "simulation mesh")?)?))
}

fn simulation_options(sec: &SimulateSection, growth: Option<GrowthSeries>) -> Result<SimulationOptions> {
    let schedule = require(&sec.schedule, "schedule (t_end and dt)")?;
    let mut opts = SimulationOptions::new(schedule);
    if let Some(p) = sec.pre_equilibrate {
        opts = opts.with_pre_equilibration(p);
    }
    if let Some(g) = growth {
        if schedule.t_end > g.t_end() + 1e-9 * g.t_end().abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "t_end {} is past the end of the growth series at {}",
                schedule.t_end,
                g.t_end()
            )));
        }
        opts = opts.with_growth(g);
    }
    Ok(opts)
}

fn cmd_simulate(ctx: &mut Context, sec: &SimulateSection) -> Result<Trajectory> {
    let model = load_model(sec)?;
    let mesh = load_sim_mesh(sec)?;
    let growth = sec.growth.as_deref().map(GrowthSeries::read_json).transpose()?;
    run_simulation(ctx, sec, model, mesh, growth)
}

fn run_simulation(
    ctx: &mut Context,
    sec: &SimulateSection,
    model: ReactionModel,
    mesh: Arc<TriMesh>,
    growth: Option<GrowthSeries>,
) -> Result<Trajectory> {
    let n = model.n_species();
    if sec.plot_species >= n {
        return Err(Error::InvalidInput(format!("plot_species {} but the model has {n} species", sec.plot_species)));
    }
    sec.bc.validate(&mesh, n)?;
    let t0 = growth.as_ref().map_or(0.0, GrowthSeries::t_start);
    let grows = growth.is_some();
    let opts = simulation_options(sec, growth)?;
    let initial = sec.initial.build(mesh, &model, ctx.seed, t0)?;
    let traj = simulate(&model, &sec.bc, initial, &opts)?;
    let mut frames = Vec::new();
    for (k, f) in traj.frames.iter().enumerate() {
        let rel = format!("frames/frame_{k:05}.csv");
        ctx.write(&rel, f.to_csv_string().as_bytes())?;
        if sec.svg {
            ctx.write(&format!("frames/frame_{k:05}.svg"), svg::state_svg(f, sec.plot_species).as_bytes())?;
        }
        frames.push(rel);
    }
    if grows {
        ctx.write("frames/final_mesh.msh", crate::mesh::msh_string(traj.last().mesh()).as_bytes())?;
    }
    let stats: Vec<_> = traj
        .frames
        .iter()
        .map(|f| {
            json!({
                "t": f.t(),
                "area": f.mesh().area(),
                "mean": (0..n).map(|s| f.mean(s)).collect::<Vec<_>>(),
                "variance": (0..n).map(|s| f.variance(s)).collect::<Vec<_>>(),
            })
        })
        .collect();
    ctx.write_json(
        "trajectory.json",
        &json!({
            "seed": ctx.seed,
            "steps": traj.steps,
            "pre_equilibration_time": traj.pre_equilibration_time,
            "growing": grows,
            "frames": frames,
            "stats": stats,
        }),
    )?;
    info!("{} steps, {} frames", traj.steps, traj.frames.len());
    Ok(traj)
}

struct Candidate {
    tag: String,
    model: ReactionModel,
    bounds: Vec<ParamBound>,
}

fn cmd_fit(
    ctx: &mut Context,
    fit: &FitSection,
    sim: &SimulateSection,
    mesh: Arc<TriMesh>,
    growth: Option<GrowthSeries>,
) -> Result<()> {
    if fit.targets.is_empty() {
        return Err(Error::InvalidInput("fit needs at least one target".into()));
    }
    let options = simulation_options(sim, growth)?;
    let datasets = fit
        .targets
        .iter()
        .map(|t| {
            let m = match &t.mesh {
                Some(p) => Arc::new(read_msh(p)?),
                None => mesh.clone(),
            };
            Ok(Dataset {
                target: FieldState::read_csv(m, &t.path, 0.0)?,
                metric: t.metric,
                weight: t.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let candidates = if fit.candidates.is_empty() {
        let model = load_model(sim)?;
        let tag = serde_json::to_value(model.kinetics)?.as_str().unwrap_or("model").to_string();
        vec![Candidate {
            tag,
            model,
            bounds: fit.parameters.clone(),
        }]
    } else {
        fit.candidates
            .iter()
            .map(|c| {
                Ok(Candidate {
                    tag: c.tag.clone(),
                    model: c.model.load()?,
                    bounds: c.parameters.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let single = candidates.len() == 1;
    let mut fits = Vec::new();
    let mut reports = Vec::new();
    for c in candidates {
        if c.bounds.is_empty() {
            return Err(Error::InvalidInput(format!("model '{}' has no parameters to fit", c.tag)));
        }
        let objective = Objective {
            model: c.model,
            parameters: c.bounds.iter().map(|b| b.name.clone()).collect(),
            bc: sim.bc.clone(),
            mesh: mesh.clone(),
            initial: sim.initial.clone(),
            seed: ctx.seed,
            options: options.clone(),
            datasets: datasets.clone(),
        };
        objective.validate()?;
        let opts = ScreenOptions {
            budget: fit.budget.unwrap_or(ScreenOptions::default().budget),
            seed: ctx.seed,
        };
        let screen = grid_screen(|th: &[f64]| objective.evaluate(th), &c.bounds, fit.screen, opts)?;
        let name = if single { "screen.csv".to_string() } else { format!("screen_{}.csv", c.tag) };
        ctx.write(&name, screen.to_csv_string().as_bytes())?;
        let start = screen.best_sample().clone();
        let refined = if fit.refine {
            Some(local_refine(|th: &[f64]| objective.evaluate(th), &start.params, &c.bounds, fit.refine_options)?)
        } else {
            None
        };
        let (params, value) = refined.as_ref().map_or((start.params.clone(), start.value), |r| (r.params.clone(), r.value));
        let named: serde_json::Map<String, serde_json::Value> =
            c.bounds.iter().zip(&params).map(|(b, &v)| (b.name.clone(), json!(v))).collect();
        info!("{}: objective {value:e} at {named:?}", c.tag);
        fits.push(ModelFit {
            tag: c.tag.clone(),
            objective: value,
            k: c.bounds.len(),
            n: objective.effective_size(),
            metric: datasets[0].metric.name().to_string(),
        });
        reports.push(json!({
            "tag": c.tag,
            "parameters": named,
            "objective": value,
            "screen_best": start,
            "screen_samples": screen.samples.len(),
            "factorial": screen.factorial,
            "refine": refined,
        }));
    }
    let ranking = match compare_models(&fits, fit.criterion) {
        Ok(r) => json!(r),
        Err(e) => {
            warn!("model ranking skipped: {e}");
            json!({"error": e.to_string()})
        }
    };
    ctx.write_json(
        "fit.json",
        &json!({"seed": ctx.seed, "criterion": fit.criterion, "models": reports, "fits": fits, "ranking": ranking}),
    )?;
    Ok(())
}

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

fn cmd_plot(ctx: &mut Context, a: PlotArgs) -> Result<()> {
    let first = &a.inputs[0];
    let text = match a.kind {
        PlotKind::Curve => {
            let curves = a.inputs.iter().map(|p| Curve::read_csv(p)).collect::<Result<Vec<_>>>()?;
            let mut s = svg::Svg::new(curves.iter().flat_map(|c| c.points().iter().copied()));
            for (k, c) in curves.iter().enumerate() {
                s.curve(c, PALETTE[k % PALETTE.len()]);
            }
            s.finish()
        }
        PlotKind::Field => {
            let f = DisplacementField::read_csv(first)?;
            let (c1, c2) = match (a.inputs.get(1), a.inputs.get(2)) {
                (Some(p), Some(q)) => (Curve::read_csv(p)?, Curve::read_csv(q)?),
                _ => (
                    Curve::new(f.sources().to_vec(), f.is_closed(), "source")?,
                    Curve::new(f.targets(), f.is_closed(), "target")?,
                ),
            };
            svg::field_svg(&c1, &c2, &f)
        }
        PlotKind::Mesh => svg::mesh_svg(&read_msh(first)?),
        PlotKind::State => {
            let mesh = Arc::new(read_msh(&require(&a.mesh, "--mesh for a state plot")?)?);
            let st = FieldState::read_csv(mesh, first, 0.0)?;
            if a.species >= st.n_species() {
                return Err(Error::InvalidInput(format!("species {} of {}", a.species, st.n_species())));
            }
            svg::state_svg(&st, a.species)
        }
    };
    ctx.write(&format!("{}.svg", file_stem(first)), text.as_bytes())?;
    Ok(())
}

/// Largest closed curve of the first threshold label.
fn stage_boundary(per_image: &[(String, Vec<Curve>)], image: &Path) -> Result<Curve> {
    let (label, curves) = &per_image[0];
    curves
        .iter()
        .filter(|c| c.is_closed())
        .map(|c| Ok((c.signed_area()?.abs(), c)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.clone())
        .ok_or_else(|| Error::InvalidInput(format!("{}: no closed '{label}' boundary", image.display())))
}

fn cmd_run(ctx: &mut Context, cfg: &RunConfig) -> StageResult<()> {
    let seg = require(&cfg.segment, "segment section").stage("segment")?;
    let per_image = cmd_segment(ctx, &seg).stage("segment")?;
    let boundaries = per_image
        .iter()
        .zip(&seg.images)
        .map(|(p, img)| stage_boundary(p, img))
        .collect::<Result<Vec<_>>>()
        .stage("segment")?;
    let times = seg.times.clone().unwrap_or_else(|| (0..boundaries.len()).map(|k| k as f64).collect());
    if times.len() != boundaries.len() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(format!(
            "{} stage times for {} images; times must increase",
            times.len(),
            boundaries.len()
        )))
        .stage("segment");
    }
    for (k, c) in boundaries.iter().enumerate() {
        ctx.write_curve(&format!("stages/stage_{k}.csv"), c).stage("segment")?;
    }

    let map = cfg.map.clone().unwrap_or_default().mapping;
    let mut fields = Vec::new();
    for k in 0..boundaries.len().saturating_sub(1) {
        let mc = MappingConfig {
            t: times[k],
            dt: times[k + 1] - times[k],
            ..map.clone()
        };
        let f = write_mapping(ctx, &format!("fields/stage_{k}"), &boundaries[k], &boundaries[k + 1], &mc)
            .map_err(|e| prefix_error(e, &format!("stage {k} to {}", k + 1)))
            .stage("map")?;
        fields.push(f);
    }
    let mesh_sec = cfg.mesh.clone().unwrap_or_default();
    // mesh boundary at spacing h along the first boundary; its vertices are
    // the tracked material points, so mapping resolution and pixel noise do
    // not set the element size
    let first = match fields.first() {
        Some(f) => Curve::new(f.sources().to_vec(), true, boundaries[0].label()),
        None => Ok(boundaries[0].clone()),
    }
    .stage("mesh")?;
    let n = ((first.length() / mesh_sec.h).ceil() as usize).max(8);
    let outer = resample_equidistant(&first, n).stage("mesh")?;
    let growth = if fields.is_empty() {
        None
    } else {
        let names: Vec<String> = (0..fields.len()).map(|k| format!("stage_{k}.csv")).collect();
        ctx.write_curve("mesh/boundary.csv", &outer).stage("mesh")?;
        ctx.write_json("fields/series.json", &json!({ "stages": names, "points": "../mesh/boundary.csv" }))
            .stage("map")?;
        Some(GrowthSeries::from_points(fields, outer.points().to_vec()).stage("map")?)
    };
    let mesh = build_mesh(&outer, &[], &mesh_sec).stage("mesh")?;
    write_mesh(ctx, "mesh/mesh", &mesh, &mesh_sec, &cfg.tolerances).stage("mesh")?;
    let mesh = Arc::new(mesh);

    if let Some(sim) = &cfg.simulate {
        let model = load_model(sim).stage("simulate")?;
        if sim.growth.is_some() {
            warn!("run derives the growth series from the images; simulate.growth is ignored");
        }
        let mut sim = sim.clone();
        if sim.schedule.is_none() {
            if let Some(g) = &growth {
                sim.schedule = Some(Schedule {
                    t_end: g.t_end(),
                    dt: (g.t_end() - g.t_start()) / 100.0,
                    output_stride: 10,
                });
            }
        }
        run_simulation(ctx, &sim, model, mesh.clone(), growth.clone()).stage("simulate")?;
        if let Some(fit) = &cfg.fit {
            cmd_fit(ctx, fit, &sim, mesh, growth).stage("fit")?;
        }
    }
    Ok(())
}

fn prefix_error(e: Error, what: &str) -> Error {
    match e {
        Error::Mapping(m) => Error::Mapping(format!("{what}: {m}")),
        Error::Intersection(m) => Error::Intersection(format!("{what}: {m}")),
        Error::Degenerate(m) => Error::Degenerate(format!("{what}: {m}")),
        e => e,
    }
}
