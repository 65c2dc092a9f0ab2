//! C ABI over morphokit: curves, displacement fields, meshes and
//! reaction-diffusion runs behind opaque handles.
//!
//! Fallible calls return an `MkStatus`. On failure the message is kept per
//! thread and read with `mk_last_error`. Every handle is released with its
//! `mk_*_free`. Point buffers are interleaved `x0, y0, x1, y1, ...`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use morphokit::fem::{simulate, BoundaryConditions, FieldState, InitialCondition, ReactionModel, Schedule, SimulationOptions};
use morphokit::geometry::resample_equidistant;
use morphokit::mapping::{map_tps, run_mapping_pipeline, DisplacementField, LandmarkSet, MappingConfig, MappingMethod};
use morphokit::mesh::{quality_report, read_msh, triangulate_with, write_msh, TriangulateOptions};
use morphokit::{Curve, Error, Point2, TriMesh};

/// Result code of every fallible call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Parse = 4,
    Geometry = 5,
    Mapping = 6,
    Numerical = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Mapping method; `Auto` escalates normal, reverse normal and diffusion
/// on closed curves and uses uniform on open ones.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MkMethod {
    Auto = 0,
    MinimalDistance = 1,
    Uniform = 2,
    Normal = 3,
    ReverseNormal = 4,
    Diffusion = 5,
    ReverseDiffusion = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MkFieldQuality {
    pub crossing_count: usize,
    pub unmapped_fraction: f64,
    pub max_stretch: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MkMeshQuality {
    pub min_edge_ratio: f64,
    pub max_edge_length: f64,
    pub min_angle: f64,
    pub n_inverted: usize,
    pub passed: bool,
}

/// Closed or open boundary polyline.
pub struct MkCurve(Curve);

/// Displacement vectors sampled on a curve.
pub struct MkField(DisplacementField);

/// Triangle mesh.
pub struct MkMesh(Arc<TriMesh>);

/// Species, diffusion coefficients and reaction terms.
pub struct MkModel(ReactionModel);

/// Concentrations on a mesh at one time.
pub struct MkState(FieldState);

struct Failure {
    status: MkStatus,
    message: String,
}

impl Failure {
    fn new(status: MkStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) => MkStatus::InvalidInput,
            Error::Io { .. } => MkStatus::Io,
            Error::Parse { .. } | Error::Json(_) => MkStatus::Parse,
            Error::Degenerate(_) | Error::Intersection(_) | Error::Inverted(_) => MkStatus::Geometry,
            Error::Mapping(_) => MkStatus::Mapping,
            Error::Singular(_) | Error::Simulation(_) | Error::Optimization(_) => MkStatus::Numerical,
        };
        Failure::new(status, e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult) -> MkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MkStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal error: {msg}"));
            MkStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure::new(MkStatus::NullPointer, format!("{what} is null")))
}

/// Nulls the output slot up front so callers never see a stale handle.
unsafe fn out_slot<'a, T>(out: *mut *mut T) -> FfiResult<&'a mut *mut T> {
    let slot = out
        .as_mut()
        .ok_or_else(|| Failure::new(MkStatus::NullPointer, "output pointer is null"))?;
    *slot = ptr::null_mut();
    Ok(slot)
}

unsafe fn path_arg(p: *const c_char) -> FfiResult<PathBuf> {
    Ok(PathBuf::from(str_arg(p)?))
}

unsafe fn str_arg<'a>(p: *const c_char) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::new(MkStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(MkStatus::InvalidInput, "string argument is not UTF-8"))
}

unsafe fn points_arg(xy: *const f64, n: usize) -> FfiResult<Vec<Point2>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if xy.is_null() {
        return Err(Failure::new(MkStatus::NullPointer, "point buffer is null"));
    }
    Ok(std::slice::from_raw_parts(xy, 2 * n)
        .chunks_exact(2)
        .map(|c| Point2::new(c[0], c[1]))
        .collect())
}

unsafe fn write_f64s(values: impl ExactSizeIterator<Item = f64>, out: *mut f64, capacity: usize) -> FfiResult {
    let n = values.len();
    if n > capacity {
        return Err(Failure::new(
            MkStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {n} needed"),
        ));
    }
    if n > 0 && out.is_null() {
        return Err(Failure::new(MkStatus::NullPointer, "output buffer is null"));
    }
    for (k, v) in values.enumerate() {
        *out.add(k) = v;
    }
    Ok(())
}

unsafe fn write_points(points: &[Point2], out: *mut f64, capacity: usize) -> FfiResult {
    write_f64s(points.iter().flat_map(|p| [p.x, p.y]).collect::<Vec<_>>().into_iter(), out, capacity)
}

fn boxed<T>(slot: &mut *mut T, value: T) {
    *slot = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `xy` holds `2 * n` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_curve_new(xy: *const f64, n: usize, closed: bool, out: *mut *mut MkCurve) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let curve = Curve::new(points_arg(xy, n)?, closed, "curve")?;
        boxed(slot, MkCurve(curve));
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_curve_read_csv(path: *const c_char, out: *mut *mut MkCurve) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        boxed(slot, MkCurve(Curve::read_csv(&path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `curve` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mk_curve_write_csv(curve: *const MkCurve, path: *const c_char) -> MkStatus {
    guard(|| {
        handle(curve, "curve")?.0.write_csv(&path_arg(path)?)?;
        Ok(())
    })
}

/// Number of points; 0 for NULL.
///
/// # Safety
/// `curve` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_curve_len(curve: *const MkCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.0.len())
}

/// Polyline length; NaN for NULL.
///
/// # Safety
/// `curve` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_curve_length(curve: *const MkCurve) -> f64 {
    curve.as_ref().map_or(f64::NAN, |c| c.0.length())
}

/// # Safety
/// `curve` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_curve_is_closed(curve: *const MkCurve) -> bool {
    curve.as_ref().is_some_and(|c| c.0.is_closed())
}

/// Copies the points into `out_xy`, which holds `capacity` doubles.
///
/// # Safety
/// `curve` is a live handle; `out_xy` holds `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn mk_curve_points(curve: *const MkCurve, out_xy: *mut f64, capacity: usize) -> MkStatus {
    guard(|| write_points(handle(curve, "curve")?.0.points(), out_xy, capacity))
}

/// Equal-chord resampling to `n` points.
///
/// # Safety
/// `curve` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_curve_resample(curve: *const MkCurve, n: usize, out: *mut *mut MkCurve) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let c = resample_equidistant(&handle(curve, "curve")?.0, n)?;
        boxed(slot, MkCurve(c));
        Ok(())
    })
}

/// # Safety
/// `curve` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mk_curve_free(curve: *mut MkCurve) {
    free(curve)
}

fn method(m: MkMethod) -> Option<MappingMethod> {
    match m {
        MkMethod::Auto => None,
        MkMethod::MinimalDistance => Some(MappingMethod::MinimalDistance),
        MkMethod::Uniform => Some(MappingMethod::Uniform),
        MkMethod::Normal => Some(MappingMethod::Normal),
        MkMethod::ReverseNormal => Some(MappingMethod::ReverseNormal),
        MkMethod::Diffusion => Some(MappingMethod::Diffusion),
        MkMethod::ReverseDiffusion => Some(MappingMethod::ReverseDiffusion),
    }
}

fn method_tag(m: MappingMethod) -> MkMethod {
    match m {
        MappingMethod::MinimalDistance => MkMethod::MinimalDistance,
        MappingMethod::Uniform => MkMethod::Uniform,
        MappingMethod::Normal => MkMethod::Normal,
        MappingMethod::ReverseNormal => MkMethod::ReverseNormal,
        MappingMethod::Diffusion => MkMethod::Diffusion,
        MappingMethod::ReverseDiffusion => MkMethod::ReverseDiffusion,
        MappingMethod::Tps => MkMethod::Auto,
    }
}

/// Displacement field from `c1` to `c2` with `n_points` samples per curve.
/// `quality` may be NULL.
///
/// # Safety
/// `c1` and `c2` are live handles; `out` is writable; `quality` is NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mk_map_curves(
    c1: *const MkCurve,
    c2: *const MkCurve,
    method_: MkMethod,
    n_points: usize,
    prescale: bool,
    out: *mut *mut MkField,
    quality: *mut MkFieldQuality,
) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let config = MappingConfig {
            method: method(method_),
            n_points,
            prescale,
            ..MappingConfig::default()
        };
        let outcome = run_mapping_pipeline(&handle(c1, "c1")?.0, &handle(c2, "c2")?.0, &config)?;
        if let Some(q) = quality.as_mut() {
            *q = MkFieldQuality {
                crossing_count: outcome.quality.crossing_count,
                unmapped_fraction: outcome.quality.unmapped_fraction,
                max_stretch: outcome.quality.max_stretch,
            };
        }
        boxed(slot, MkField(outcome.field));
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_field_read_csv(path: *const c_char, out: *mut *mut MkField) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        boxed(slot, MkField(DisplacementField::read_csv(&path_arg(path)?)?));
        Ok(())
    })
}

/// # Safety
/// `field` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mk_field_write_csv(field: *const MkField, path: *const c_char) -> MkStatus {
    guard(|| {
        handle(field, "field")?.0.write_csv(&path_arg(path)?)?;
        Ok(())
    })
}

/// Number of vectors; 0 for NULL.
///
/// # Safety
/// `field` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_field_len(field: *const MkField) -> usize {
    field.as_ref().map_or(0, |f| f.0.len())
}

/// Method that produced the field; `MK_METHOD_AUTO` for NULL or TPS.
///
/// # Safety
/// `field` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_field_method(field: *const MkField) -> MkMethod {
    field.as_ref().map_or(MkMethod::Auto, |f| method_tag(f.0.method()))
}

/// # Safety
/// `field` is a live handle; `out_xy` holds `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn mk_field_sources(field: *const MkField, out_xy: *mut f64, capacity: usize) -> MkStatus {
    guard(|| write_points(handle(field, "field")?.0.sources(), out_xy, capacity))
}

/// # Safety
/// `field` is a live handle; `out_xy` holds `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn mk_field_vectors(field: *const MkField, out_xy: *mut f64, capacity: usize) -> MkStatus {
    guard(|| write_points(handle(field, "field")?.0.vectors(), out_xy, capacity))
}

/// # Safety
/// `field` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mk_field_free(field: *mut MkField) {
    free(field)
}

/// Thin-plate-spline displacement at `m` query points from `n` landmark
/// pairs `src -> dst`. `out_xy` receives `2 * m` doubles.
///
/// # Safety
/// `src_xy` and `dst_xy` hold `2 * n` doubles, `query_xy` and `out_xy`
/// hold `2 * m`.
#[no_mangle]
pub unsafe extern "C" fn mk_tps_displace(
    src_xy: *const f64,
    dst_xy: *const f64,
    n: usize,
    query_xy: *const f64,
    m: usize,
    out_xy: *mut f64,
) -> MkStatus {
    guard(|| {
        let pairs = points_arg(src_xy, n)?.into_iter().zip(points_arg(dst_xy, n)?).collect();
        let v = map_tps(&LandmarkSet::new(pairs)?, &points_arg(query_xy, m)?)?;
        write_points(&v, out_xy, 2 * m)
    })
}

/// Quality triangulation of the region bounded by `outer` with target edge
/// length `h` and minimum angle in degrees.
///
/// # Safety
/// `outer` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_triangulate(
    outer: *const MkCurve,
    h: f64,
    min_angle: f64,
    out: *mut *mut MkMesh,
) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let opts = TriangulateOptions {
            min_angle,
            ..TriangulateOptions::default()
        };
        let mesh = triangulate_with(&handle(outer, "outer")?.0, &[], h, &[], opts)?;
        boxed(slot, MkMesh(Arc::new(mesh)));
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_read_msh(path: *const c_char, out: *mut *mut MkMesh) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        boxed(slot, MkMesh(Arc::new(read_msh(&path_arg(path)?)?)));
        Ok(())
    })
}

/// # Safety
/// `mesh` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_write_msh(mesh: *const MkMesh, path: *const c_char) -> MkStatus {
    guard(|| {
        write_msh(&handle(mesh, "mesh")?.0, &path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `mesh` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_vertex_count(mesh: *const MkMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.vertex_count())
}

/// # Safety
/// `mesh` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_triangle_count(mesh: *const MkMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.triangle_count())
}

/// Total area; NaN for NULL.
///
/// # Safety
/// `mesh` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_area(mesh: *const MkMesh) -> f64 {
    mesh.as_ref().map_or(f64::NAN, |m| m.0.area())
}

/// # Safety
/// `mesh` is a live handle; `out_xy` holds `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_vertices(mesh: *const MkMesh, out_xy: *mut f64, capacity: usize) -> MkStatus {
    guard(|| write_points(handle(mesh, "mesh")?.0.vertices(), out_xy, capacity))
}

/// Vertex indices, three per triangle, counter-clockwise.
///
/// # Safety
/// `mesh` is a live handle; `out` holds `capacity` integers.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_triangles(mesh: *const MkMesh, out: *mut u32, capacity: usize) -> MkStatus {
    guard(|| {
        let tris = handle(mesh, "mesh")?.0.triangles();
        if 3 * tris.len() > capacity {
            return Err(Failure::new(
                MkStatus::BufferTooSmall,
                format!("buffer holds {capacity} indices, {} needed", 3 * tris.len()),
            ));
        }
        if !tris.is_empty() && out.is_null() {
            return Err(Failure::new(MkStatus::NullPointer, "output buffer is null"));
        }
        for (k, &i) in tris.iter().flatten().enumerate() {
            *out.add(k) = u32::try_from(i).map_err(|_| Failure::new(MkStatus::InvalidInput, "vertex index exceeds 32 bits"))?;
        }
        Ok(())
    })
}

/// Quality report against the smallest expected gradient length.
///
/// # Safety
/// `mesh` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_quality(mesh: *const MkMesh, gradient_length: f64, out: *mut MkMeshQuality) -> MkStatus {
    guard(|| {
        let r = quality_report(&handle(mesh, "mesh")?.0, gradient_length);
        let out = out
            .as_mut()
            .ok_or_else(|| Failure::new(MkStatus::NullPointer, "output pointer is null"))?;
        *out = MkMeshQuality {
            min_edge_ratio: r.min_edge_ratio,
            max_edge_length: r.max_edge_length,
            min_angle: r.min_angle,
            n_inverted: r.n_inverted,
            passed: r.passed,
        };
        Ok(())
    })
}

/// # Safety
/// `mesh` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mk_mesh_free(mesh: *mut MkMesh) {
    free(mesh)
}

fn parse_model(text: &str) -> FfiResult<ReactionModel> {
    let model: ReactionModel = serde_json::from_str(text).map_err(|e| Failure::new(MkStatus::Parse, e.to_string()))?;
    model.validate()?;
    Ok(model)
}

/// Reaction model from its JSON text.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_model_from_json(json: *const c_char, out: *mut *mut MkModel) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        boxed(slot, MkModel(parse_model(str_arg(json)?)?));
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_model_read_json(path: *const c_char, out: *mut *mut MkModel) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let path = path_arg(path)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Failure::new(MkStatus::Io, format!("{}: {e}", path.display())))?;
        let model = parse_model(&text).map_err(|f| Failure::new(f.status, format!("{}: {}", path.display(), f.message)))?;
        boxed(slot, MkModel(model));
        Ok(())
    })
}

/// # Safety
/// `model` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_model_species(model: *const MkModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_species())
}

/// # Safety
/// `model` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mk_model_free(model: *mut MkModel) {
    free(model)
}

/// Runs `model` on the static `mesh` from the homogeneous steady state with
/// seeded relative noise, zero-flux boundaries, up to `t_end` with step
/// `dt`, and returns the final state.
///
/// # Safety
/// `mesh` and `model` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn mk_simulate(
    mesh: *const MkMesh,
    model: *const MkModel,
    t_end: f64,
    dt: f64,
    noise: f64,
    seed: u64,
    out: *mut *mut MkState,
) -> MkStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let mesh = handle(mesh, "mesh")?.0.clone();
        let model = &handle(model, "model")?.0;
        let initial = InitialCondition { values: None, noise }.build(mesh, model, seed, 0.0)?;
        let opts = SimulationOptions::new(Schedule {
            t_end,
            dt,
            output_stride: usize::MAX,
        });
        let traj = simulate(model, &BoundaryConditions::zero_flux(), initial, &opts)?;
        boxed(slot, MkState(traj.last().clone()));
        Ok(())
    })
}

/// # Safety
/// `state` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_state_species(state: *const MkState) -> usize {
    state.as_ref().map_or(0, |s| s.0.n_species())
}

/// # Safety
/// `state` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mk_state_time(state: *const MkState) -> f64 {
    state.as_ref().map_or(f64::NAN, |s| s.0.t())
}

/// Nodal values of one species, one per mesh vertex.
///
/// # Safety
/// `state` is a live handle; `out` holds `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn mk_state_values(state: *const MkState, species: usize, out: *mut f64, capacity: usize) -> MkStatus {
    guard(|| {
        let s = &handle(state, "state")?.0;
        if species >= s.n_species() {
            return Err(Failure::new(
                MkStatus::InvalidInput,
                format!("species {species} out of range for {} species", s.n_species()),
            ));
        }
        write_f64s(s.species(species).iter().copied(), out, capacity)
    })
}

/// # Safety
/// `state` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mk_state_write_csv(state: *const MkState, path: *const c_char) -> MkStatus {
    guard(|| {
        let s = &handle(state, "state")?.0;
        let path = path_arg(path)?;
        std::fs::write(&path, s.to_csv_string()).map_err(|e| Failure::new(MkStatus::Io, format!("{}: {e}", path.display())))
    })
}

/// # Safety
/// `state` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mk_state_free(state: *mut MkState) {
    free(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_status_codes() {
        assert_eq!(Failure::from(Error::Mapping("x".into())).status, MkStatus::Mapping);
        assert_eq!(Failure::from(Error::Singular("x".into())).status, MkStatus::Numerical);
        assert_eq!(Failure::from(Error::Inverted("x".into())).status, MkStatus::Geometry);
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), MkStatus::Panic);
        let msg = unsafe { CStr::from_ptr(mk_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }

    #[test]
    fn version_matches_manifest() {
        let v = unsafe { CStr::from_ptr(mk_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
