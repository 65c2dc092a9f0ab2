#ifndef MORPHOKIT_H
#define MORPHOKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
enum MkStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  MK_STATUS_OK = 0,
  MK_STATUS_NULL_POINTER = 1,
  MK_STATUS_INVALID_INPUT = 2,
  MK_STATUS_IO = 3,
  MK_STATUS_PARSE = 4,
  MK_STATUS_GEOMETRY = 5,
  MK_STATUS_MAPPING = 6,
  MK_STATUS_NUMERICAL = 7,
  MK_STATUS_BUFFER_TOO_SMALL = 8,
  MK_STATUS_PANIC = 9,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum MkStatus MkStatus;
#else
typedef int32_t MkStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// Mapping method; `Auto` escalates normal, reverse normal and diffusion
// on closed curves and uses uniform on open ones.
enum MkMethod
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  MK_METHOD_AUTO = 0,
  MK_METHOD_MINIMAL_DISTANCE = 1,
  MK_METHOD_UNIFORM = 2,
  MK_METHOD_NORMAL = 3,
  MK_METHOD_REVERSE_NORMAL = 4,
  MK_METHOD_DIFFUSION = 5,
  MK_METHOD_REVERSE_DIFFUSION = 6,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum MkMethod MkMethod;
#else
typedef int32_t MkMethod;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

// Closed or open boundary polyline.
typedef struct MkCurve MkCurve;

// Displacement vectors sampled on a curve.
typedef struct MkField MkField;

// Triangle mesh.
typedef struct MkMesh MkMesh;

// Species, diffusion coefficients and reaction terms.
typedef struct MkModel MkModel;

// Concentrations on a mesh at one time.
typedef struct MkState MkState;

typedef struct MkFieldQuality {
  size_t crossing_count;
  double unmapped_fraction;
  double max_stretch;
} MkFieldQuality;

typedef struct MkMeshQuality {
  double min_edge_ratio;
  double max_edge_length;
  double min_angle;
  size_t n_inverted;
  bool passed;
} MkMeshQuality;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mk_version(void);

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *mk_last_error(void);

// # Safety
// `xy` holds `2 * n` doubles; `out` is writable.
MkStatus mk_curve_new(const double *xy, size_t n, bool closed, struct MkCurve **out);

// # Safety
// `path` is a NUL-terminated string; `out` is writable.
MkStatus mk_curve_read_csv(const char *path, struct MkCurve **out);

// # Safety
// `curve` is a live handle; `path` is a NUL-terminated string.
MkStatus mk_curve_write_csv(const struct MkCurve *curve, const char *path);

// Number of points; 0 for NULL.
//
// # Safety
// `curve` is NULL or a live handle.
size_t mk_curve_len(const struct MkCurve *curve);

// Polyline length; NaN for NULL.
//
// # Safety
// `curve` is NULL or a live handle.
double mk_curve_length(const struct MkCurve *curve);

// # Safety
// `curve` is NULL or a live handle.
bool mk_curve_is_closed(const struct MkCurve *curve);

// Copies the points into `out_xy`, which holds `capacity` doubles.
//
// # Safety
// `curve` is a live handle; `out_xy` holds `capacity` doubles.
MkStatus mk_curve_points(const struct MkCurve *curve, double *out_xy, size_t capacity);

// Equal-chord resampling to `n` points.
//
// # Safety
// `curve` is a live handle; `out` is writable.
MkStatus mk_curve_resample(const struct MkCurve *curve, size_t n, struct MkCurve **out);

// # Safety
// `curve` is NULL or a handle not yet freed.
void mk_curve_free(struct MkCurve *curve);

// Displacement field from `c1` to `c2` with `n_points` samples per curve.
// `quality` may be NULL.
//
// # Safety
// `c1` and `c2` are live handles; `out` is writable; `quality` is NULL or
// writable.
MkStatus mk_map_curves(const struct MkCurve *c1,
                       const struct MkCurve *c2,
                       MkMethod method_,
                       size_t n_points,
                       bool prescale,
                       struct MkField **out,
                       struct MkFieldQuality *quality);

// # Safety
// `path` is a NUL-terminated string; `out` is writable.
MkStatus mk_field_read_csv(const char *path, struct MkField **out);

// # Safety
// `field` is a live handle; `path` is a NUL-terminated string.
MkStatus mk_field_write_csv(const struct MkField *field, const char *path);

// Number of vectors; 0 for NULL.
//
// # Safety
// `field` is NULL or a live handle.
size_t mk_field_len(const struct MkField *field);

// Method that produced the field; `MK_METHOD_AUTO` for NULL or TPS.
//
// # Safety
// `field` is NULL or a live handle.
MkMethod mk_field_method(const struct MkField *field);

// # Safety
// `field` is a live handle; `out_xy` holds `capacity` doubles.
MkStatus mk_field_sources(const struct MkField *field, double *out_xy, size_t capacity);

// # Safety
// `field` is a live handle; `out_xy` holds `capacity` doubles.
MkStatus mk_field_vectors(const struct MkField *field, double *out_xy, size_t capacity);

// # Safety
// `field` is NULL or a handle not yet freed.
void mk_field_free(struct MkField *field);

// Thin-plate-spline displacement at `m` query points from `n` landmark
// pairs `src -> dst`. `out_xy` receives `2 * m` doubles.
//
// # Safety
// `src_xy` and `dst_xy` hold `2 * n` doubles, `query_xy` and `out_xy`
// hold `2 * m`.
MkStatus mk_tps_displace(const double *src_xy,
                         const double *dst_xy,
                         size_t n,
                         const double *query_xy,
                         size_t m,
                         double *out_xy);

// Quality triangulation of the region bounded by `outer` with target edge
// length `h` and minimum angle in degrees.
//
// # Safety
// `outer` is a live handle; `out` is writable.
MkStatus mk_mesh_triangulate(const struct MkCurve *outer,
                             double h,
                             double min_angle,
                             struct MkMesh **out);

// # Safety
// `path` is a NUL-terminated string; `out` is writable.
MkStatus mk_mesh_read_msh(const char *path, struct MkMesh **out);

// # Safety
// `mesh` is a live handle; `path` is a NUL-terminated string.
MkStatus mk_mesh_write_msh(const struct MkMesh *mesh, const char *path);

// # Safety
// `mesh` is NULL or a live handle.
size_t mk_mesh_vertex_count(const struct MkMesh *mesh);

// # Safety
// `mesh` is NULL or a live handle.
size_t mk_mesh_triangle_count(const struct MkMesh *mesh);

// Total area; NaN for NULL.
//
// # Safety
// `mesh` is NULL or a live handle.
double mk_mesh_area(const struct MkMesh *mesh);

// # Safety
// `mesh` is a live handle; `out_xy` holds `capacity` doubles.
MkStatus mk_mesh_vertices(const struct MkMesh *mesh, double *out_xy, size_t capacity);

// Vertex indices, three per triangle, counter-clockwise.
//
// # Safety
// `mesh` is a live handle; `out` holds `capacity` integers.
MkStatus mk_mesh_triangles(const struct MkMesh *mesh, uint32_t *out, size_t capacity);

// Quality report against the smallest expected gradient length.
//
// # Safety
// `mesh` is a live handle; `out` is writable.
MkStatus mk_mesh_quality(const struct MkMesh *mesh,
                         double gradient_length,
                         struct MkMeshQuality *out);

// # Safety
// `mesh` is NULL or a handle not yet freed.
void mk_mesh_free(struct MkMesh *mesh);

// Reaction model from its JSON text.
//
// # Safety
// `json` is a NUL-terminated string; `out` is writable.
MkStatus mk_model_from_json(const char *json, struct MkModel **out);

// # Safety
// `path` is a NUL-terminated string; `out` is writable.
MkStatus mk_model_read_json(const char *path, struct MkModel **out);

// # Safety
// `model` is NULL or a live handle.
size_t mk_model_species(const struct MkModel *model);

// # Safety
// `model` is NULL or a handle not yet freed.
void mk_model_free(struct MkModel *model);

// Runs `model` on the static `mesh` from the homogeneous steady state with
// seeded relative noise, zero-flux boundaries, up to `t_end` with step
// `dt`, and returns the final state.
//
// # Safety
// `mesh` and `model` are live handles; `out` is writable.
MkStatus mk_simulate(const struct MkMesh *mesh,
                     const struct MkModel *model,
                     double t_end,
                     double dt,
                     double noise,
                     uint64_t seed,
                     struct MkState **out);

// # Safety
// `state` is NULL or a live handle.
size_t mk_state_species(const struct MkState *state);

// # Safety
// `state` is NULL or a live handle.
double mk_state_time(const struct MkState *state);

// Nodal values of one species, one per mesh vertex.
//
// # Safety
// `state` is a live handle; `out` holds `capacity` doubles.
MkStatus mk_state_values(const struct MkState *state, size_t species, double *out, size_t capacity);

// # Safety
// `state` is a live handle; `path` is a NUL-terminated string.
MkStatus mk_state_write_csv(const struct MkState *state, const char *path);

// # Safety
// `state` is NULL or a handle not yet freed.
void mk_state_free(struct MkState *state);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MORPHOKIT_H */
