#ifndef OCCLABEL_H
#define OCCLABEL_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Call outcome. Values 1 to 3 match the command-line exit codes.
typedef enum OcclabelStatus {
  OCCLABEL_STATUS_OK = 0,
  // Input failed validation (bad file contents, bad parameters).
  OCCLABEL_STATUS_VALIDATION = 1,
  OCCLABEL_STATUS_IO = 2,
  // An internal invariant was violated.
  OCCLABEL_STATUS_INTERNAL = 3,
  OCCLABEL_STATUS_NULL_ARGUMENT = 4,
  // A caller-provided buffer is too small; the needed size was written.
  OCCLABEL_STATUS_BUFFER_TOO_SMALL = 5,
  OCCLABEL_STATUS_PANIC = 6,
} OcclabelStatus;

typedef enum OcclabelMode {
  OCCLABEL_MODE_PER_FRAME = 0,
  OCCLABEL_MODE_AGGREGATE_NO_DYNAMICS = 1,
  OCCLABEL_MODE_FULL = 2,
} OcclabelMode;

typedef struct OcclabelConfig OcclabelConfig;

// Labels plus visibility for one frame.
typedef struct OcclabelGrid OcclabelGrid;

typedef struct OcclabelRun OcclabelRun;

// Grid placement: cell (0,0,0) starts at `origin`, cells are `resolution`
// meters wide.
typedef struct OcclabelGridSpec {
  double origin[3];
  double resolution;
  uint32_t dims[3];
} OcclabelGridSpec;

// IoU summary. Metrics with an empty denominator are NaN.
typedef struct OcclabelIou {
  double miou;
  double geometric_iou;
} OcclabelIou;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *occlabel_version(void);

// Message for the last failed call on this thread; empty after a success.
// Valid until the next call on this thread.
const char *occlabel_last_error(void);

// Writes the default label grid (80 m x 80 m x 6.4 m at 0.4 m).
//
// # Safety
// `out` must be valid for writes.
enum OcclabelStatus occlabel_default_grid_spec(struct OcclabelGridSpec *out);

// Reads a `.occ` grid file into a new handle.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writes.
enum OcclabelStatus occlabel_grid_read(const char *path, struct OcclabelGrid **out);

// # Safety
// `grid` must come from this library; `path` must be NUL-terminated.
enum OcclabelStatus occlabel_grid_write(const struct OcclabelGrid *grid, const char *path);

// # Safety
// `grid` must come from this library and not be used afterwards. Null is
// ignored.
void occlabel_grid_free(struct OcclabelGrid *grid);

// # Safety
// `grid` must be a live handle; `out` must be valid for writes.
enum OcclabelStatus occlabel_grid_spec(const struct OcclabelGrid *grid,
                                       struct OcclabelGridSpec *out);

// Borrows the label plane (x-major, z fastest). The pointer lives as long
// as the handle.
//
// # Safety
// `grid` must be a live handle; `data` and `len` must be valid for writes.
enum OcclabelStatus occlabel_grid_labels(const struct OcclabelGrid *grid,
                                         const uint8_t **data,
                                         size_t *len);

// Borrows the visibility plane: 0 unobserved, 1 free, 2 occupied.
//
// # Safety
// As for [`occlabel_grid_labels`].
enum OcclabelStatus occlabel_grid_visibility(const struct OcclabelGrid *grid,
                                             const uint8_t **data,
                                             size_t *len);

// New config with library defaults.
struct OcclabelConfig *occlabel_config_new(void);

// Loads the `[pipeline]` table of a TOML config file into a new handle.
//
// # Safety
// `path` must be NUL-terminated; `out` must be valid for writes.
enum OcclabelStatus occlabel_config_from_toml(const char *path, struct OcclabelConfig **out);

// # Safety
// `config` must come from this library and not be used afterwards.
void occlabel_config_free(struct OcclabelConfig *config);

// `mode` is an `OcclabelMode` value.
//
// # Safety
// `config` must be a live handle.
enum OcclabelStatus occlabel_config_set_mode(struct OcclabelConfig *config, int32_t mode);

// 0 uses all cores.
//
// # Safety
// `config` must be a live handle.
enum OcclabelStatus occlabel_config_set_workers(struct OcclabelConfig *config, uint32_t workers);

// Sets both confidence filters; `min_points` 0 disables density pruning.
//
// # Safety
// `config` must be a live handle.
enum OcclabelStatus occlabel_config_set_filters(struct OcclabelConfig *config,
                                                bool ray_consistency,
                                                uint32_t min_points);

// # Safety
// `config` must be a live handle; `spec` must be readable.
enum OcclabelStatus occlabel_config_set_grid(struct OcclabelConfig *config,
                                             const struct OcclabelGridSpec *spec);

// Loads, validates and runs a manifest with the default class table.
//
// # Safety
// `manifest_path` must be NUL-terminated; `config` a live handle; `out`
// valid for writes.
enum OcclabelStatus occlabel_run_manifest(const char *manifest_path,
                                          const struct OcclabelConfig *config,
                                          struct OcclabelRun **out);

// # Safety
// `run` must be a live handle or null (returns 0).
size_t occlabel_run_frame_count(const struct OcclabelRun *run);

// Copies frame `index` of a run into a new grid handle.
//
// # Safety
// `run` must be a live handle; `out` valid for writes.
enum OcclabelStatus occlabel_run_frame(const struct OcclabelRun *run,
                                       size_t index,
                                       struct OcclabelGrid **out);

// Writes `frame_NNNN.occ` files into `dir`, creating it if needed.
//
// # Safety
// `run` must be a live handle; `dir` NUL-terminated.
enum OcclabelStatus occlabel_run_write(const struct OcclabelRun *run, const char *dir);

// # Safety
// `run` must come from this library and not be used afterwards.
void occlabel_run_free(struct OcclabelRun *run);

// IoU of `pred` against `gt` on the cells `gt`'s visibility plane observes.
//
// # Safety
// `pred` and `gt` must be live handles; `out` valid for writes.
enum OcclabelStatus occlabel_eval_iou(const struct OcclabelGrid *pred,
                                      const struct OcclabelGrid *gt,
                                      struct OcclabelIou *out);

// Cells crossed by the segment `origin -> endpoint`, in order, as
// `(x, y, z)` triples. `capacity` counts cells. The number of cells is
// always written to `len`; if it exceeds `capacity`, nothing else is
// written and `BufferTooSmall` is returned.
//
// # Safety
// `origin` and `endpoint` must point to 3 doubles, `spec` be readable,
// `cells` writable for `3 * capacity` values (may be null when `capacity`
// is 0), `len` writable.
enum OcclabelStatus occlabel_traverse_ray(const double *origin,
                                          const double *endpoint,
                                          const struct OcclabelGridSpec *spec,
                                          uint32_t *cells,
                                          size_t capacity,
                                          size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCCLABEL_H */
