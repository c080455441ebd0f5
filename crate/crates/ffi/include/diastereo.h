#ifndef DIASTEREO_H
#define DIASTEREO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. One code per library failure, plus the
 * boundary's own conditions.
 */
typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_ARGUMENT = 2,
  DS_STATUS_PANIC = 3,
  DS_STATUS_IO = 10,
  DS_STATUS_UNKNOWN_MAGIC = 11,
  DS_STATUS_TRUNCATED_FILE = 12,
  DS_STATUS_HEADER_FIELD_MISSING = 13,
  DS_STATUS_RANGE_ERROR = 14,
  DS_STATUS_INVALID_RASTER = 15,
  DS_STATUS_JSON = 16,
  DS_STATUS_SINGULAR_HOMOGRAPHY = 20,
  DS_STATUS_POINT_AT_INFINITY = 21,
  DS_STATUS_DEGENERATE_CONFIGURATION = 22,
  DS_STATUS_DEGENERATE_GEOMETRY = 23,
  DS_STATUS_DENOMINATOR_NEAR_ZERO = 30,
  DS_STATUS_NO_CONVERGENCE = 31,
  DS_STATUS_SINGULAR_JACOBIAN = 32,
  DS_STATUS_MISSING_COEFFICIENT = 33,
  DS_STATUS_MALFORMED_NUMBER = 34,
  DS_STATUS_MALFORMED_LINE = 40,
  DS_STATUS_EMPTY_FILE = 41,
  DS_STATUS_IMAGE_TOO_SMALL = 42,
  DS_STATUS_EMPTY_MATCH_SET = 43,
  DS_STATUS_MATCH_FAILURE = 44,
  DS_STATUS_NO_GEOTRANSFORM = 50,
  DS_STATUS_BAD_CRS = 51,
  DS_STATUS_EMPTY_OVERLAP = 52,
  DS_STATUS_BAD_DISPARITY_RANGE = 53,
  DS_STATUS_BIPOLAR_DISPARITY = 54,
  DS_STATUS_EMPTY_INPUT = 55,
  DS_STATUS_OUT_OF_BOUNDS = 56,
  DS_STATUS_GRID_MISMATCH = 60,
  DS_STATUS_FRAME_MISMATCH = 61,
  DS_STATUS_NO_EVALUABLE_PIXELS = 62,
  DS_STATUS_EMPTY_GROUP = 63,
  DS_STATUS_INSUFFICIENT_PAIRS = 64,
  DS_STATUS_HASH_MISMATCH = 70,
} DsStatus;

/**
 * Opaque raster handle.
 */
typedef struct DsRaster DsRaster;

/**
 * Opaque rectification geometry handle.
 */
typedef struct DsRectGeometry DsRectGeometry;

/**
 * Opaque RPC camera handle.
 */
typedef struct DsRpc DsRpc;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ds_last_error_message(void);

/**
 * Stable name of a status code, e.g. "NoConvergence". Static storage.
 */
const char *ds_status_name(enum DsStatus status);

/**
 * Library version string. Static storage.
 */
const char *ds_version(void);

/**
 * Copies `width * height * channels` interleaved samples (NaN = nodata).
 */
enum DsStatus ds_raster_new(uint32_t width,
                            uint32_t height,
                            uint32_t channels,
                            const float *data,
                            struct DsRaster **out);

/**
 * Reads DSRAST, PFM or PGM, detected from the file contents.
 */
enum DsStatus ds_raster_read(const char *path, struct DsRaster **out);

/**
 * Writes in the format implied by the extension (`.pfm`, `.pgm`, else DSRAST).
 */
enum DsStatus ds_raster_write(const struct DsRaster *raster, const char *path);

uint32_t ds_raster_width(const struct DsRaster *raster);

uint32_t ds_raster_height(const struct DsRaster *raster);

uint32_t ds_raster_channels(const struct DsRaster *raster);

/**
 * Borrowed pointer to the interleaved samples; valid while the handle lives.
 */
const float *ds_raster_data(const struct DsRaster *raster);

/**
 * Writes the six GDAL-order coefficients; `DS_STATUS_NO_GEOTRANSFORM` if
 * the raster has none.
 */
enum DsStatus ds_raster_geotransform(const struct DsRaster *raster, double *out);

void ds_raster_free(struct DsRaster *raster);

/**
 * Reads a JSON sidecar or an RPC00B keyword file.
 */
enum DsStatus ds_rpc_read(const char *path, struct DsRpc **out);

enum DsStatus ds_rpc_project(const struct DsRpc *rpc,
                             double lon,
                             double lat,
                             double h,
                             double *col,
                             double *row);

/**
 * Ground point seen at pixel (col, row) at altitude `h`.
 */
enum DsStatus ds_rpc_localize(const struct DsRpc *rpc,
                              double col,
                              double row,
                              double h,
                              double *lon,
                              double *lat);

void ds_rpc_free(struct DsRpc *rpc);

/**
 * Rectifies (`left`, `right`) with automatic matching. `rect_left` and
 * `rect_right` may be null when the images are not wanted.
 */
enum DsStatus ds_rectify(const struct DsRaster *left,
                         const struct DsRpc *rpc_left,
                         const struct DsRaster *right,
                         const struct DsRpc *rpc_right,
                         double z_avg,
                         struct DsRectGeometry **geometry,
                         struct DsRaster **rect_left,
                         struct DsRaster **rect_right);

/**
 * Whether the second image became the rectified left view.
 */
bool ds_rect_swapped(const struct DsRectGeometry *geometry);

/**
 * Row-major 3×3 left (`which` = 0) or right (`which` = 1) homography.
 */
enum DsStatus ds_rect_homography(const struct DsRectGeometry *geometry, int which, double *out);

void ds_rect_free(struct DsRectGeometry *geometry);

/**
 * Ground-truth disparity from a georeferenced DSM. Cameras in the order
 * given to `ds_rectify`.
 */
enum DsStatus ds_gt_disparity(const struct DsRectGeometry *geometry,
                              const struct DsRaster *dsm,
                              const struct DsRpc *rpc_a,
                              const struct DsRpc *rpc_b,
                              struct DsRaster **out);

enum DsStatus ds_block_match(const struct DsRaster *rect_left,
                             const struct DsRaster *rect_right,
                             double d_min,
                             double d_max,
                             uint32_t window,
                             struct DsRaster **out);

/**
 * Two-channel raster: altitude and residual in pixels.
 */
enum DsStatus ds_triangulate(const struct DsRaster *disparity,
                             const struct DsRectGeometry *geometry,
                             const struct DsRpc *rpc_a,
                             const struct DsRpc *rpc_b,
                             double h_min,
                             double h_max,
                             struct DsRaster **out);

/**
 * `aggregator`: 0 median, 1 max, 2 mean.
 */
enum DsStatus ds_grid_dsm(const struct DsRaster *altitude,
                          const struct DsRectGeometry *geometry,
                          const struct DsRpc *rpc_a,
                          const struct DsRpc *rpc_b,
                          double cell,
                          int aggregator,
                          struct DsRaster **out);

/**
 * Altitude errors of `pred` against `reference`; `vegetation` may be null.
 * Any of the outputs may be null.
 */
enum DsStatus ds_dsm_mae(const struct DsRaster *pred,
                         const struct DsRaster *reference,
                         const struct DsRaster *vegetation,
                         uint32_t margin,
                         double *mae,
                         double *rmse,
                         double *completeness);

/**
 * Runs the command line with `argv[0..argc]` and returns its exit code
 * (1 on bad arguments to this function).
 */
int ds_cli_run(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIASTEREO_H */
