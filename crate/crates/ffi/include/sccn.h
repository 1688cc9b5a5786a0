#ifndef SCCN_H
#define SCCN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SccnStatus {
  SCCN_STATUS_OK = 0,
  SCCN_STATUS_NULL_POINTER = 1,
  SCCN_STATUS_VALIDATION = 2,
  SCCN_STATUS_NUMERIC = 3,
  SCCN_STATUS_INVALID_ARGUMENT = 4,
  SCCN_STATUS_PANIC = 5,
  SCCN_STATUS_IO = 6,
} SccnStatus;

// Detection configuration.
typedef struct SccnConfig SccnConfig;

// Voxel coordinates of one region.
typedef struct SccnGrid SccnGrid;

// Result of a detection run.
typedef struct SccnReport SccnReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *sccn_version(void);

// Message of the last failed call on this thread, empty if none. Valid
// until the next failing call on the same thread.
const char *sccn_last_error(void);

// Creates a configuration with default values.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum SccnStatus sccn_config_new(struct SccnConfig **out);

// Sets one `key = value` entry, with the keys of the config file format.
//
// # Safety
// `cfg` must come from [`sccn_config_new`]; `key` and `value` must be
// NUL-terminated strings.
enum SccnStatus sccn_config_set(struct SccnConfig *cfg, const char *key, const char *value);

// # Safety
// `cfg` must be null or come from [`sccn_config_new`], freed at most once.
void sccn_config_free(struct SccnConfig *cfg);

// Region from `n` voxels: ids in `ids`, coordinates as `n` `(x, y, z)`
// triples in `xyz`. Voxels are sorted by id and renumbered `0..n`.
//
// # Safety
// `region` must be NUL-terminated; `ids` must hold `n` and `xyz` `3 n`
// values; `out` must be writable.
enum SccnStatus sccn_grid_new(const char *region,
                              const uint32_t *ids,
                              const int32_t *xyz,
                              size_t n,
                              struct SccnGrid **out);

// Full `nx x ny x nz` box, ids in x-fastest order.
//
// # Safety
// `region` must be NUL-terminated; `out` must be writable.
enum SccnStatus sccn_grid_box(const char *region,
                              size_t nx,
                              size_t ny,
                              size_t nz,
                              struct SccnGrid **out);

// # Safety
// `grid` must come from this library; `out` must be writable.
enum SccnStatus sccn_grid_len(const struct SccnGrid *grid, size_t *out);

// # Safety
// `grid` must be null or come from this library, freed at most once.
void sccn_grid_free(struct SccnGrid *grid);

// Bipartite detection on a precomputed screened inference matrix `w` and
// edge statistics `z`, both `n x m` row-major with `n` the size of `a` and
// `m` the size of `b`. The null shuffles edges.
//
// # Safety
// `w` and `z` must hold `n m` values; handles must come from this library;
// `out` must be writable.
enum SccnStatus sccn_detect_matrix(const double *w,
                                   const double *z,
                                   size_t n,
                                   size_t m,
                                   const struct SccnGrid *a,
                                   const struct SccnGrid *b,
                                   const struct SccnConfig *cfg,
                                   struct SccnReport **out);

// Single-region detection on a symmetric `n x n` matrix with a zero
// diagonal.
//
// # Safety
// As for [`sccn_detect_matrix`] with `m = n`.
enum SccnStatus sccn_detect_within(const double *w,
                                   const double *z,
                                   size_t n,
                                   const struct SccnGrid *grid,
                                   const struct SccnConfig *cfg,
                                   struct SccnReport **out);

// Number of sub-areas on each side.
//
// # Safety
// `report` must come from this library; `c` and `d` must be writable.
enum SccnStatus sccn_report_shape(const struct SccnReport *report, size_t *c, size_t *d);

// Number of significant sub-area pairs.
//
// # Safety
// `report` must come from this library; `out` must be writable.
enum SccnStatus sccn_report_significant_count(const struct SccnReport *report, size_t *out);

// Copies the labels of side `side` (0 for the rows, 1 for the columns)
// into `labels`, which must have exactly as many slots as that side has
// voxels.
//
// # Safety
// `report` must come from this library; `labels` must hold `len` values.
enum SccnStatus sccn_report_labels(const struct SccnReport *report,
                                   uint32_t side,
                                   uint32_t *labels,
                                   size_t len);

// The report as JSON. The string is owned by the report.
//
// # Safety
// `report` must come from this library; `out` must be writable.
enum SccnStatus sccn_report_json(const struct SccnReport *report, const char **out);

// # Safety
// `report` must be null or come from this library, freed at most once.
void sccn_report_free(struct SccnReport *report);

// Benjamini-Hochberg step-up at level `q`; `mask[k]` is set to 1 for
// rejected hypotheses and 0 otherwise.
//
// # Safety
// `p` and `mask` must each hold `len` values.
enum SccnStatus sccn_bh_fdr(const double *p, size_t len, double q, uint8_t *mask);

// Description length of the block `u x v` of the `n x m` statistic
// matrix `z`, with additive entropy constant `c_mdl`.
//
// # Safety
// `u`, `v` and `z` must hold `nu`, `nv` and `n m` values; `out` must be
// writable.
enum SccnStatus sccn_mdl_statistic(const size_t *u,
                                   size_t nu,
                                   const size_t *v,
                                   size_t nv,
                                   const double *z,
                                   size_t n,
                                   size_t m,
                                   double c_mdl,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCCN_H */
