#ifndef BEAMLOC_H
#define BEAMLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum BeamlocStatus {
  BEAMLOC_STATUS_OK = 0,
  BEAMLOC_STATUS_NULL_POINTER = 1,
  BEAMLOC_STATUS_INVALID_STRING = 2,
  BEAMLOC_STATUS_INVALID_PARAMETER = 3,
  BEAMLOC_STATUS_CONFIG = 4,
  BEAMLOC_STATUS_IO = 5,
  BEAMLOC_STATUS_GEOMETRY = 6,
  BEAMLOC_STATUS_COVERAGE = 7,
  BEAMLOC_STATUS_SOLVER = 8,
  BEAMLOC_STATUS_OUT_OF_RANGE = 9,
  BEAMLOC_STATUS_PANIC = 10,
} BeamlocStatus;

typedef enum BeamlocScheme {
  BEAMLOC_SCHEME_TMCB = 0,
  BEAMLOC_SCHEME_UVBHS_EPA = 1,
  BEAMLOC_SCHEME_FBHCA = 2,
} BeamlocScheme;

// Opaque scenario configuration.
typedef struct BeamlocConfig BeamlocConfig;

// Opaque sweep result.
typedef struct BeamlocResult BeamlocResult;

// One aggregated sweep row.
typedef struct BeamlocRow {
  double sweep_value;
  enum BeamlocScheme scheme;
  uint32_t n_pos;
  // NaN when no (user, snapshot) pair was covered.
  double avg_crlb_m;
  uint64_t covered_users;
  uint64_t excluded_users;
  uint64_t runtime_ms;
} BeamlocRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null.
//
// The pointer stays valid until the next `beamloc_*` call on the same thread.
const char *beamloc_last_error(void);

// Library version as a static NUL-terminated string.
const char *beamloc_version(void);

// Configuration with every default applied. Never null.
struct BeamlocConfig *beamloc_config_default(void);

// Loads and validates a TOML file into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum BeamlocStatus beamloc_config_load(const char *path, struct BeamlocConfig **out);

// # Safety
// `cfg` must come from this library and not be used afterwards. Null is ignored.
void beamloc_config_free(struct BeamlocConfig *cfg);

// # Safety
// `cfg` must be a live handle.
enum BeamlocStatus beamloc_config_set_seed(struct BeamlocConfig *cfg, uint64_t seed);

// Sets the user count `J` and the snapshot count `S`.
//
// # Safety
// `cfg` must be a live handle.
enum BeamlocStatus beamloc_config_set_population(struct BeamlocConfig *cfg,
                                                 size_t users,
                                                 size_t snapshots);

// Replaces the orbit heights (km) of the height sweep.
//
// # Safety
// `cfg` must be a live handle and `heights_km` point to `len` values.
enum BeamlocStatus beamloc_config_set_heights(struct BeamlocConfig *cfg,
                                              const double *heights_km,
                                              size_t len);

// Positioning satellites per user for the height sweep and Table II.
//
// # Safety
// `cfg` must be a live handle.
enum BeamlocStatus beamloc_config_set_positioning_sats(struct BeamlocConfig *cfg, size_t n_pos);

// Orbit-height sweep. `threads = 0` uses every core.
//
// # Safety
// `cfg` must be a live handle and `out` writable.
enum BeamlocStatus beamloc_run_height_sweep(const struct BeamlocConfig *cfg,
                                            size_t threads,
                                            struct BeamlocResult **out);

// Snapshot sweep over every configured positioning-satellite count.
//
// # Safety
// `cfg` must be a live handle and `out` writable.
enum BeamlocStatus beamloc_run_snapshot_sweep(const struct BeamlocConfig *cfg,
                                              size_t threads,
                                              struct BeamlocResult **out);

// Number of rows in a result; 0 for null.
//
// # Safety
// `res` must be a live handle or null.
size_t beamloc_result_len(const struct BeamlocResult *res);

// Copies row `index` into `*out`.
//
// # Safety
// `res` must be a live handle and `out` writable.
enum BeamlocStatus beamloc_result_row(const struct BeamlocResult *res,
                                      size_t index,
                                      struct BeamlocRow *out);

// Writes the result in the CLI's CSV format.
//
// # Safety
// `res` must be a live handle and `path` a NUL-terminated string.
enum BeamlocStatus beamloc_result_write_csv(const struct BeamlocResult *res, const char *path);

// # Safety
// `res` must come from this library and not be used afterwards. Null is ignored.
void beamloc_result_free(struct BeamlocResult *res);

// TDOA position bound in metres for one receiver.
//
// `ue` holds 3 ECEF coordinates in km, `sats` holds `count` satellites as
// consecutive xyz triples in km and `toa_variance_s2` the TOA variance of
// each satellite in s². `reference` selects the reference satellite.
//
// # Safety
// Pointers must reference arrays of the stated sizes; `out_m` must be writable.
enum BeamlocStatus beamloc_tdoa_crlb(const double *ue,
                                     const double *sats,
                                     const double *toa_variance_s2,
                                     size_t count,
                                     size_t reference,
                                     double *out_m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BEAMLOC_H */
