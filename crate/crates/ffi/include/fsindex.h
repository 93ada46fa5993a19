/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef FSINDEX_H
#define FSINDEX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum FsiStatus {
  FSI_STATUS_OK = 0,
  FSI_STATUS_NULL_ARGUMENT = 1,
  FSI_STATUS_INVALID_UTF8 = 2,
  FSI_STATUS_IO = 3,
  FSI_STATUS_PARSE = 4,
  FSI_STATUS_INVALID = 5,
  FSI_STATUS_DOMAIN = 6,
  FSI_STATUS_OUT_OF_RANGE = 7,
  FSI_STATUS_PANIC = 8,
} FsiStatus;

/**
 * Status of one unit-pair record.
 */
typedef enum FsiPairStatus {
  FSI_PAIR_STATUS_OK = 0,
  FSI_PAIR_STATUS_UNBOUNDED = 1,
  FSI_PAIR_STATUS_SOLVER_FAILURE = 2,
  FSI_PAIR_STATUS_STAGE_UNDEFINED = 3,
  FSI_PAIR_STATUS_MISSING = 4,
} FsiPairStatus;

/**
 * Opaque network handle.
 */
typedef struct FsiNetwork FsiNetwork;

/**
 * Opaque panel handle.
 */
typedef struct FsiPanel FsiPanel;

/**
 * Opaque result handle.
 */
typedef struct FsiResult FsiResult;

/**
 * One unit-pair of the index panel. Undefined values are NaN.
 */
typedef struct FsiRecord {
  /**
   * Later period of the pair; the value is labelled there.
   */
  int64_t period;
  double mi;
  double ec;
  double tc;
  enum FsiPairStatus status;
} FsiRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty when none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *fsi_last_error(void);

/**
 * Load a CSV panel. `dictionary_path` may be null, in which case the
 * default dictionary is used with `stage3_external` (also nullable,
 * defaulting to `share_capital`) as the stage-3 external input.
 *
 * # Safety
 * String arguments must be null or valid NUL-terminated strings; `out`
 * must be writable.
 */
enum FsiStatus fsi_panel_load(const char *path,
                              const char *dictionary_path,
                              const char *stage3_external,
                              struct FsiPanel **out);

/**
 * Generate a synthetic panel with default parameters except those given.
 * `shock` is the input-saving productivity factor from the default shock
 * period on (1 for none).
 *
 * # Safety
 * `out` must be writable.
 */
enum FsiStatus fsi_panel_simulate(uint64_t seed,
                                  size_t n_units,
                                  size_t n_periods,
                                  double shock,
                                  struct FsiPanel **out);

/**
 * Number of units; 0 for a null handle.
 *
 * # Safety
 * `panel` must be null or a live handle.
 */
size_t fsi_panel_n_units(const struct FsiPanel *panel);

/**
 * Number of periods; 0 for a null handle.
 *
 * # Safety
 * `panel` must be null or a live handle.
 */
size_t fsi_panel_n_periods(const struct FsiPanel *panel);

/**
 * Write the panel in the CSV dialect it was read from.
 *
 * # Safety
 * `panel` must be a live handle and `path` a valid string.
 */
enum FsiStatus fsi_panel_write_csv(const struct FsiPanel *panel, const char *path);

/**
 * # Safety
 * `panel` must be null or a handle not yet freed.
 */
void fsi_panel_free(struct FsiPanel *panel);

/**
 * The default three-stage network with the given stage-3 external input.
 *
 * # Safety
 * `stage3_external` must be a valid string and `out` writable.
 */
enum FsiStatus fsi_network_default(const char *stage3_external, struct FsiNetwork **out);

/**
 * Parse a network from its JSON description.
 *
 * # Safety
 * `json` must be a valid string and `out` writable.
 */
enum FsiStatus fsi_network_from_json(const char *json, struct FsiNetwork **out);

/**
 * Number of stages; 0 for a null handle.
 *
 * # Safety
 * `network` must be null or a live handle.
 */
size_t fsi_network_n_stages(const struct FsiNetwork *network);

/**
 * # Safety
 * `network` must be null or a handle not yet freed.
 */
void fsi_network_free(struct FsiNetwork *network);

/**
 * Solve every consecutive period pair. `floor` bounds the multipliers
 * from below and `shift_floor` sets the min/max ratio of shifted
 * non-positive columns; pass values <= 0 for the defaults.
 *
 * # Safety
 * `panel` and `network` must be live handles and `out` writable.
 */
enum FsiStatus fsi_compute(const struct FsiPanel *panel,
                           const struct FsiNetwork *network,
                           double floor,
                           double shift_floor,
                           struct FsiResult **out);

/**
 * Number of unit-pair records; 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t fsi_result_len(const struct FsiResult *result);

/**
 * Copy record `index` into `out`.
 *
 * # Safety
 * `result` must be a live handle and `out` writable.
 */
enum FsiStatus fsi_result_get(const struct FsiResult *result, size_t index, struct FsiRecord *out);

/**
 * Stage index `stage` (0-based) of record `index`, NaN when undefined or
 * out of range.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double fsi_result_stage_mi(const struct FsiResult *result, size_t index, size_t stage);

/**
 * Unit name of record `index`, owned by the result; null when out of range.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
const char *fsi_result_unit(const struct FsiResult *result, size_t index);

/**
 * Write the index CSV (`unit, period, FSI, EC, TC, MI_<stage>..., status`).
 *
 * # Safety
 * `result` must be a live handle and `path` a valid string.
 */
enum FsiStatus fsi_result_write_csv(const struct FsiResult *result, const char *path);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void fsi_result_free(struct FsiResult *result);

/**
 * Malmquist index and its decomposition from four scores, named
 * `<frontier period>_<data period>`. Any output pointer may be null.
 *
 * # Safety
 * Non-null output pointers must be writable.
 */
enum FsiStatus fsi_malmquist(double t_t,
                             double t_t1,
                             double t1_t,
                             double t1_t1,
                             double *mi,
                             double *ec,
                             double *tc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FSINDEX_H */
