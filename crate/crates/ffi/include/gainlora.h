#ifndef GAINLORA_H
#define GAINLORA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  GAINLORA_STATUS_OK = 0,
  GAINLORA_STATUS_NULL_POINTER = 1,
  GAINLORA_STATUS_INVALID_ARGUMENT = 2,
  GAINLORA_STATUS_CONFIG_ERROR = 3,
  GAINLORA_STATUS_NUMERIC_ERROR = 4,
  GAINLORA_STATUS_IO_ERROR = 5,
  GAINLORA_STATUS_PANIC = 6,
  GAINLORA_STATUS_ERROR = 7,
} GainloraStatus;

/**
 * Experiment configuration.
 */
typedef struct GainloraConfig GainloraConfig;

/**
 * Result of one seed's run.
 */
typedef struct GainloraRun GainloraRun;

/**
 * Orthonormal basis of a growing input subspace.
 */
typedef struct GainloraSubspace GainloraSubspace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *gainlora_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gainlora_version(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void gainlora_string_free(char *s);

/**
 * Trainable parameters per new task for `preset` (e.g. "t5-large") and
 * `strategy` (e.g. "olora", "gain+inflora") at rank `rank`.
 *
 * # Safety
 * `preset` and `strategy` must be NUL-terminated strings; `out` must be writable.
 */
GainloraStatus gainlora_param_count(const char *preset,
                                    const char *strategy,
                                    size_t rank,
                                    uint64_t *out);

/**
 * Average performance of a complete accuracy matrix given as its lower
 * triangle packed row by row: `A[0][0], A[1][0], A[1][1], A[2][0], …`.
 *
 * # Safety
 * `packed` must hold `tasks·(tasks+1)/2` doubles; `out` must be writable.
 */
GainloraStatus gainlora_compute_ap(const double *packed, size_t tasks, double *out);

/**
 * Forgetting of a packed accuracy matrix (layout as in `gainlora_compute_ap`).
 *
 * # Safety
 * As for `gainlora_compute_ap`.
 */
GainloraStatus gainlora_compute_ft(const double *packed, size_t tasks, double *out);

/**
 * Parses a TOML experiment config. Release with `gainlora_config_free`.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
GainloraStatus gainlora_config_from_toml(const char *toml, GainloraConfig **out);

/**
 * Applies a `section.key=value` override and revalidates. On failure the
 * config is left unchanged.
 *
 * # Safety
 * `cfg` must be a live config handle; `assignment` a NUL-terminated string.
 */
GainloraStatus gainlora_config_set(GainloraConfig *cfg, const char *assignment);

/**
 * # Safety
 * `cfg` must be NULL or a handle from `gainlora_config_from_toml` not yet freed.
 */
void gainlora_config_free(GainloraConfig *cfg);

/**
 * Runs the whole task sequence for one seed. Release with `gainlora_run_free`.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be writable.
 */
GainloraStatus gainlora_run_seed(const GainloraConfig *cfg, uint64_t seed, GainloraRun **out);

/**
 * # Safety
 * `run` must be NULL or a handle from `gainlora_run_seed` not yet freed.
 */
void gainlora_run_free(GainloraRun *run);

/**
 * Number of tasks in the run; 0 for NULL.
 *
 * # Safety
 * `run` must be NULL or a live run handle.
 */
size_t gainlora_run_tasks(const GainloraRun *run);

/**
 * # Safety
 * `run` must be a live run handle; `out` must be writable.
 */
GainloraStatus gainlora_run_ap(const GainloraRun *run, double *out);

/**
 * Fails with `INVALID_ARGUMENT` for a single-task run.
 *
 * # Safety
 * `run` must be a live run handle; `out` must be writable.
 */
GainloraStatus gainlora_run_ft(const GainloraRun *run, double *out);

/**
 * Accuracy (percent) on `task` after learning `after_task`; requires `task <= after_task`.
 *
 * # Safety
 * `run` must be a live run handle; `out` must be writable.
 */
GainloraStatus gainlora_run_accuracy(const GainloraRun *run,
                                     size_t after_task,
                                     size_t task,
                                     double *out);

/**
 * Summary JSON of the run, identical to `summary.json` from a one-seed CLI
 * run. Free the string with `gainlora_string_free`.
 *
 * # Safety
 * `run` must be a live run handle; `out` must be writable.
 */
GainloraStatus gainlora_run_summary_json(const GainloraRun *run, char **out);

/**
 * Empty subspace of `R^dim`. Release with `gainlora_subspace_free`.
 *
 * # Safety
 * `out` must be writable.
 */
GainloraStatus gainlora_subspace_new(size_t dim, GainloraSubspace **out);

/**
 * # Safety
 * `s` must be NULL or a handle from `gainlora_subspace_new` not yet freed.
 */
void gainlora_subspace_free(GainloraSubspace *s);

/**
 * Number of basis vectors; 0 for NULL.
 *
 * # Safety
 * `s` must be NULL or a live subspace handle.
 */
size_t gainlora_subspace_rank(const GainloraSubspace *s);

/**
 * Grows the basis from `n` samples (row-major `n × dim`) so that it
 * captures at least fraction `eps` of their energy.
 *
 * # Safety
 * `s` must be a live subspace handle; `samples` must hold `n·dim` doubles.
 */
GainloraStatus gainlora_subspace_extend(GainloraSubspace *s,
                                        const double *samples,
                                        size_t n,
                                        double eps);

/**
 * Copies the basis (row-major `dim × rank`) into `out`, which holds `len` doubles.
 *
 * # Safety
 * `s` must be a live subspace handle; `out` must have room for `len` doubles.
 */
GainloraStatus gainlora_subspace_basis(const GainloraSubspace *s, double *out, size_t len);

/**
 * Writes `v − M Mᵀ v` for a `dim`-vector `v` into `out`.
 *
 * # Safety
 * `s` must be a live subspace handle; `v` and `out` must each hold `dim` doubles.
 */
GainloraStatus gainlora_subspace_project_out(const GainloraSubspace *s,
                                             const double *v,
                                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAINLORA_H */
