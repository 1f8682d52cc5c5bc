#ifndef AFC_H
#define AFC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AfcStatus {
  AFC_STATUS_OK = 0,
  AFC_STATUS_NULL_POINTER = 1,
  AFC_STATUS_INVALID_UTF8 = 2,
  AFC_STATUS_CONFIG = 3,
  AFC_STATUS_DOMAIN = 4,
  AFC_STATUS_FIT_NOT_CONVERGED = 5,
  AFC_STATUS_NO_COMB = 6,
  AFC_STATUS_INCONSISTENT_DEPTHS = 7,
  AFC_STATUS_TRACE_TOO_SHORT = 8,
  AFC_STATUS_IO = 9,
  AFC_STATUS_OUT_OF_RANGE = 10,
  AFC_STATUS_PANIC = 11,
} AfcStatus;

/**
 * The outcome of simulating a scenario.
 */
typedef struct AfcRun AfcRun;

/**
 * A parsed scenario file.
 */
typedef struct AfcScenario AfcScenario;

typedef struct AfcEcho {
  double efficiency;
  double echo_time_s;
  double transmitted_fraction;
  double window_centre_s;
} AfcEcho;

typedef struct AfcCombParams {
  double delta_hz;
  double gamma_hz;
  double d;
  double d0;
  double finesse;
  double bandwidth_hz;
  size_t m_teeth;
} AfcCombParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *afc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *afc_version(void);

enum AfcStatus afc_analytic_efficiency(double d, double d0, double finesse, double *out_eta);

enum AfcStatus afc_echo_time(double delta_hz, double *out_s);

enum AfcStatus afc_optimal_depth(double finesse, double *out_d);

/**
 * Recovers `d` and `d0` from an echo-to-transmitted ratio and the comb transmission.
 */
enum AfcStatus afc_infer_depths(double ratio,
                                double transmission,
                                double finesse,
                                double *out_d,
                                double *out_d0);

/**
 * Reads and validates a scenario file.
 */
enum AfcStatus afc_scenario_load(const char *path, struct AfcScenario **out_scenario);

/**
 * Parses scenario text; `origin` labels diagnostics and may be null.
 */
enum AfcStatus afc_scenario_parse(const char *text,
                                  const char *origin,
                                  struct AfcScenario **out_scenario);

/**
 * SHA-256 of the scenario text, valid while the handle lives.
 */
const char *afc_scenario_hash(const struct AfcScenario *scenario);

enum AfcStatus afc_scenario_set_seed(struct AfcScenario *scenario, uint64_t seed);

void afc_scenario_free(struct AfcScenario *scenario);

/**
 * Runs the pipeline in memory.
 */
enum AfcStatus afc_simulate(const struct AfcScenario *scenario, struct AfcRun **out_run);

/**
 * Runs the pipeline and writes its tables to the scenario's output directory.
 */
enum AfcStatus afc_run_and_write(const struct AfcScenario *scenario, size_t threads);

void afc_run_free(struct AfcRun *run);

enum AfcStatus afc_run_echo_count(const struct AfcRun *run, size_t *out_count);

enum AfcStatus afc_run_echo(const struct AfcRun *run, size_t index, struct AfcEcho *out_echo);

/**
 * Fitted comb parameters; `OutOfRange` when the scenario requested no comb fit.
 */
enum AfcStatus afc_run_comb_fit(const struct AfcRun *run, struct AfcCombParams *out_params);

/**
 * Number of spectrum samples; pass to [`afc_run_spectrum`] to size the buffers.
 */
enum AfcStatus afc_run_spectrum_len(const struct AfcRun *run, size_t *out_len);

/**
 * Copies frequencies (Hz) and the real and imaginary depth into caller buffers of `len` elements.
 */
enum AfcStatus afc_run_spectrum(const struct AfcRun *run,
                                double *freq_hz,
                                double *re_depth,
                                double *im_depth,
                                size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFC_H */
