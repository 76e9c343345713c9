#ifndef LEVARRAY_LEVARRAY_H
#define LEVARRAY_LEVARRAY_H

#include <stddef.h>
#include <stdint.h>

#if defined(LEVARRAY_BUILDING)
#define LEVARRAY_API __attribute__((visibility("default")))
#else
#define LEVARRAY_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. Every fallible call returns one; on failure a message is
 * available from levarray_last_error() on the calling thread. */
typedef enum levarray_status {
  LEVARRAY_OK = 0,
  LEVARRAY_INVALID_ARGUMENT = 1,
  LEVARRAY_DOMAIN = 2,
  LEVARRAY_NO_TRAP = 3,
  LEVARRAY_STEP_SIZE = 4,
  LEVARRAY_LOST_PARTICLE = 5,
  LEVARRAY_MISSING_CHANNEL = 6,
  LEVARRAY_NO_PEAK = 7,
  LEVARRAY_INSUFFICIENT_DATA = 8,
  LEVARRAY_INFEASIBLE = 9,
  LEVARRAY_STALE_PLAN = 10,
  LEVARRAY_SELECTION = 11,
  LEVARRAY_PARSE = 12,
  LEVARRAY_IO = 13,
  LEVARRAY_SINGULAR = 14,
  LEVARRAY_UNBOUNDED_SPIN = 15,
  LEVARRAY_ZERO_TORQUE = 16,
  LEVARRAY_NOT_CONVERGED = 17,
  LEVARRAY_INTERNAL = 99
} levarray_status;

/* Site occupancy states. */
enum {
  LEVARRAY_SITE_EMPTY = 0,
  LEVARRAY_SITE_SINGLE = 1,
  LEVARRAY_SITE_MERGED = 2,
  LEVARRAY_SITE_PAIR = 3
};

typedef struct levarray_config levarray_config;
typedef struct levarray_trajectory levarray_trajectory;
typedef struct levarray_occupancy levarray_occupancy;
typedef struct levarray_plan levarray_plan;

LEVARRAY_API const char* levarray_version(void);
LEVARRAY_API const char* levarray_status_name(levarray_status status);
/* Message of the last failure on this thread; empty after a success. */
LEVARRAY_API const char* levarray_last_error(void);
/* Releases strings returned through char** out-parameters. */
LEVARRAY_API void levarray_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

LEVARRAY_API levarray_status levarray_config_default(levarray_config** out);
LEVARRAY_API levarray_status levarray_config_load(const char* path, levarray_config** out);
/* Applies a JSON merge patch; unknown keys are rejected. */
LEVARRAY_API levarray_status levarray_config_patch(levarray_config* cfg, const char* json_patch);
LEVARRAY_API levarray_status levarray_config_set_seed(levarray_config* cfg, uint64_t seed);
LEVARRAY_API levarray_status levarray_config_seed(const levarray_config* cfg, uint64_t* seed);
LEVARRAY_API levarray_status levarray_config_to_json(const levarray_config* cfg, char** json);
LEVARRAY_API void levarray_config_free(levarray_config* cfg);

/* ---- trajectories ----------------------------------------------------- */

/* Simulates the configured particle at the configured site, pressure,
 * duration and sample rate. */
LEVARRAY_API levarray_status levarray_simulate(const levarray_config* cfg, levarray_trajectory** out);
/* Detects the text or binary format. */
LEVARRAY_API levarray_status levarray_trajectory_read(const char* path, levarray_trajectory** out);
LEVARRAY_API levarray_status levarray_trajectory_write(const levarray_trajectory* t, const char* path, int binary);
/* Any output pointer may be NULL. */
LEVARRAY_API levarray_status levarray_trajectory_info(const levarray_trajectory* t, size_t* samples,
                                                      double* sample_rate_hz, double* pressure_pa, uint64_t* seed);
/* The returned buffer is owned by the trajectory. */
LEVARRAY_API levarray_status levarray_trajectory_channel(const levarray_trajectory* t, const char* name,
                                                         const double** data, size_t* length);
LEVARRAY_API void levarray_trajectory_free(levarray_trajectory* t);

/* ---- analysis --------------------------------------------------------- */

/* Lorentzian fit of one channel: center in Hz, damping and its sigma in
 * rad/s. Outputs may be NULL. */
LEVARRAY_API levarray_status levarray_fit_channel(const levarray_trajectory* t, const char* channel,
                                                  double* center_hz, double* damping_rad_s,
                                                  double* damping_sigma_rad_s);
/* Shape classification over trajectories at three or more pressures. `cfg`
 * (may be NULL) supplies thresholds and segment policy. `report_json`
 * receives the machine-readable report; `spherical` the verdict. */
LEVARRAY_API levarray_status levarray_classify(const levarray_trajectory* const* trajectories, size_t count,
                                               const levarray_config* cfg, const char* label, char** report_json,
                                               int* spherical);

/* ---- occupancy -------------------------------------------------------- */

LEVARRAY_API levarray_status levarray_occupancy_read(const char* path, levarray_occupancy** out);
/* Bernoulli loading of the configured array with the configured shapes. */
LEVARRAY_API levarray_status levarray_occupancy_load(const levarray_config* cfg, levarray_occupancy** out);
LEVARRAY_API levarray_status levarray_occupancy_write(const levarray_occupancy* occ, const char* path);
LEVARRAY_API levarray_status levarray_occupancy_info(const levarray_occupancy* occ, int* rows, int* cols,
                                                     size_t* occupied, uint64_t* version);
LEVARRAY_API levarray_status levarray_occupancy_state(const levarray_occupancy* occ, int row, int col, int* state);
LEVARRAY_API void levarray_occupancy_free(levarray_occupancy* occ);

/* ---- planning and execution ------------------------------------------- */

/* Plans from `current` to the target file (grid or coordinate list). `cfg`
 * may be NULL for the default exclusion factor. */
LEVARRAY_API levarray_status levarray_plan_create(const levarray_occupancy* current, const char* target_path,
                                                  const levarray_config* cfg, levarray_plan** out);
LEVARRAY_API levarray_status levarray_plan_read(const char* path, levarray_plan** out);
LEVARRAY_API levarray_status levarray_plan_write(const levarray_plan* plan, const char* path);
/* cost in meters. */
LEVARRAY_API levarray_status levarray_plan_info(const levarray_plan* plan, size_t* moves, double* cost_m);
LEVARRAY_API void levarray_plan_free(levarray_plan* plan);

/* Executes `plan` on `occ` in place with the configured transport model on
 * stream "assembly/execute". Writes the event log when `events_path` is not
 * NULL. `defects` receives the number of target sites left empty. */
LEVARRAY_API levarray_status levarray_execute(levarray_occupancy* occ, const levarray_plan* plan,
                                              const levarray_config* cfg, const char* events_path, size_t* defects);

/* One merge attempt moving the particle at (row_a, col_a) into the trap at
 * (row_b, col_b), on stream "assembly/merge/0". `outcome_json` (may be NULL)
 * receives the outcome record. */
LEVARRAY_API levarray_status levarray_merge(levarray_occupancy* occ, int row_a, int col_a, int row_b, int col_b,
                                            const levarray_config* cfg, char** outcome_json);

/* ---- scenarios -------------------------------------------------------- */

typedef struct levarray_scenario_options {
  int has_seed;            /* nonzero: `seed` replaces the scenario seed */
  uint64_t seed;
  const char* config_path; /* base configuration, may be NULL */
  unsigned workers;        /* 0 selects the hardware thread count */
} levarray_scenario_options;

/* Runs a scenario file into `out_dir`. Returns LEVARRAY_OK when the scenario
 * could be started; `exit_status` is 0 when every stage succeeded. */
LEVARRAY_API levarray_status levarray_run_scenario(const char* path, const char* out_dir,
                                                   const levarray_scenario_options* options, int* exit_status,
                                                   char** summary_json);

#ifdef __cplusplus
}
#endif

#endif
