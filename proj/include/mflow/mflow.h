/* C interface to the momentum-guided flow sampling library.
 *
 * All handles are opaque. Every function returns an mflow_status; on failure
 * mflow_last_error() describes the problem (thread-local, valid until the
 * next call on the same thread). */
#ifndef MFLOW_H
#define MFLOW_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mflow_status {
  MFLOW_OK = 0,
  MFLOW_ERR_INVALID_ARGUMENT = 1,
  MFLOW_ERR_NUMERIC = 2,
  MFLOW_ERR_POLE_AT_DATA = 3,
  MFLOW_ERR_INSUFFICIENT_OVERLAP = 4,
  MFLOW_ERR_INVALID_STATE = 5,
  MFLOW_ERR_TRAINING_DIVERGED = 6,
  MFLOW_ERR_UNSUPPORTED_DIMENSION = 7,
  MFLOW_ERR_EMPTY_SET = 8,
  MFLOW_ERR_CONFIG = 9,
  MFLOW_ERR_IO = 10,
  MFLOW_ERR_CHECK_FAILED = 11,
  MFLOW_ERR_INTERNAL = 12
} mflow_status;

typedef struct mflow_mixture mflow_mixture;
typedef struct mflow_experiment mflow_experiment;

/* Plain-data mirror of the guidance configuration. auto_weight <= 0 disables
 * autoguidance. */
typedef struct mflow_guidance {
  double alpha;
  double beta;
  double mg_lo, mg_hi;
  double cfg_omega;
  double cfg_lo, cfg_hi;
  int unbiased;
  int normalize;
  double auto_weight;
} mflow_guidance;

/* Unguided defaults: alpha 0, beta 0, omega 1, both intervals [0, 1]. */
mflow_guidance mflow_guidance_default(void);

const char* mflow_last_error(void);
const char* mflow_status_name(mflow_status status);
const char* mflow_rng_name(void);

/* ---- mixtures and analytic fields ---- */

mflow_status mflow_mixture_load(const char* path, mflow_mixture** out);
mflow_status mflow_mixture_parse(const char* json_text, mflow_mixture** out);
void mflow_mixture_free(mflow_mixture* m);
int mflow_mixture_dim(const mflow_mixture* m);

/* label < 0 selects the unconditional (full-mixture) velocity. */
mflow_status mflow_optimal_velocity(const mflow_mixture* m, const double* x, double t, int label, double* v_out);
mflow_status mflow_smoothed_velocity(const mflow_mixture* m, const double* x, double t, double epsilon, int label,
                                     double* v_out);
mflow_status mflow_log_density_and_score(const mflow_mixture* m, const double* x, double t, double* log_density,
                                         double* score_out);

/* One guided trajectory on the analytic (epsilon = 0) or smoothed field over a
 * shifted grid. endpoint_out has dim entries; evaluations_out (optional)
 * receives the number of field evaluations. */
mflow_status mflow_sample_trajectory(const mflow_mixture* m, double epsilon, long n_steps, double shift,
                                     const mflow_guidance* g, const double* z0, int label, double* endpoint_out,
                                     long* evaluations_out);

/* ---- experiments (config-file driven, used by the CLI) ---- */

mflow_status mflow_experiment_load(const char* config_path, mflow_experiment** out);
void mflow_experiment_free(mflow_experiment* e);

/* key is one of "alpha", "beta", "omega", "steps", "seed". */
mflow_status mflow_experiment_override(mflow_experiment* e, const char* key, double value);
mflow_status mflow_experiment_set_output(mflow_experiment* e, const char* dir);

mflow_status mflow_run_sample(const mflow_experiment* e);
mflow_status mflow_run_sweep(const mflow_experiment* e);
mflow_status mflow_run_train(const mflow_experiment* e);
/* step_index < 0 uses the config's toy.step_index. */
mflow_status mflow_run_toy(const mflow_experiment* e, long step_index);

typedef void (*mflow_line_fn)(const char* line, void* user);
/* Runs the invariant battery, reporting one line per check through sink.
 * A mixture file that fails validation is reported as a failed check.
 * Returns MFLOW_ERR_CHECK_FAILED when any check fails. */
mflow_status mflow_run_check(const mflow_experiment* e, mflow_line_fn sink, void* user);

#ifdef __cplusplus
}
#endif

#endif /* MFLOW_H */
