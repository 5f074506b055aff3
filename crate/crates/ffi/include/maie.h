#ifndef MAIE_H
#define MAIE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Outcome of a call.
typedef enum MaieStatus {
  MAIE_STATUS_OK = 0,
  MAIE_STATUS_NULL_POINTER = 1,
  MAIE_STATUS_INVALID_ARGUMENT = 2,
  MAIE_STATUS_CONFIG = 3,
  MAIE_STATUS_NON_FINITE = 4,
  MAIE_STATUS_IO = 5,
  MAIE_STATUS_PANIC = 6,
  MAIE_STATUS_INTERNAL = 7,
} MaieStatus;

// A training session: one agent on one environment.
typedef struct MaieTrainer MaieTrainer;

// Scalars of one training update.
typedef struct MaieUpdateMetrics {
  double loss_actor;
  double loss_critic;
  double loss_sim;
  double loss_td;
  double loss_srl;
  double entropy;
  double grad_norm;
  // Episodes that finished during the rollout.
  uint32_t episodes_finished;
  // Sum of their returns.
  double episode_return_sum;
} MaieUpdateMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *maie_version(void);

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call on the same thread.
const char *maie_last_error(void);

// Static name of a status code.
const char *maie_status_name(enum MaieStatus status);

// Creates a trainer for environment `env` (e.g. "mining"). `config_json` is
// a training configuration object; null selects the defaults.
//
// # Safety
// `env` and a non-null `config_json` must be NUL-terminated strings; `out`
// must be writable.
enum MaieStatus maie_trainer_new(const char *env,
                                 const char *config_json,
                                 struct MaieTrainer **out);

// Releases a trainer. Null is ignored.
//
// # Safety
// `t` must come from [`maie_trainer_new`] and not be used afterwards.
void maie_trainer_free(struct MaieTrainer *t);

// Collects one rollout and updates the agent. `out` may be null.
//
// # Safety
// `t` must be a live trainer; a non-null `out` must be writable.
enum MaieStatus maie_trainer_train_step(struct MaieTrainer *t, struct MaieUpdateMetrics *out);

// Whether the configured episode or step budget is spent.
//
// # Safety
// `t` must be a live trainer and `out` writable.
enum MaieStatus maie_trainer_done(const struct MaieTrainer *t, bool *out);

// Environment steps taken so far.
//
// # Safety
// `t` must be a live trainer and `out` writable.
enum MaieStatus maie_trainer_env_steps(const struct MaieTrainer *t, uint64_t *out);

// Number of observation modalities of the trainer's environment.
//
// # Safety
// `t` must be a live trainer and `out` writable.
enum MaieStatus maie_trainer_modality_count(const struct MaieTrainer *t, size_t *out);

// Mean fusion weight per modality from the last update, written to
// `out[0..len]`; `len` must equal the modality count.
//
// # Safety
// `t` must be a live trainer; `out` must hold `len` doubles.
enum MaieStatus maie_trainer_mean_lambda(const struct MaieTrainer *t, double *out, size_t len);

// Runs `episodes` episodes without learning on an environment seeded with
// `seed`. Either output pointer may be null.
//
// # Safety
// `t` must be a live trainer; non-null outputs must be writable.
enum MaieStatus maie_trainer_evaluate(const struct MaieTrainer *t,
                                      size_t episodes,
                                      bool greedy,
                                      uint64_t seed,
                                      double *success_rate,
                                      double *mean_return);

// Writes parameters and normalisation statistics as JSON to `path`.
//
// # Safety
// `t` must be a live trainer and `path` a NUL-terminated string.
enum MaieStatus maie_trainer_save(const struct MaieTrainer *t, const char *path);

// Restores a checkpoint written by [`maie_trainer_save`] for the same
// environment.
//
// # Safety
// `t` must be a live trainer and `path` a NUL-terminated string.
enum MaieStatus maie_trainer_load(struct MaieTrainer *t, const char *path);

// Performs a complete run described by a run configuration object and
// writes its artifacts into the configured output directory.
//
// # Safety
// `config_json` must be a NUL-terminated string.
enum MaieStatus maie_run(const char *config_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAIE_H */
