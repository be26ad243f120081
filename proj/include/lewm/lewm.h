#ifndef LEWM_LEWM_H
#define LEWM_LEWM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define LEWM_API __attribute__((visibility("default")))

/* Every call returns a status; on failure lewm_last_error() describes it. */
typedef enum lewm_status {
  LEWM_OK = 0,
  LEWM_ERR_ARGUMENT = 1,   /* null handle, bad buffer size, contract breach */
  LEWM_ERR_CONFIG = 2,     /* invalid config, schema mismatch, misordered call */
  LEWM_ERR_IO = 3,         /* missing or unreadable files, malformed data */
  LEWM_ERR_DIVERGENCE = 4, /* non-finite loss during training */
  LEWM_ERR_INTERNAL = 5
} lewm_status;

typedef struct lewm_experiment lewm_experiment;
typedef struct lewm_model lewm_model;
typedef struct lewm_filter lewm_filter;

LEWM_API const char* lewm_version(void);
/* Message of the last failed call on this thread; "" when none. */
LEWM_API const char* lewm_last_error(void);

/* Experiments */
LEWM_API lewm_status lewm_experiment_load(const char* config_path, lewm_experiment** out);
LEWM_API lewm_status lewm_experiment_parse(const char* config_text, lewm_experiment** out);
LEWM_API void lewm_experiment_free(lewm_experiment* exp);
LEWM_API lewm_status lewm_experiment_set_out_dir(lewm_experiment* exp, const char* dir);
/* Replaces the configured seed list with the single seed. */
LEWM_API lewm_status lewm_experiment_override_seed(lewm_experiment* exp, uint64_t seed);
LEWM_API lewm_status lewm_experiment_set_quiet(lewm_experiment* exp, int quiet);
/* Training stops after `steps` steps and leaves resumable state; 0 clears. */
LEWM_API lewm_status lewm_experiment_set_interrupt(lewm_experiment* exp, size_t steps);
/* Copies the output directory into buf (NUL-terminated). */
LEWM_API lewm_status lewm_experiment_out_dir(const lewm_experiment* exp, char* buf, size_t cap);

LEWM_API lewm_status lewm_generate(lewm_experiment* exp);
LEWM_API lewm_status lewm_train(lewm_experiment* exp);
/* checkpoint may be NULL to evaluate every seed of the experiment. */
LEWM_API lewm_status lewm_eval(lewm_experiment* exp, const char* checkpoint);
LEWM_API lewm_status lewm_ablate(lewm_experiment* exp);
LEWM_API lewm_status lewm_filter_run(lewm_experiment* exp);
/* Recomputes manifest digests; drift lines go to stdout unless quiet. */
LEWM_API lewm_status lewm_verify(const char* out_dir, int quiet, size_t* checked, size_t* drift);

/* World models */
LEWM_API lewm_status lewm_model_load(const char* checkpoint_path, lewm_model** out);
LEWM_API void lewm_model_free(lewm_model* model);
LEWM_API lewm_status lewm_model_dims(const lewm_model* model, size_t* d_s, size_t* K, size_t* M);
/* s0 has d_s entries, e0 has K (a distribution); writes d_s and K values. */
LEWM_API lewm_status lewm_model_predict(const lewm_model* model, const double* s0, const double* e0, size_t action,
                                        double* state_out, double* emotion_out);

/* Emotion filters */
LEWM_API lewm_status lewm_filter_load(const char* model_path, lewm_filter** out);
LEWM_API void lewm_filter_free(lewm_filter* filter);
LEWM_API lewm_status lewm_filter_classify(const lewm_filter* filter, const uint32_t* tokens, size_t n,
                                          double* probability);
LEWM_API lewm_status lewm_filter_apply(const lewm_filter* filter, const uint32_t* tokens, size_t n,
                                       double threshold, uint32_t* out, size_t cap, size_t* out_len);

#ifdef __cplusplus
}
#endif

#endif
