#ifndef UFO_UFO_H
#define UFO_UFO_H

#include <stdint.h>

#if defined(_WIN32)
#define UFO_API __declspec(dllexport)
#else
#define UFO_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ufo_status {
  UFO_OK = 0,
  UFO_ERR_SHAPE = 1,
  UFO_ERR_CONFIG = 2,
  UFO_ERR_DOMAIN = 3,
  UFO_ERR_INDEX = 4,
  UFO_ERR_USAGE = 5,
  UFO_ERR_IO = 6,
  UFO_ERR_DATA = 7,
  UFO_ERR_MANIFEST = 8,
  UFO_ERR_GENERATION = 9,
  UFO_ERR_NUMERIC = 10,
  UFO_ERR_INTERNAL = 99
} ufo_status;

/* Model + run configuration. Created from a run-config JSON file. */
typedef struct ufo_session ufo_session;

typedef struct ufo_train_summary {
  int64_t steps;  /* completed steps, including resumed ones */
  double cls;
  double wbce;
  double iou;
  double total;
  double lr;
} ufo_train_summary;

typedef struct ufo_metrics {
  int64_t num_images;
  double precision;
  double jaccard;
  double mae;
  double f_beta;
  double max_f;
} ufo_metrics;

/* Message of the most recent failure on this thread ("" if none). */
UFO_API const char* ufo_last_error(void);
UFO_API const char* ufo_status_name(ufo_status status);

/* Generates a synthetic dataset from a synth-config JSON file. seed may be
   NULL to keep the configured one. */
UFO_API ufo_status ufo_synth(const char* config_path, const char* out_dir, const uint64_t* seed);

UFO_API ufo_status ufo_session_create(const char* config_path, ufo_session** out);
UFO_API void ufo_session_destroy(ufo_session* session);
UFO_API ufo_status ufo_session_load(ufo_session* session, const char* checkpoint_path);
UFO_API ufo_status ufo_session_save(ufo_session* session, const char* checkpoint_path);

/* Trains with the session's config; data_dir NULL uses data.path, resume may
   be NULL. Writes model.ckpt and train_log.jsonl under out_dir and leaves
   the trained weights in the session. */
UFO_API ufo_status ufo_session_train(ufo_session* session, const char* data_dir, const char* out_dir,
                                     const char* resume_checkpoint, const uint64_t* seed,
                                     ufo_train_summary* summary);

/* split: "train", "val" or "all". oracle != 0 scores the ground truth
   against itself. Writes report.json and curves.csv to out_dir if non-NULL. */
UFO_API ufo_status ufo_session_eval(ufo_session* session, const char* data_dir, const char* split, int oracle,
                                    const char* out_dir, ufo_metrics* metrics);

/* Segments every .ppm in group_dir as one group; aux_dir may be NULL. */
UFO_API ufo_status ufo_session_infer(ufo_session* session, const char* group_dir, const char* out_dir,
                                     const char* aux_dir, int64_t* num_written);

/* Runs the gradient-check suite with the config's model and gradcheck
   sections in double precision. *passed is 1 iff every check passed.
   *report receives a text report to be released with ufo_free_string. */
UFO_API ufo_status ufo_gradcheck(const char* config_path, int* passed, char** report, char** report_json);
UFO_API void ufo_free_string(char* s);

/* Test hook: negate the input gradients of the named op's backward. */
UFO_API ufo_status ufo_inject_fault(const char* op);
UFO_API void ufo_clear_faults(void);

#ifdef __cplusplus
}
#endif

#endif
