#ifndef DYGLNET_DYGLNET_H
#define DYGLNET_DYGLNET_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DYGL_API __declspec(dllexport)
#else
#define DYGL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every fallible call returns one of these; details via dygl_last_error(). */
typedef enum dygl_status {
  DYGL_OK = 0,
  DYGL_ERR_DIMENSION = 1,
  DYGL_ERR_CONFIGURATION = 2,
  DYGL_ERR_CONTRACT = 3,
  DYGL_ERR_STATE = 4,
  DYGL_ERR_NUMERIC = 5,
  DYGL_ERR_FORMAT = 6,
  DYGL_ERR_VERSION = 7,
  DYGL_ERR_UNSUPPORTED = 8,
  DYGL_ERR_IO = 9,
  DYGL_ERR_INVALID_ARGUMENT = 10,
  DYGL_ERR_INTERNAL = 11
} dygl_status;

typedef struct dygl_model dygl_model;

typedef struct dygl_metrics {
  double dice, iou, precision, recall, specificity, accuracy;
  uint64_t tp, fp, fn, tn;
} dygl_metrics;

typedef struct dygl_epoch_record {
  int epoch;
  double lr, loss, val_dice, val_iou;
} dygl_epoch_record;

typedef struct dygl_train_summary {
  int64_t steps;
  int epochs;
  int best_epoch;
  double best_val_dice;
  double final_loss;
} dygl_train_summary;

typedef struct dygl_gradcheck_row {
  const char* block;
  uint64_t seed;
  double max_rel_err;          /* |a-n| / max(|a|,|n|,1e-8) over all checked entries */
  double max_rel_err_resolved; /* same, over entries above the finite-difference resolution */
  double max_unresolved_ratio; /* worst |a-n| / resolution among the remaining entries */
  uint64_t checked;
  uint64_t skipped_kinks;
  uint64_t resolution_limited;
  int passed;                  /* resolution-aware verdict at tol 1e-4 */
  int passed_strict;           /* max_rel_err < 1e-4 */
  double seconds;
} dygl_gradcheck_row;

typedef void (*dygl_epoch_fn)(const dygl_epoch_record* rec, void* user);
typedef void (*dygl_gradcheck_fn)(const dygl_gradcheck_row* row, void* user);

/* Thread-local message for the last failed call on this thread. */
DYGL_API const char* dygl_last_error(void);
DYGL_API const char* dygl_status_name(int status);
DYGL_API uint32_t dygl_checkpoint_version(void);

/* Copies text into buf (NUL-terminated) when cap is large enough; *needed
   receives the full length including the terminator. */
DYGL_API int dygl_default_config(char* buf, size_t cap, size_t* needed);

/* config_text holds model `key = value` lines over the default
   config; NULL or "" builds the default. Parameters are f32. */
DYGL_API int dygl_model_build(const char* config_text, uint64_t seed, dygl_model** out);
DYGL_API int dygl_model_load(const char* path, dygl_model** out);
DYGL_API int dygl_model_save(const dygl_model* model, const char* path);
DYGL_API void dygl_model_free(dygl_model* model);

DYGL_API int dygl_model_param_count(const dygl_model* model, uint64_t* out);
DYGL_API int dygl_model_config(const dygl_model* model, char* buf, size_t cap, size_t* needed);

/* Eval-mode logits for an NCHW f32 batch with the model's input channel
   count; logits_len must equal n*output_channels*h*w. */
DYGL_API int dygl_model_forward(const dygl_model* model, const float* input, int64_t n, int64_t h, int64_t w,
                                float* logits, size_t logits_len);

/* Reads a P6 image, predicts at the model's input size and writes a binary
   P5 mask (0/255) at the image's original size. */
DYGL_API int dygl_predict_file(const dygl_model* model, const char* image_path, const char* mask_path);

/* data is a manifest file or a directory holding manifest.tsv. */
DYGL_API int dygl_evaluate(const dygl_model* model, const char* data, const char* split, dygl_metrics* out);

/* config_text mixes model and training keys. With synthetic_n > 0 a
   synthetic dataset of that many samples is first written into data. */
DYGL_API int dygl_train(const char* config_text, const char* data, const char* out_dir, int64_t synthetic_n,
                        dygl_epoch_fn on_epoch, void* user, dygl_train_summary* out);

/* block NULL or "" runs every block. *all_passed uses the resolution-aware verdict. */
DYGL_API int dygl_gradcheck(const char* block, int seeds, dygl_gradcheck_fn on_row, void* user, int* all_passed);
/* Comma-separated list of block names. */
DYGL_API const char* dygl_gradcheck_blocks(void);

#ifdef __cplusplus
}
#endif

#endif
