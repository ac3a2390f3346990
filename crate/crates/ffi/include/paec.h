#ifndef PAEC_H
#define PAEC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum PaecStatus {
  PAEC_STATUS_OK = 0,
  /*
   A required pointer was null.
   */
  PAEC_STATUS_NULL_POINTER = 1,
  /*
   An argument is out of range or inconsistent, or a signal is too short.
   */
  PAEC_STATUS_INVALID_ARGUMENT = 2,
  /*
   The checkpoint is missing, corrupt or not a full model.
   */
  PAEC_STATUS_CHECKPOINT = 3,
  /*
   The output buffer is too small; the required length is reported.
   */
  PAEC_STATUS_BUFFER_TOO_SMALL = 4,
  /*
   Processing failed inside the signal chain.
   */
  PAEC_STATUS_PROCESSING = 5,
  /*
   A bug inside the library. The handle should not be used again.
   */
  PAEC_STATUS_INTERNAL = 6,
} PaecStatus;

/*
 A loaded model together with its front-end settings.
 */
typedef struct PaecModel PaecModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a trained model from a checkpoint directory.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PaecStatus paec_model_load(const char *path, struct PaecModel **out);

/*
 Creates an untrained model of the named variant (`"tdpf2"`, `"gftnn-aec"`
 and so on). `toy` selects the small preset. Meant for testing bindings.

 # Safety
 `variant` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PaecStatus paec_model_new(const char *variant,
                               bool toy,
                               uint64_t seed,
                               struct PaecModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from `paec_model_load` or `paec_model_new` and not be
 used afterwards.
 */
void paec_model_free(struct PaecModel *model);

/*
 Whether the model needs an enrollment utterance.

 # Safety
 `model` must be a live handle or null.
 */
bool paec_model_is_personalized(const struct PaecModel *model);

/*
 Trainable parameter count.

 # Safety
 `model` must be a live handle or null.
 */
size_t paec_model_param_count(const struct PaecModel *model);

/*
 Replaces the built-in stand-in speaker embedding with `dim` values from
 an external speaker-verification model. `dim` must be 256. Passing null
 restores the stand-in.

 # Safety
 `model` must be a live handle and `embedding` point at `dim` floats.
 */
enum PaecStatus paec_model_set_embedding(struct PaecModel *model,
                                         const float *embedding,
                                         size_t dim);

/*
 Output length for an `n`-sample input. The output covers whole frames
 and can be slightly longer than the input.
 */
size_t paec_output_len(size_t n);

/*
 Cancels the echo of `reference` in `mic` (both `n` samples).

 `enroll` may be null for non-personalized models. The enhanced signal
 goes to `out`, which holds `out_cap` samples; `out_len` receives the
 written length, or the required length with `PAEC_STATUS_BUFFER_TOO_SMALL`.
 `delay_ms`, if not null, receives the estimated echo-path delay.

 # Safety
 All non-null pointers must be valid for the given lengths.
 */
enum PaecStatus paec_process(const struct PaecModel *model,
                             const float *mic,
                             const float *reference,
                             size_t n,
                             const float *enroll,
                             size_t n_enroll,
                             float *out,
                             size_t out_cap,
                             size_t *out_len,
                             float *delay_ms);

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *paec_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *paec_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAEC_H */
