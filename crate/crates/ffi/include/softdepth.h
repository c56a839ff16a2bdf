#ifndef SOFTDEPTH_H
#define SOFTDEPTH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Which depth each pixel reports.
 */
typedef enum SdRule {
  /*
   Probability-weighted sum of log bin centres.
   */
  SD_RULE_SOFT = 0,
  /*
   Centre of the most probable bin.
   */
  SD_RULE_HARD = 1,
} SdRule;

/*
 Result code of every fallible call.
 */
typedef enum SdStatus {
  SD_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  SD_STATUS_NULL_POINTER = 1,
  /*
   An argument was out of range or inconsistent with the model.
   */
  SD_STATUS_INVALID_ARGUMENT = 2,
  /*
   A file could not be read.
   */
  SD_STATUS_IO = 3,
  /*
   A file was read but its contents are malformed.
   */
  SD_STATUS_FORMAT = 4,
  /*
   A caller buffer is too small; the required length was written back.
   */
  SD_STATUS_BUFFER_TOO_SMALL = 5,
  /*
   A computation produced a non-finite value.
   */
  SD_STATUS_NUMERIC = 6,
  /*
   The library panicked; this is a bug.
   */
  SD_STATUS_INTERNAL = 7,
} SdStatus;

/*
 Log-spaced depth bins.
 */
typedef struct SdBinning SdBinning;

/*
 A trained network together with its binning.
 */
typedef struct SdModel SdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread; empty when none. The string
 stays valid until the next failing call on the same thread.
 */
const char *sd_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sd_version(void);

/*
 Creates `bins` log-spaced bins over `[d_min, d_max]`.

 # Safety
 `out` must be null or valid for writing one pointer.
 */
enum SdStatus sd_binning_new(double d_min, double d_max, size_t bins, struct SdBinning **out);

/*
 Releases a binning; null is ignored.

 # Safety
 `b` must be null or a handle from [`sd_binning_new`] not yet freed.
 */
void sd_binning_free(struct SdBinning *b);

/*
 Number of bins; 0 for a null handle.

 # Safety
 `b` must be null or a live handle.
 */
size_t sd_binning_num_bins(const struct SdBinning *b);

/*
 Depth at the log-space centre of bin `index`.

 # Safety
 `b` must be null or a live handle; `out` null or writable.
 */
enum SdStatus sd_binning_center(const struct SdBinning *b, size_t index, double *out);

/*
 Bin index of a depth inside the binning range.

 # Safety
 `b` must be null or a live handle; `out` null or writable.
 */
enum SdStatus sd_binning_quantize(const struct SdBinning *b, double depth, size_t *out);

/*
 Loads a checkpoint written by `softdepth train`.

 # Safety
 `path` must be null or a NUL-terminated string; `out` null or writable.
 */
enum SdStatus sd_model_load(const char *path, struct SdModel **out);

/*
 Releases a model; null is ignored.

 # Safety
 `m` must be null or a handle from [`sd_model_load`] not yet freed.
 */
void sd_model_free(struct SdModel *m);

/*
 Number of depth bins the model classifies into; 0 for a null handle.

 # Safety
 `m` must be null or a live handle.
 */
size_t sd_model_num_bins(const struct SdModel *m);

/*
 A copy of the model's binning, to be released with [`sd_binning_free`].

 # Safety
 `m` must be null or a live handle; `out` null or writable.
 */
enum SdStatus sd_model_binning(const struct SdModel *m, struct SdBinning **out);

/*
 Output size for a `height x width` input, or an error when the network
 cannot take that size.

 # Safety
 `m` must be null or a live handle; `out_h` and `out_w` null or writable.
 */
enum SdStatus sd_model_output_size(const struct SdModel *m,
                                   size_t height,
                                   size_t width,
                                   size_t *out_h,
                                   size_t *out_w);

/*
 Predicts a depth map. `rgb` holds `height * width * 3` values; `out`
 receives `(height/2) * (width/2)` depths. `*len` is the capacity of `out`
 on entry and the number of values written (or needed) on return.

 # Safety
 Pointers must be null or valid for the sizes above.
 */
enum SdStatus sd_model_predict(const struct SdModel *m,
                               const float *rgb,
                               size_t height,
                               size_t width,
                               enum SdRule rule,
                               float *out,
                               size_t *len);

/*
 Per-pixel class probabilities in planar `(bins, height/2, width/2)` order.
 Buffer conventions match [`sd_model_predict`].

 # Safety
 Pointers must be null or valid for the sizes above.
 */
enum SdStatus sd_model_scores(const struct SdModel *m,
                              const float *rgb,
                              size_t height,
                              size_t width,
                              float *out,
                              size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOFTDEPTH_H */
