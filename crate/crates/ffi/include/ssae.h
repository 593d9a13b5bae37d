#ifndef SSAE_H
#define SSAE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SSAE_OBJECTIVE_V1 1

#define SSAE_OBJECTIVE_V2 2

#define SSAE_OBJECTIVE_V3 3

// Result codes shared by every function.
typedef enum SsaeStatus {
  SSAE_STATUS_OK = 0,
  SSAE_STATUS_NULL_POINTER = 1,
  SSAE_STATUS_INVALID_ARGUMENT = 2,
  SSAE_STATUS_IO = 3,
  SSAE_STATUS_CHECKPOINT = 4,
  SSAE_STATUS_SHAPE = 5,
  SSAE_STATUS_PRECONDITION = 6,
  SSAE_STATUS_METRIC = 7,
  SSAE_STATUS_PANIC = 8,
  SSAE_STATUS_OTHER = 9,
} SsaeStatus;

// Opaque trained network.
typedef struct SsaeNetwork SsaeNetwork;

// Post-processing settings for `ssae_predict`.
typedef struct SsaePostprocess {
  double sigma;
  float threshold;
  uint32_t min_area;
  // Nonzero for 8-connectivity, zero for 4-connectivity.
  uint8_t eight_connected;
} SsaePostprocess;

// Image-level outcome of `ssae_predict`.
typedef struct SsaeDetection {
  uint8_t anomalous;
  float score;
  uint32_t components;
  uint64_t anomalous_pixels;
} SsaeDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null. Valid until the next call that
// fails on the same thread.
const char *ssae_last_error(void);

// Library version as a static NUL-terminated string.
const char *ssae_version(void);

// Load a network checkpoint. On success `*out` owns a handle to release with
// `ssae_network_free`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SsaeStatus ssae_network_load(const char *path, struct SsaeNetwork **out);

// Release a handle from `ssae_network_load`. Null is ignored.
//
// # Safety
// `net` must come from `ssae_network_load` and not be used afterwards.
void ssae_network_free(struct SsaeNetwork *net);

// Side length of the square images the network accepts.
//
// # Safety
// `net` must be a live handle and `out` a valid pointer.
enum SsaeStatus ssae_network_input_side(const struct SsaeNetwork *net, uint32_t *out);

// Images pushed through the network so far (instrumentation).
//
// # Safety
// `net` must be a live handle and `out` a valid pointer.
enum SsaeStatus ssae_network_forward_count(const struct SsaeNetwork *net, uint64_t *out);

// Reconstruct one `side × side × 3` image into `out` (same size).
//
// # Safety
// `image` and `out` must each hold `side * side * 3` floats.
enum SsaeStatus ssae_network_reconstruct(const struct SsaeNetwork *net,
                                         const float *image,
                                         size_t side,
                                         float *out);

// Single-pass detection on one `side × side × 3` image. `heatmap` (`side²` floats, smoothed
// scores) and `mask` (`side²` bytes, 1 = anomalous) may be null when not needed.
//
// # Safety
// Non-null buffers must have the sizes stated above; `post` and `out` must be valid.
enum SsaeStatus ssae_predict(const struct SsaeNetwork *net,
                             const float *image,
                             size_t side,
                             const struct SsaePostprocess *post,
                             float *heatmap,
                             uint8_t *mask,
                             struct SsaeDetection *out);

// Objective value for one sample, optionally with its gradient with respect to `recon`.
// `variant` is one of the `SSAE_OBJECTIVE_*` constants. `mask` holds `height × width` bytes (nonzero = modified); `grad` may be null.
//
// # Safety
// Image buffers must hold `height * width * channels` floats.
enum SsaeStatus ssae_objective(uint32_t variant,
                               double lambda,
                               const float *recon,
                               const float *target,
                               const float *distorted,
                               const uint8_t *mask,
                               size_t height,
                               size_t width,
                               size_t channels,
                               double *loss,
                               float *grad);

// Calibrate a threshold on `count` validation heatmaps of `height × width`, stored back to back.
//
// # Safety
// `maps` must hold `count * height * width` floats.
enum SsaeStatus ssae_calibrate_threshold(const float *maps,
                                         size_t count,
                                         size_t height,
                                         size_t width,
                                         uint32_t min_area,
                                         uint8_t eight_connected,
                                         float *out);

// Pooled AUROC of `n` scores against binary labels (nonzero = anomalous).
//
// # Safety
// `scores` and `labels` must each hold `n` elements.
enum SsaeStatus ssae_pixel_auroc(const float *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSAE_H */
