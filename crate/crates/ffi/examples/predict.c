/* Score one gray image with a trained checkpoint.
 *
 *   cc predict.c -I../include -L<target>/debug -lssae_ffi -o predict
 *   ./predict model.ckpt
 */
#include <stdio.h>
#include <stdlib.h>

#include "ssae.h"

int main(int argc, char **argv) {
  if (argc != 2) {
    fprintf(stderr, "usage: %s CHECKPOINT\n", argv[0]);
    return 2;
  }
  SsaeNetwork *net = NULL;
  if (ssae_network_load(argv[1], &net) != SSAE_STATUS_OK) {
    fprintf(stderr, "load failed: %s\n", ssae_last_error());
    return 1;
  }
  uint32_t side = 0;
  ssae_network_input_side(net, &side);

  size_t n = (size_t)side * side * 3;
  float *image = malloc(n * sizeof(float));
  for (size_t i = 0; i < n; i++) image[i] = 0.5f;

  SsaePostprocess post = {.sigma = 1.0, .threshold = 0.0f, .min_area = 1, .eight_connected = 1};
  SsaeDetection det;
  SsaeStatus status = ssae_predict(net, image, side, &post, NULL, NULL, &det);
  if (status != SSAE_STATUS_OK) {
    fprintf(stderr, "predict failed: %s\n", ssae_last_error());
    return 1;
  }
  uint64_t passes = 0;
  ssae_network_forward_count(net, &passes);
  printf("side %u anomalous %u pixels %llu passes %llu\n", side, det.anomalous,
         (unsigned long long)det.anomalous_pixels, (unsigned long long)passes);

  free(image);
  ssae_network_free(net);
  return 0;
}
