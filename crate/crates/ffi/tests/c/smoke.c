#include <stdio.h>
#include <string.h>

#include "emv.h"

#define CHECK(expr)                                                              \
  do {                                                                           \
    EmvStatus s_ = (expr);                                                       \
    if (s_ != EMV_STATUS_OK) {                                                   \
      fprintf(stderr, "%s failed (%d): %s\n", #expr, (int)s_, emv_last_error()); \
      return 1;                                                                  \
    }                                                                            \
  } while (0)

int main(void) {
  enum { W = 32, H = 32, N = 4 };
  static uint8_t luma[N * W * H];
  for (int t = 0; t < N; t++)
    for (int y = 0; y < H; y++)
      for (int x = 0; x < W; x++)
        luma[t * W * H + y * W + x] = (uint8_t)(((x - 2 * t) * 37 + y * 11) % 251);

  EmvGopConfig cfg = {0, 8, 0};
  EmvContainer *c = NULL;
  CHECK(emv_encode(luma, W, H, N, &cfg, &c));

  EmvContainerInfo info;
  CHECK(emv_container_info(c, &info));
  if (info.frame_count != N || info.blocks_x != 4) return 2;

  int8_t mv[2 * 16];
  int intra = -1;
  CHECK(emv_container_motion(c, 1, mv, sizeof mv, &intra));
  if (intra != 0) return 3;

  EmvBuffer *buf = NULL;
  CHECK(emv_container_to_bytes(c, &buf));
  EmvContainer *back = NULL;
  CHECK(emv_container_from_bytes(emv_buffer_data(buf), emv_buffer_len(buf), &back));

  uint8_t corrupt[4] = {'X', 'V', 'S', '1'};
  EmvContainer *bad = NULL;
  if (emv_container_from_bytes(corrupt, sizeof corrupt, &bad) != EMV_STATUS_FORMAT) return 4;
  if (strlen(emv_last_error()) == 0) return 5;

  double s[3] = {0.1, 0.8, 0.1}, tmp[3] = {0.5, 0.2, 0.3}, fused[3];
  size_t cls = 99;
  CHECK(emv_fuse(s, tmp, 3, 1.0, 2.0, fused, &cls));
  if (cls != 1) return 6;

  emv_container_free(back);
  emv_container_free(c);
  emv_buffer_free(buf);
  printf("ok %s\n", emv_version());
  return 0;
}
