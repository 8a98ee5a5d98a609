#ifndef EMV_H
#define EMV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EmvSearchMethod {
  EMV_SEARCH_METHOD_THREE_STEP = 0,
  EMV_SEARCH_METHOD_FULL = 1,
} EmvSearchMethod;

// Result code of every fallible call.
typedef enum EmvStatus {
  EMV_STATUS_OK = 0,
  EMV_STATUS_NULL_POINTER = 1,
  EMV_STATUS_INVALID_ARGUMENT = 2,
  EMV_STATUS_IO = 3,
  // Malformed, truncated or unsupported serialized data.
  EMV_STATUS_FORMAT = 4,
  EMV_STATUS_CHECKSUM = 5,
  // Caller-provided buffer is too small.
  EMV_STATUS_BUFFER_TOO_SMALL = 6,
  // Non-finite values or numeric failure.
  EMV_STATUS_NUMERIC = 7,
  EMV_STATUS_PANIC = 8,
} EmvStatus;

// Opaque byte buffer owned by the library.
typedef struct EmvBuffer EmvBuffer;

// Opaque compressed clip.
typedef struct EmvContainer EmvContainer;

// Opaque classification network.
typedef struct EmvNetwork EmvNetwork;

// Encoder settings. Zero fields take the defaults (8, 16, 7).
typedef struct EmvGopConfig {
  size_t gop_length;
  size_t block_size;
  size_t search_range;
} EmvGopConfig;

typedef struct EmvContainerInfo {
  size_t width;
  size_t height;
  size_t block_size;
  size_t gop_length;
  size_t search_range;
  size_t frame_count;
  size_t blocks_x;
  size_t blocks_y;
} EmvContainerInfo;

typedef struct EmvSearchResult {
  int32_t dx;
  int32_t dy;
  uint32_t sad;
} EmvSearchResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next `emv_` call on the same thread.
const char *emv_last_error(void);

// Library version as a static NUL-terminated string.
const char *emv_version(void);

// Encodes `frame_count` consecutive luma planes of `width × height` bytes.
//
// # Safety
// `luma` must point to `width * height * frame_count` readable bytes and
// `config` may be null for defaults.
enum EmvStatus emv_encode(const uint8_t *luma,
                          size_t width,
                          size_t height,
                          size_t frame_count,
                          const struct EmvGopConfig *config,
                          struct EmvContainer **out_container);

// Parses serialized MVS1 bytes.
//
// # Safety
// `bytes` must point to `len` readable bytes.
enum EmvStatus emv_container_from_bytes(const uint8_t *bytes,
                                        size_t len,
                                        struct EmvContainer **out_container);

// Serializes a container; release the result with [`emv_buffer_free`].
//
// # Safety
// `container` must be a live handle.
enum EmvStatus emv_container_to_bytes(const struct EmvContainer *container,
                                      struct EmvBuffer **out_buffer);

// # Safety
// `container` and `info` must be valid.
enum EmvStatus emv_container_info(const struct EmvContainer *container,
                                  struct EmvContainerInfo *info);

// Copies the motion field of `frame` as interleaved `(dx, dy)` pairs in
// row-major block order into `out_vectors` (capacity `2·blocks_x·blocks_y`).
// `is_intra` receives 1 for I-frames, whose field is written as zeros.
// No motion search is performed.
//
// # Safety
// `container` must be a live handle; `out_vectors` must hold `capacity`
// bytes; `is_intra` may be null.
enum EmvStatus emv_container_motion(const struct EmvContainer *container,
                                    size_t frame,
                                    int8_t *out_vectors,
                                    size_t capacity,
                                    int32_t *is_intra);

// # Safety
// `container` must be null or a handle not yet freed.
void emv_container_free(struct EmvContainer *container);

// # Safety
// `buffer` must be a live handle.
const uint8_t *emv_buffer_data(const struct EmvBuffer *buffer);

// # Safety
// `buffer` must be a live handle.
size_t emv_buffer_len(const struct EmvBuffer *buffer);

// # Safety
// `buffer` must be null or a handle not yet freed.
void emv_buffer_free(struct EmvBuffer *buffer);

// Finds the displacement of the block at `(x, y)` of `cur` relative to
// `reference`: `cur(p) = reference(p − (dx, dy))`.
//
// # Safety
// Both planes must hold `width * height` bytes.
enum EmvStatus emv_block_search(const uint8_t *cur,
                                const uint8_t *reference,
                                size_t width,
                                size_t height,
                                size_t x,
                                size_t y,
                                size_t block_size,
                                size_t search_range,
                                enum EmvSearchMethod method,
                                struct EmvSearchResult *result);

// Dense flow from `prev` to `next` with default parameters; `u` and `v`
// receive `width * height` values each.
//
// # Safety
// Inputs hold `width * height` bytes, outputs as many floats.
enum EmvStatus emv_estimate_flow(const uint8_t *prev,
                                 const uint8_t *next,
                                 size_t width,
                                 size_t height,
                                 float *u,
                                 float *v);

// Temperature softmax of `len` logits into `probs`.
//
// # Safety
// `logits` and `probs` hold `len` doubles.
enum EmvStatus emv_soften(const double *logits, size_t len, double temperature, double *probs);

// Weighted average of two score vectors; `fused` may be null. The
// winning class index is written to `class_index`.
//
// # Safety
// Score arrays hold `len` doubles.
enum EmvStatus emv_fuse(const double *spatial,
                        const double *temporal,
                        size_t len,
                        double spatial_weight,
                        double temporal_weight,
                        double *fused,
                        size_t *class_index);

// Loads an NNW1 checkpoint from a file.
//
// # Safety
// `path` is a NUL-terminated UTF-8 string.
enum EmvStatus emv_network_load(const char *path, struct EmvNetwork **out_network);

// Parses NNW1 checkpoint bytes.
//
// # Safety
// `bytes` holds `len` bytes.
enum EmvStatus emv_network_from_bytes(const uint8_t *bytes,
                                      size_t len,
                                      struct EmvNetwork **out_network);

// Serializes a network as NNW1; release with [`emv_buffer_free`].
//
// # Safety
// `network` must be a live handle.
enum EmvStatus emv_network_to_bytes(const struct EmvNetwork *network,
                                    struct EmvBuffer **out_buffer);

// Writes `[channels, height, width]` into `shape` and the class count
// into `num_classes` (either may be null).
//
// # Safety
// `network` must be a live handle; `shape` holds 3 values.
enum EmvStatus emv_network_shape(const struct EmvNetwork *network,
                                 size_t *shape,
                                 size_t *num_classes);

// Content checksum of the parameters.
//
// # Safety
// `network` must be a live handle.
enum EmvStatus emv_network_checksum(const struct EmvNetwork *network, uint64_t *checksum);

// Eval-mode forward pass over `batch` inputs laid out `N×C×H×W`; writes
// `batch × num_classes` logits.
//
// # Safety
// `input` holds `batch·C·H·W` floats and `logits` `batch·num_classes`.
enum EmvStatus emv_network_predict(const struct EmvNetwork *network,
                                   const float *input,
                                   size_t batch,
                                   float *logits);

// # Safety
// `network` must be null or a handle not yet freed.
void emv_network_free(struct EmvNetwork *network);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMV_H */
