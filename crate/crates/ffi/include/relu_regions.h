/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef RELU_REGIONS_H
#define RELU_REGIONS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum RrStatus {
  RR_STATUS_OK = 0,
  RR_STATUS_NULL_POINTER = 1,
  RR_STATUS_INVALID_ARGUMENT = 2,
  RR_STATUS_DIMENSION_MISMATCH = 3,
  RR_STATUS_INVALID_NETWORK = 4,
  RR_STATUS_IO = 5,
  RR_STATUS_PARSE = 6,
  RR_STATUS_BUFFER_TOO_SMALL = 7,
  RR_STATUS_PANIC = 8,
} RrStatus;

// Opaque bound report handle.
typedef struct RrBoundReport RrBoundReport;

// Opaque network handle.
typedef struct RrNetwork RrNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *rr_last_error_message(void);

// Loads a network from a JSON network file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a writable pointer.
enum RrStatus rr_network_load(const char *path, struct RrNetwork **out);

// Parses a network from JSON text.
//
// # Safety
// `json` must be a nul-terminated string and `out` a writable pointer.
enum RrStatus rr_network_from_json(const char *json, struct RrNetwork **out);

// Random network with i.i.d. normal weights and biases; `widths` lists the
// input width followed by each layer width. The last layer is linear.
//
// # Safety
// `widths` must point to `widths_len` values and `out` must be writable.
enum RrStatus rr_network_random(const size_t *widths,
                                size_t widths_len,
                                uint64_t seed,
                                double init_stddev,
                                struct RrNetwork **out);

// Releases a network. Null is accepted.
//
// # Safety
// `net` must come from this library and must not be used afterwards.
void rr_network_free(struct RrNetwork *net);

// # Safety
// `net` must be a live handle and `out` writable.
enum RrStatus rr_network_input_dim(const struct RrNetwork *net, size_t *out);

// # Safety
// `net` must be a live handle and `out` writable.
enum RrStatus rr_network_output_dim(const struct RrNetwork *net, size_t *out);

// # Safety
// `net` must be a live handle and `out` writable.
enum RrStatus rr_network_layer_count(const struct RrNetwork *net, size_t *out);

// Evaluates the network at `x`; `out_len` must equal the output width.
//
// # Safety
// `x` must hold `x_len` values and `out` must have room for `out_len`.
enum RrStatus rr_network_forward(const struct RrNetwork *net,
                                 const double *x,
                                 size_t x_len,
                                 double *out,
                                 size_t out_len);

// Bounds the number of linear regions meeting the ball of `radius` around
// `center`.
//
// # Safety
// `center` must hold `center_len` values and `out` must be writable.
enum RrStatus rr_local_region_bound(const struct RrNetwork *net,
                                    const double *center,
                                    size_t center_len,
                                    double radius,
                                    struct RrBoundReport **out);

// Number of neurons whose sign may flip; the region bound is `2^C`.
//
// # Safety
// `report` must be a live handle and `out` writable.
enum RrStatus rr_report_c(const struct RrBoundReport *report, size_t *out);

// Copies the per-layer S counts into `buf`. `written` receives the number
// of layers; when `buf_len` is smaller, nothing is copied and the status is
// `BufferTooSmall`.
//
// # Safety
// `buf` must have room for `buf_len` values and `written` must be writable.
enum RrStatus rr_report_s_counts(const struct RrBoundReport *report,
                                 size_t *buf,
                                 size_t buf_len,
                                 size_t *written);

// Releases a report. Null is accepted.
//
// # Safety
// `report` must come from this library and must not be used afterwards.
void rr_report_free(struct RrBoundReport *report);

// Samples the ball and counts violations of the certified conditions.
// Any of the out-pointers may be null.
//
// # Safety
// `center` must hold `center_len` values; non-null outs must be writable.
enum RrStatus rr_check_soundness(const struct RrNetwork *net,
                                 const double *center,
                                 size_t center_len,
                                 double radius,
                                 size_t samples,
                                 uint64_t seed,
                                 size_t *violations,
                                 size_t *distinct_patterns,
                                 size_t *c);

// Number of linear pieces of the network restricted to the segment `a`–`b`.
//
// # Safety
// `a` and `b` must each hold `len` values and `out` must be writable.
enum RrStatus rr_segment_piece_count(const struct RrNetwork *net,
                                     const double *a,
                                     const double *b,
                                     size_t len,
                                     size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELU_REGIONS_H */
