#ifndef PISA_H
#define PISA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PisaVariantCode {
  PISA_VARIANT_CODE_SPARSE_ONLY = 0,
  PISA_VARIANT_CODE_ZEROTH = 1,
  PISA_VARIANT_CODE_BLOCK_FIRST = 2,
  PISA_VARIANT_CODE_HYBRID = 3,
  PISA_VARIANT_CODE_GLOBAL_CENTROID = 4,
} PisaVariantCode;

typedef enum PisaStrategyCode {
  PISA_STRATEGY_CODE_PLAIN = 0,
  PISA_STRATEGY_CODE_COVARIANCE_AWARE = 1,
} PisaStrategyCode;

typedef enum PisaStatus {
  PISA_STATUS_OK = 0,
  PISA_STATUS_NULL_POINTER = 1,
  PISA_STATUS_INVALID_ARGUMENT = 2,
  PISA_STATUS_IO = 3,
  PISA_STATUS_FORMAT = 4,
  PISA_STATUS_VALIDATION = 5,
  PISA_STATUS_EMPTY_SELECTION = 6,
  PISA_STATUS_NUMERICAL_OVERFLOW = 7,
  PISA_STATUS_PANIC = 8,
} PisaStatus;

typedef enum PisaDtypeCode {
  PISA_DTYPE_CODE_F32 = 1,
  PISA_DTYPE_CODE_F64 = 2,
} PisaDtypeCode;

/**
 * Opaque multi-head Q/K/V bundle.
 */
typedef struct PisaBundle PisaBundle;

/**
 * Opaque per-head attention outputs.
 */
typedef struct PisaResult PisaResult;

/**
 * Settings for [`pisa_run`]; start from [`pisa_run_options_default`].
 */
typedef struct PisaRunOptions {
  enum PisaVariantCode variant;
  enum PisaStrategyCode strategy;
  /**
   * Fraction of key blocks approximated, in `[0, 1)`.
   */
  double sparsity;
  size_t block_size;
  size_t group_size;
  double epsilon;
  /**
   * Use the fused kernel (Hybrid only).
   */
  bool streaming;
  /**
   * Accumulate the fused kernel in f32.
   */
  bool accum_f32;
} PisaRunOptions;

typedef struct PisaErrorMetrics {
  double l1_rel;
  double l2_rel;
  double max_abs;
} PisaErrorMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Null-terminated library version; static storage, do not free.
 */
const char *pisa_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * always null-terminated when `len > 0`). Returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t pisa_last_error_message(char *buf, size_t len);

/**
 * Defaults: Hybrid, plain routing, sparsity 0.875, `B = 64`, `C = 8`.
 */
struct PisaRunOptions pisa_run_options_default(void);

/**
 * I.i.d. normal bundle, stored as f64.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum PisaStatus pisa_bundle_gen_gaussian(uint64_t seed,
                                         size_t heads,
                                         size_t seq_len,
                                         size_t head_dim,
                                         double std,
                                         struct PisaBundle **out);

/**
 * Clustered-key bundle, stored as f64.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum PisaStatus pisa_bundle_gen_clustered(uint64_t seed,
                                          size_t heads,
                                          size_t seq_len,
                                          size_t head_dim,
                                          size_t n_clusters,
                                          double concentration,
                                          double noise_std,
                                          struct PisaBundle **out);

/**
 * Copies caller-owned row-major `[heads][seq_len][head_dim]` arrays into a bundle.
 *
 * # Safety
 * `q`, `k`, `v` must each be valid for `heads * seq_len * head_dim` reads;
 * `out` must be valid for a pointer write.
 */
enum PisaStatus pisa_bundle_from_data(size_t heads,
                                      size_t seq_len,
                                      size_t head_dim,
                                      enum PisaDtypeCode dtype,
                                      const double *q,
                                      const double *k,
                                      const double *v,
                                      struct PisaBundle **out);

/**
 * Reads a PQKV file.
 *
 * # Safety
 * `path` must be a null-terminated string; `out` valid for a pointer write.
 */
enum PisaStatus pisa_bundle_read(const char *path, struct PisaBundle **out);

/**
 * Writes a PQKV file.
 *
 * # Safety
 * `bundle` must come from this library; `path` must be null-terminated.
 */
enum PisaStatus pisa_bundle_write(const struct PisaBundle *bundle, const char *path);

/**
 * # Safety
 * `bundle` must come from this library; the out pointers may be null.
 */
enum PisaStatus pisa_bundle_shape(const struct PisaBundle *bundle,
                                  size_t *heads,
                                  size_t *seq_len,
                                  size_t *head_dim);

/**
 * # Safety
 * `bundle` must be null or come from this library, and not be used afterwards.
 */
void pisa_bundle_free(struct PisaBundle *bundle);

/**
 * Block statistics, routing and one piecewise pass on every head.
 *
 * # Safety
 * `bundle` must come from this library; `opts` must be valid or null for
 * defaults; `out` must be valid for a pointer write.
 */
enum PisaStatus pisa_run(const struct PisaBundle *bundle,
                         const struct PisaRunOptions *opts,
                         struct PisaResult **out);

/**
 * Exact softmax attention on every head.
 *
 * # Safety
 * `bundle` must come from this library; `out` valid for a pointer write.
 */
enum PisaStatus pisa_dense(const struct PisaBundle *bundle, struct PisaResult **out);

/**
 * # Safety
 * `result` must come from this library; the out pointers may be null.
 */
enum PisaStatus pisa_result_shape(const struct PisaResult *result,
                                  size_t *heads,
                                  size_t *rows,
                                  size_t *cols,
                                  double *realized_sparsity);

/**
 * Copies one head's `rows x cols` output, row-major, into `buf`.
 *
 * # Safety
 * `result` must come from this library; `buf` valid for `len` writes.
 */
enum PisaStatus pisa_result_output(const struct PisaResult *result,
                                   size_t head,
                                   double *buf,
                                   size_t len);

/**
 * Copies one head's per-row denominators `D_t` into `buf` (not available
 * for results of [`pisa_dense`]).
 *
 * # Safety
 * `result` must come from this library; `buf` valid for `len` writes.
 */
enum PisaStatus pisa_result_denominators(const struct PisaResult *result,
                                         size_t head,
                                         double *buf,
                                         size_t len);

/**
 * Error metrics of one head of `approx` against the same head of `reference`.
 *
 * # Safety
 * Both results must come from this library; `metrics` valid for a write.
 */
enum PisaStatus pisa_compare(const struct PisaResult *approx,
                             const struct PisaResult *reference,
                             size_t head,
                             struct PisaErrorMetrics *metrics);

/**
 * # Safety
 * `result` must be null or come from this library, and not be used afterwards.
 */
void pisa_result_free(struct PisaResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PISA_H */
