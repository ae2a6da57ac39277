#ifndef LOOKAT_H
#define LOOKAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every `lk_*` call.
typedef enum LkStatus {
  LK_STATUS_OK = 0,
  LK_STATUS_NULL_POINTER = 1,
  LK_STATUS_INVALID_ARGUMENT = 2,
  LK_STATUS_IO = 3,
  LK_STATUS_FORMAT = 4,
  LK_STATUS_SHAPE_MISMATCH = 5,
  LK_STATUS_NON_FINITE = 6,
  LK_STATUS_INSUFFICIENT_CALIBRATION = 7,
  LK_STATUS_CORRUPT_CODE = 8,
  LK_STATUS_OUT_OF_RANGE = 9,
  LK_STATUS_BUFFER_TOO_SMALL = 10,
  LK_STATUS_PANIC = 11,
} LkStatus;

// Trained product-quantization codebook.
typedef struct LkCodebook LkCodebook;

// Encoded keys, `m` one-byte codes per token.
typedef struct LkCodes LkCodes;

// Attention dump: queries, keys and values of shape `[H, L, d_k]`.
typedef struct LkDump LkDump;

// Fidelity of an approximation against exact attention.
typedef struct LkFidelity {
  double cosine_sim;
  double kl_div;
  double spearman_rho;
  double top5_acc;
} LkFidelity;

typedef struct LkCompressionStats {
  double bytes_per_token_baseline;
  double bytes_per_token_compressed;
  double ratio;
  uint64_t codebook_bytes;
} LkCompressionStats;

// Per-query cost of one scoring method. `flops_entry_convention` is 0 when
// the convention does not apply.
typedef struct LkCost {
  uint64_t flops;
  uint64_t flops_entry_convention;
  uint64_t bytes_loaded;
  double bytes_per_key;
} LkCost;

// Message of the last failed call on this thread, or an empty string. The
// pointer stays valid until the next `lk_*` call on the same thread.
const char *lk_last_error_message(void);

// Static name of a status code.
const char *lk_status_name(enum LkStatus status);

// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum LkStatus lk_dump_load(const char *path, struct LkDump **out);

// # Safety
// `dump` must come from this library; `path` must be NUL-terminated.
enum LkStatus lk_dump_save(const struct LkDump *dump, const char *path);

// Builds a dump from three row-major `[H, L, d_k]` arrays, copied.
//
// # Safety
// `queries`, `keys` and `values` must each point to `H * L * d_k` floats.
enum LkStatus lk_dump_from_arrays(size_t head_count,
                                  size_t seq_len,
                                  size_t head_dim,
                                  const float *queries,
                                  const float *keys,
                                  const float *values,
                                  bool causal,
                                  struct LkDump **out);

// Synthetic dump. `num_clusters == 0` draws isotropic Gaussian keys, otherwise
// keys cluster around that many centers with the given spread.
//
// # Safety
// `out` must be a writable pointer.
enum LkStatus lk_synth_generate(size_t head_count,
                                size_t seq_len,
                                size_t head_dim,
                                size_t num_clusters,
                                float spread,
                                uint64_t seed,
                                bool causal,
                                struct LkDump **out);

// # Safety
// `dump` must come from this library; the out pointers may be null.
enum LkStatus lk_dump_shape(const struct LkDump *dump,
                            size_t *head_count,
                            size_t *seq_len,
                            size_t *head_dim);

// # Safety
// `dump` must come from this library and not be used afterwards. Null is ignored.
void lk_dump_free(struct LkDump *dump);

// Trains a codebook on the dump's keys. `tolerance` below zero selects the default.
//
// # Safety
// `dump` must come from this library and `out` be writable.
enum LkStatus lk_codebook_train(const struct LkDump *dump,
                                size_t num_subspaces,
                                size_t num_centroids,
                                size_t kmeans_iters,
                                double tolerance,
                                uint64_t seed,
                                struct LkCodebook **out);

// # Safety
// `path` must be NUL-terminated and `out` writable.
enum LkStatus lk_codebook_load(const char *path, struct LkCodebook **out);

// # Safety
// `codebook` must come from this library; `path` must be NUL-terminated.
enum LkStatus lk_codebook_save(const struct LkCodebook *codebook, const char *path);

// # Safety
// `codebook` must come from this library; the out pointers may be null.
enum LkStatus lk_codebook_shape(const struct LkCodebook *codebook,
                                size_t *num_subspaces,
                                size_t *num_centroids,
                                size_t *sub_dim);

// # Safety
// `codebook` must come from this library and not be used afterwards. Null is ignored.
void lk_codebook_free(struct LkCodebook *codebook);

// # Safety
// `dump` and `codebook` must come from this library and `out` be writable.
enum LkStatus lk_encode(const struct LkDump *dump,
                        const struct LkCodebook *codebook,
                        struct LkCodes **out);

// # Safety
// `codes` must come from this library; the out pointers may be null.
enum LkStatus lk_codes_shape(const struct LkCodes *codes,
                             size_t *head_count,
                             size_t *seq_len,
                             size_t *num_subspaces);

// Copies the `[H, L, m]` code bytes into `out`.
//
// # Safety
// `out` must hold `out_len` bytes.
enum LkStatus lk_codes_copy(const struct LkCodes *codes, uint8_t *out, size_t out_len);

// # Safety
// `codes` must come from this library and not be used afterwards. Null is ignored.
void lk_codes_free(struct LkCodes *codes);

// Writes the `[m, K]` lookup tables for one query.
//
// # Safety
// `query` must hold `query_len` floats and `out` `out_len` floats.
enum LkStatus lk_build_luts(const struct LkCodebook *codebook,
                            const float *query,
                            size_t query_len,
                            float *out,
                            size_t out_len);

// Scores one query against every token of `head` through lookup tables,
// writing `L` unscaled scores.
//
// # Safety
// `query` must hold `query_len` floats and `out` `out_len` floats.
enum LkStatus lk_adc_scores(const struct LkCodebook *codebook,
                            const struct LkCodes *codes,
                            size_t head,
                            const float *query,
                            size_t query_len,
                            float *out,
                            size_t out_len);

// Exact attention output, `[H, L, d_k]` floats.
//
// # Safety
// `out` must hold `out_len` floats.
enum LkStatus lk_reference_attention(const struct LkDump *dump, float *out, size_t out_len);

// Attention output with keys scored from codes, `[H, L, d_k]` floats.
//
// # Safety
// `out` must hold `out_len` floats.
enum LkStatus lk_lookat_attention(const struct LkDump *dump,
                                  const struct LkCodebook *codebook,
                                  const struct LkCodes *codes,
                                  float *out,
                                  size_t out_len);

// Compares lookup-table attention against exact attention on the same dump.
//
// # Safety
// Handles must come from this library and `out` be writable.
enum LkStatus lk_evaluate_lookat(const struct LkDump *dump,
                                 const struct LkCodebook *codebook,
                                 const struct LkCodes *codes,
                                 struct LkFidelity *out);

// # Safety
// `out` must be writable.
enum LkStatus lk_compression_stats(size_t head_dim,
                                   size_t num_subspaces,
                                   size_t num_centroids,
                                   double baseline_bytes_per_dim,
                                   struct LkCompressionStats *out);

// # Safety
// `standard` and `lookup` must be writable.
enum LkStatus lk_cost_model(size_t seq_len,
                            size_t head_dim,
                            size_t num_subspaces,
                            size_t num_centroids,
                            size_t bytes_per_key_dim,
                            struct LkCost *standard,
                            struct LkCost *lookup);

#endif  /* LOOKAT_H */
