#ifndef GIST_H
#define GIST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GistStatus {
  GIST_STATUS_OK = 0,
  GIST_STATUS_NULL_POINTER = 1,
  GIST_STATUS_INVALID_ARGUMENT = 2,
  GIST_STATUS_IO = 3,
  GIST_STATUS_PARSE = 4,
  GIST_STATUS_DIMENSION_MISMATCH = 5,
  GIST_STATUS_ZERO_VECTOR = 6,
  GIST_STATUS_CONFIG = 7,
  GIST_STATUS_INTERNAL = 8,
  GIST_STATUS_PANIC = 9,
} GistStatus;

typedef enum GistSplit {
  GIST_SPLIT_TRAIN = 0,
  GIST_SPLIT_VAL = 1,
  GIST_SPLIT_TEST = 2,
} GistSplit;

/**
 * Opaque encoder backend, optionally with projection heads.
 */
typedef struct GistBackend GistBackend;

/**
 * Opaque dataset manifest.
 */
typedef struct GistManifest GistManifest;

/**
 * Opaque linear probe.
 */
typedef struct GistProbe GistProbe;

/**
 * Opaque zero-shot head.
 */
typedef struct GistZeroShotHead GistZeroShotHead;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The
 * pointer stays valid until the next gist call on the same thread.
 */
const char *gist_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gist_version(void);

/**
 * Writes the unit-norm copy of `v` into `out` (both of length `d`).
 *
 * # Safety
 * `v` and `out` must point to `d` readable / writable doubles.
 */
enum GistStatus gist_l2_normalize(const double *v, size_t d, double *out);

/**
 * # Safety
 * `u` and `v` must point to `d` readable doubles; `out` to one double.
 */
enum GistStatus gist_cosine_similarity(const double *u, const double *v, size_t d, double *out);

/**
 * Symmetric contrastive loss over `b` unit-norm image/text rows of width
 * `d` (row-major). The gradient pointers may be null; when given they
 * receive `b*d` values each (and one value for `grad_scale`).
 *
 * # Safety
 * Pointers must be valid for the sizes described above.
 */
enum GistStatus gist_contrastive_loss(const double *images,
                                      const double *texts,
                                      size_t b,
                                      size_t d,
                                      double scale,
                                      double *loss,
                                      double *grad_images,
                                      double *grad_texts,
                                      double *grad_scale);

/**
 * Indices of the `n` candidate rows most similar to `image`, best first.
 * Equal scores rank the lower index first. `out_indices` must hold
 * `min(n, m)` entries; the number written goes to `out_count`.
 *
 * # Safety
 * `image` holds `d` doubles, `candidates` holds `m*d` doubles row-major.
 */
enum GistStatus gist_match_top_n(const double *image,
                                 const double *candidates,
                                 size_t m,
                                 size_t d,
                                 size_t n,
                                 size_t *out_indices,
                                 size_t *out_count);

/**
 * Top-`k` accuracy of `n` score rows of width `c` against `labels`.
 *
 * # Safety
 * `scores` holds `n*c` doubles, `labels` holds `n` entries.
 */
enum GistStatus gist_topk_accuracy(const double *scores,
                                   const uint32_t *labels,
                                   size_t n,
                                   size_t c,
                                   size_t k,
                                   double *out);

/**
 * Bootstrap mean and population std of top-`k` accuracy.
 *
 * # Safety
 * As for [`gist_topk_accuracy`]; `out_mean` and `out_std` are single doubles.
 */
enum GistStatus gist_bootstrap_accuracy(const double *scores,
                                        const uint32_t *labels,
                                        size_t n,
                                        size_t c,
                                        size_t k,
                                        size_t resamples,
                                        uint64_t seed,
                                        double *out_mean,
                                        double *out_std);

/**
 * # Safety
 * `path` is a NUL-terminated UTF-8 path; `out` receives a new handle.
 */
enum GistStatus gist_manifest_load(const char *path, struct GistManifest **out);

/**
 * # Safety
 * `m` must be a live handle; `out` receives the number of classes.
 */
enum GistStatus gist_manifest_class_count(const struct GistManifest *m, size_t *out);

/**
 * # Safety
 * `m` must be a live handle; `out` receives the image count of `split`.
 */
enum GistStatus gist_manifest_split_count(const struct GistManifest *m,
                                          enum GistSplit split,
                                          size_t *out);

/**
 * # Safety
 * `m` must come from [`gist_manifest_load`] or be null.
 */
void gist_manifest_free(struct GistManifest *m);

/**
 * Opens an encoder by model id. `heads_stem` may be null; otherwise it
 * names saved projection heads to apply on top.
 *
 * # Safety
 * String arguments are NUL-terminated UTF-8; `out` receives a new handle.
 */
enum GistStatus gist_backend_open(const char *model_id,
                                  const char *heads_stem,
                                  struct GistBackend **out);

/**
 * Embedding width produced by the backend.
 *
 * # Safety
 * `b` must be a live handle.
 */
enum GistStatus gist_backend_dim(const struct GistBackend *b, size_t *out);

/**
 * Text embedding (not normalized) written to `out` (length `d`).
 *
 * # Safety
 * `b` must be a live handle, `text` NUL-terminated UTF-8, `out` `d` doubles.
 */
enum GistStatus gist_backend_encode_text(const struct GistBackend *b,
                                         const char *text,
                                         double *out,
                                         size_t d);

/**
 * Image embedding of the raw file bytes (not normalized).
 *
 * # Safety
 * `bytes` holds `len` bytes; otherwise as [`gist_backend_encode_text`].
 */
enum GistStatus gist_backend_encode_image(const struct GistBackend *b,
                                          const uint8_t *bytes,
                                          size_t len,
                                          double *out,
                                          size_t d);

/**
 * # Safety
 * `b` must come from [`gist_backend_open`] or be null.
 */
void gist_backend_free(struct GistBackend *b);

/**
 * # Safety
 * `stem` is a NUL-terminated UTF-8 path stem; `out` receives a new handle.
 */
enum GistStatus gist_probe_load(const char *stem, struct GistProbe **out);

/**
 * # Safety
 * `p` must be a live handle.
 */
enum GistStatus gist_probe_class_count(const struct GistProbe *p, size_t *out);

/**
 * Class logits for one embedding. `out` holds at least the class count.
 *
 * # Safety
 * `embedding` holds `d` doubles, `out` holds `out_len` doubles.
 */
enum GistStatus gist_probe_scores(const struct GistProbe *p,
                                  const double *embedding,
                                  size_t d,
                                  double *out,
                                  size_t out_len);

/**
 * # Safety
 * `p` must come from [`gist_probe_load`] or be null.
 */
void gist_probe_free(struct GistProbe *p);

/**
 * # Safety
 * `stem` is a NUL-terminated UTF-8 path stem; `out` receives a new handle.
 */
enum GistStatus gist_zeroshot_load(const char *stem, struct GistZeroShotHead **out);

/**
 * Cosine similarity to each class embedding.
 *
 * # Safety
 * As for [`gist_probe_scores`].
 */
enum GistStatus gist_zeroshot_scores(const struct GistZeroShotHead *h,
                                     const double *embedding,
                                     size_t d,
                                     double *out,
                                     size_t out_len);

/**
 * # Safety
 * `h` must come from [`gist_zeroshot_load`] or be null.
 */
void gist_zeroshot_free(struct GistZeroShotHead *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GIST_H */
