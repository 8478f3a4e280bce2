#ifndef ECG_CONTRAST_H
#define ECG_CONTRAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Contrastive term codes for [`EcgObjective::contrastive`].
 */
#define ECG_TERM_NCE 0

#define ECG_TERM_WEIGHTED 1

#define ECG_TERM_NONE 2

/**
 * Result of every fallible call. The numeric values match the exit codes
 * of the `ecg-contrast` command-line tool where the categories overlap.
 */
typedef enum EcgStatus {
  ECG_STATUS_OK = 0,
  ECG_STATUS_OTHER = 1,
  ECG_STATUS_INVALID_CONFIG = 2,
  ECG_STATUS_IO = 3,
  ECG_STATUS_INVALID_DATA = 4,
  ECG_STATUS_NON_FINITE = 5,
  /**
   * A required pointer was null or a size was inconsistent.
   */
  ECG_STATUS_INVALID_ARGUMENT = 7,
  /**
   * The library panicked; this is a bug.
   */
  ECG_STATUS_PANIC = 8,
} EcgStatus;

/**
 * Opaque encoder handle.
 */
typedef struct EcgEncoder EcgEncoder;

/**
 * `contrastive + lambda * alignment`, divided by the coefficient sum when
 * `normalize` is set.
 */
typedef struct EcgObjective {
  uint32_t contrastive;
  double lambda;
  bool normalize;
} EcgObjective;

/**
 * Clinical covariates. Use NaN for an unrecorded measurement and -1 for an
 * unrecorded flag. `gender` is 0 for male, 1 for female.
 */
typedef struct EcgMetadata {
  double age;
  double sbp;
  double total_cholesterol;
  double hdl_cholesterol;
  int32_t gender;
  int32_t smoking;
  int32_t diabetes;
} EcgMetadata;

typedef struct EcgRisk {
  /**
   * Ten-year risk in (0, 1).
   */
  double r;
  /**
   * Number of covariates that were imputed.
   */
  uint8_t missing;
} EcgRisk;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ecg_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ecg_last_error(void);

/**
 * The default pretraining objective.
 */
struct EcgObjective ecg_objective_default(void);

/**
 * Parses `nce`, `weighted`, `dissim`, `nce+dissim[:lambda]` or
 * `weighted+dissim[:lambda]`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EcgStatus ecg_objective_parse(const char *name, struct EcgObjective *out_objective);

/**
 * SCORE2 risk with imputation of absent covariates. The imputation draw is
 * keyed by `(seed, subject_id)`, matching the pretraining pipeline.
 *
 * # Safety
 * `meta` and `out_risk` must be valid pointers.
 */
enum EcgStatus ecg_score2(const struct EcgMetadata *meta,
                          uint64_t subject_id,
                          uint64_t seed,
                          bool deterministic,
                          struct EcgRisk *out_risk);

/**
 * Weight matrix for `samples` subjects seen as two views each, views laid
 * out as `[a_1..a_B, b_1..b_B]`. Writes `(2B)^2` values row-major.
 *
 * # Safety
 * `risk` and `missing` must hold `samples` values, `out_weights` room for
 * `4 * samples * samples`.
 */
enum EcgStatus ecg_batch_weights(const double *risk,
                                 const uint8_t *missing,
                                 size_t samples,
                                 double alpha,
                                 double *out_weights);

/**
 * Loss value and, when `out_grad` is not NULL, its gradient with respect to
 * `z`. `z` is `(2 * samples, dim)` with the view layout of
 * [`ecg_batch_weights`]; `weights` may be NULL for objectives that need none.
 *
 * # Safety
 * Buffers must hold the stated number of values; `out_grad`, when given,
 * room for `2 * samples * dim`.
 */
enum EcgStatus ecg_loss(const double *z,
                        size_t samples,
                        size_t dim,
                        const double *weights,
                        const struct EcgObjective *objective_spec,
                        double tau,
                        double *out_value,
                        double *out_grad);

/**
 * Rank-based AUROC with ties counted as one half. `labels` are 0 or 1.
 *
 * # Safety
 * `scores` and `labels` must hold `n` values.
 */
enum EcgStatus ecg_auroc(const double *scores, const uint8_t *labels, size_t n, double *out_auroc);

/**
 * Causal Butterworth band-pass of order `order`, started in steady state
 * for the first sample. `out` may alias `x`.
 *
 * # Safety
 * `x` and `out` must hold `n` values.
 */
enum EcgStatus ecg_bandpass(const double *x,
                            size_t n,
                            double fs,
                            double low_hz,
                            double high_hz,
                            uint32_t order,
                            double *out_signal);

/**
 * The encoder input chain: resample to 500 Hz, band-pass 0.67-40 Hz, z-score.
 * The output length is written to `out_len`; when it exceeds `capacity`
 * nothing else is written and `ECG_STATUS_INVALID_ARGUMENT` is returned.
 *
 * # Safety
 * `x` must hold `n` values and `out_signal` room for `capacity`.
 */
enum EcgStatus ecg_preprocess(const double *x,
                              size_t n,
                              double fs,
                              double *out_signal,
                              size_t capacity,
                              size_t *out_len);

/**
 * Freshly initialized encoder from a preset (`tiny`, `s`, `m` or `l`).
 *
 * # Safety
 * `preset` must be NUL-terminated; `out_encoder` a valid pointer.
 */
enum EcgStatus ecg_encoder_from_preset(const char *preset,
                                       uint64_t seed,
                                       struct EcgEncoder **out_encoder);

/**
 * Encoder stored in a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out_encoder` a valid pointer.
 */
enum EcgStatus ecg_encoder_load(const char *path, struct EcgEncoder **out_encoder);

/**
 * Embedding width, or 0 for a NULL handle.
 *
 * # Safety
 * `encoder` must be NULL or a live handle.
 */
size_t ecg_encoder_output_dim(const struct EcgEncoder *encoder);

/**
 * Shortest input the encoder accepts, or 0 for a NULL handle.
 *
 * # Safety
 * `encoder` must be NULL or a live handle.
 */
size_t ecg_encoder_min_length(const struct EcgEncoder *encoder);

/**
 * Embeds `batch` preprocessed signals of `length` samples each into
 * `batch * output_dim` values.
 *
 * # Safety
 * `encoder` must be a live handle and the buffers must hold the stated sizes.
 */
enum EcgStatus ecg_encoder_embed(const struct EcgEncoder *encoder,
                                 const double *signals,
                                 size_t batch,
                                 size_t length,
                                 double *out_embeddings);

/**
 * Releases an encoder. NULL is ignored.
 *
 * # Safety
 * `encoder` must be NULL or a handle not yet freed.
 */
void ecg_encoder_free(struct EcgEncoder *encoder);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECG_CONTRAST_H */
