/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef QUEUECAP_H
#define QUEUECAP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.
 */
typedef enum QcStatus {
  QC_STATUS_OK = 0,
  QC_STATUS_NULL_POINTER = 1,
  QC_STATUS_INVALID_ARGUMENT = 2,
  QC_STATUS_UNSTABLE_RATE = 3,
  QC_STATUS_NON_CONVERGENCE = 4,
  QC_STATUS_BUDGET_EXCEEDED = 5,
  QC_STATUS_INTERNAL = 6,
} QcStatus;

/**
 * A service-time law.
 */
typedef struct QcService QcService;

/**
 * Both entropy suprema at one rate.
 */
typedef struct QcGap {
  double lambda;
  double h_feedback_bits;
  double h_weak_bits;
  double gap_bits;
  bool strict;
} QcGap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *qc_last_error_message(void);

/**
 * Uniform service on {1, 2}.
 */
struct QcService *qc_service_binary12(void);

/**
 * Geometric service on {1, 2, ...} with rate `mu`; NULL on bad input.
 */
struct QcService *qc_service_geometric(double mu);

/**
 * Service of exactly `k >= 1` slots; NULL on bad input.
 */
struct QcService *qc_service_deterministic(size_t k);

/**
 * Service with `P(S = i) = probs[i]`, `i < len`; NULL on bad input.
 *
 * # Safety
 * `probs` must point to `len` readable doubles.
 */
struct QcService *qc_service_custom(const double *probs, size_t len);

/**
 * Releases a service; NULL is ignored.
 *
 * # Safety
 * `service` must come from a `qc_service_*` constructor and not be freed twice.
 */
void qc_service_free(struct QcService *service);

/**
 * Service rate `1 / E[S]`, or NaN for NULL.
 *
 * # Safety
 * `service` must be NULL or a live handle.
 */
double qc_service_mu(const struct QcService *service);

/**
 * Feedback capacity at rate `lambda`, bits per slot.
 *
 * # Safety
 * `service` must be a live handle and `out` writable.
 */
enum QcStatus qc_feedback_capacity(const struct QcService *service, double lambda, double *out);

/**
 * Upper bound on the weak-feedback capacity at rate `lambda`, bits per slot.
 *
 * # Safety
 * `service` must be a live handle and `out` writable.
 */
enum QcStatus qc_weak_feedback_bound(const struct QcService *service, double lambda, double *out);

/**
 * `lambda (H(g_lambda) - H(S))`, bits per slot.
 *
 * # Safety
 * `service` must be a live handle and `out` writable.
 */
enum QcStatus qc_closed_form_capacity(const struct QcService *service, double lambda, double *out);

/**
 * Both entropy suprema at `lambda` and their difference.
 *
 * # Safety
 * `service` must be a live handle and `out` writable.
 */
enum QcStatus qc_gap_check(const struct QcService *service, double lambda, struct QcGap *out);

/**
 * Entropy of the geometric law on {1, 2, ...} with mean `1 / lambda`, bits.
 *
 * # Safety
 * `out` must be writable.
 */
enum QcStatus qc_geometric_entropy(double lambda, double *out);

/**
 * The rate at which the two binary-service optimal output laws could coincide.
 */
double qc_critical_lambda_binary(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUEUECAP_H */
