/* Generated by cbindgen. Do not edit. */

#ifndef PEDSET_H
#define PEDSET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define PEDSET_OK 0

/**
 * A required pointer argument was null.
 */
#define PEDSET_ERR_NULL 1

/**
 * Malformed input: bad box, probability outside [0, 1], zero candidates, and so on.
 */
#define PEDSET_ERR_INVALID 2

/**
 * Sizes are inconsistent, e.g. more ground truths than predictions.
 */
#define PEDSET_ERR_SHAPE 3

/**
 * The requested quantity is undefined for this input (GIoU of two empty boxes, AP without ground truth).
 */
#define PEDSET_ERR_UNDEFINED 4

/**
 * A Rust panic was caught at the boundary.
 */
#define PEDSET_ERR_PANIC 99

#define PEDSET_CERT_OPTIMAL_EXACT 0

#define PEDSET_CERT_OPTIMAL_CERTIFIED 1

#define PEDSET_CERT_FALLBACK_EXACT 2

/**
 * Opaque accumulator of per-image detections and ground truths.
 */
typedef struct PedsetEvaluator PedsetEvaluator;

/**
 * Opaque matching problem: predictions, ground truths and their cost table.
 */
typedef struct PedsetMatcher PedsetMatcher;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *pedset_last_error(void);

/**
 * # Safety
 * `a` and `b` must point to four doubles each; `out` must be writable.
 */
int32_t pedset_iou(const double *a, const double *b, double *out);

/**
 * # Safety
 * Same contract as [`pedset_iou`].
 */
int32_t pedset_giou(const double *a, const double *b, double *out);

/**
 * Builds the weighted matching cost between `n_pred` predictions and
 * `n_gt` ground truths.
 *
 * # Safety
 * `probs` holds `n_pred` doubles, `pred_boxes` `4 * n_pred`, `gt_boxes`
 * `4 * n_gt`. `out` must be writable; it receives null on failure.
 */
int32_t pedset_matcher_new(const double *probs,
                           const double *pred_boxes,
                           uintptr_t n_pred,
                           const double *gt_boxes,
                           uintptr_t n_gt,
                           double w_class,
                           double w_l1,
                           double w_giou,
                           struct PedsetMatcher **out);

/**
 * Number of ground truths in the problem, or 0 for a null handle.
 *
 * # Safety
 * `matcher` is null or a live handle from [`pedset_matcher_new`].
 */
uintptr_t pedset_matcher_n_gt(const struct PedsetMatcher *matcher);

/**
 * Dense solve. `gt_to_pred` receives `n_gt` prediction indices.
 *
 * # Safety
 * `matcher` is a live handle; `gt_to_pred` has room for `n_gt` entries;
 * `total_cost` is writable.
 */
int32_t pedset_matcher_solve_exact(const struct PedsetMatcher *matcher,
                                   uintptr_t *gt_to_pred,
                                   double *total_cost);

/**
 * Candidate-pruned solve with `k_candidates` predictions per ground truth.
 * The assignment is optimal either way; `certificate` reports which path
 * produced it (`PEDSET_CERT_*`).
 *
 * # Safety
 * As for [`pedset_matcher_solve_exact`]; `certificate` may be null.
 */
int32_t pedset_matcher_solve_fast(const struct PedsetMatcher *matcher,
                                  uintptr_t k_candidates,
                                  uintptr_t *gt_to_pred,
                                  double *total_cost,
                                  int32_t *certificate);

/**
 * # Safety
 * `matcher` is null or a handle not yet freed.
 */
void pedset_matcher_free(struct PedsetMatcher *matcher);

struct PedsetEvaluator *pedset_evaluator_new(void);

/**
 * Appends one image. `gt_ignore` may be null, meaning no ignore regions;
 * otherwise any nonzero byte marks that ground truth as an ignore region.
 *
 * # Safety
 * `scores` holds `n_det` doubles and `det_boxes` `4 * n_det`; `gt_boxes`
 * holds `4 * n_gt` doubles and `gt_ignore`, if not null, `n_gt` bytes.
 */
int32_t pedset_evaluator_add_image(struct PedsetEvaluator *evaluator,
                                   const double *scores,
                                   const double *det_boxes,
                                   uintptr_t n_det,
                                   const double *gt_boxes,
                                   const uint8_t *gt_ignore,
                                   uintptr_t n_gt);

/**
 * Scores everything added so far. `mr2` is the log-average miss rate in
 * percent. Any output pointer may be null to skip it.
 *
 * # Safety
 * `evaluator` is a live handle; non-null outputs must be writable.
 */
int32_t pedset_evaluator_compute(const struct PedsetEvaluator *evaluator,
                                 double iou_thresh,
                                 double *ap,
                                 double *mr2,
                                 double *recall);

/**
 * # Safety
 * `evaluator` is null or a handle not yet freed.
 */
void pedset_evaluator_free(struct PedsetEvaluator *evaluator);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEDSET_H */
