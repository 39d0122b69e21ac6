//! C ABI over the `pedset` core.
//!
//! Boxes cross the boundary as flat `double` arrays in corner order
//! `x_min, y_min, x_max, y_max`, four values per box. Every fallible call
//! returns one of the `PEDSET_*` status codes; a human readable message for the
//! most recent failure on the calling thread is available from
//! [`pedset_last_error`].
//!
//! Handles are heap objects owned by the caller after `*_new` succeeds and
//! must be released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pedset::assignment::{build_match_cost, solve_exact, solve_fast_km, Certificate, CostMatrix, MatchWeights, Prediction};
use pedset::evalmetrics::{evaluate, Detection, GtBox, ImageEval};
use pedset::geometry::{giou, iou, BBox};

pub const PEDSET_OK: i32 = 0;
/// A required pointer argument was null.
pub const PEDSET_ERR_NULL: i32 = 1;
/// Malformed input: bad box, probability outside [0, 1], zero candidates, and so on.
pub const PEDSET_ERR_INVALID: i32 = 2;
/// Sizes are inconsistent, e.g. more ground truths than predictions.
pub const PEDSET_ERR_SHAPE: i32 = 3;
/// The requested quantity is undefined for this input (GIoU of two empty boxes, AP without ground truth).
pub const PEDSET_ERR_UNDEFINED: i32 = 4;
/// A Rust panic was caught at the boundary.
pub const PEDSET_ERR_PANIC: i32 = 99;

pub const PEDSET_CERT_OPTIMAL_EXACT: i32 = 0;
pub const PEDSET_CERT_OPTIMAL_CERTIFIED: i32 = 1;
pub const PEDSET_CERT_FALLBACK_EXACT: i32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

/// Runs `body`, converting failures and panics into status codes.
fn guarded(body: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PEDSET_OK,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.code
        }
        Err(_) => {
            set_last_error("panic inside pedset");
            PEDSET_ERR_PANIC
        }
    }
}

/// Null is accepted only for empty slices.
unsafe fn input_slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::new(PEDSET_ERR_NULL, format!("{what} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

unsafe fn output_slice<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure::new(PEDSET_ERR_NULL, format!("{what} is null")));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(ptr, len) })
}

fn write_out<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(Failure::new(PEDSET_ERR_NULL, format!("{what} is null")));
    }
    unsafe { ptr.write(value) };
    Ok(())
}

fn boxes_from(flat: &[f64]) -> Result<Vec<BBox>, Failure> {
    flat.chunks_exact(4)
        .map(|c| BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| Failure::new(PEDSET_ERR_INVALID, e.to_string())))
        .collect()
}

unsafe fn one_box(ptr: *const f64, what: &str) -> Result<BBox, Failure> {
    let flat = unsafe { input_slice(ptr, 4, what)? };
    Ok(boxes_from(flat)?.remove(0))
}

/// Message for the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pedset_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `a` and `b` must point to four doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pedset_iou(a: *const f64, b: *const f64, out: *mut f64) -> i32 {
    guarded(|| {
        let (a, b) = unsafe { (one_box(a, "a")?, one_box(b, "b")?) };
        write_out(out, iou(&a, &b), "out")
    })
}

/// # Safety
/// Same contract as [`pedset_iou`].
#[no_mangle]
pub unsafe extern "C" fn pedset_giou(a: *const f64, b: *const f64, out: *mut f64) -> i32 {
    guarded(|| {
        let (a, b) = unsafe { (one_box(a, "a")?, one_box(b, "b")?) };
        let value = giou(&a, &b).map_err(|e| Failure::new(PEDSET_ERR_UNDEFINED, e.to_string()))?;
        write_out(out, value, "out")
    })
}

/// Opaque matching problem: predictions, ground truths and their cost table.
pub struct PedsetMatcher {
    cost: CostMatrix,
    pred_boxes: Vec<BBox>,
    gt_boxes: Vec<BBox>,
}

/// Builds the weighted matching cost between `n_pred` predictions and
/// `n_gt` ground truths.
///
/// # Safety
/// `probs` holds `n_pred` doubles, `pred_boxes` `4 * n_pred`, `gt_boxes`
/// `4 * n_gt`. `out` must be writable; it receives null on failure.
#[no_mangle]
pub unsafe extern "C" fn pedset_matcher_new(
    probs: *const f64,
    pred_boxes: *const f64,
    n_pred: usize,
    gt_boxes: *const f64,
    n_gt: usize,
    w_class: f64,
    w_l1: f64,
    w_giou: f64,
    out: *mut *mut PedsetMatcher,
) -> i32 {
    if !out.is_null() {
        unsafe { out.write(ptr::null_mut()) };
    }
    guarded(|| {
        let probs = unsafe { input_slice(probs, n_pred, "probs")? };
        let pred_flat = unsafe { input_slice(pred_boxes, 4 * n_pred, "pred_boxes")? };
        let gt_flat = unsafe { input_slice(gt_boxes, 4 * n_gt, "gt_boxes")? };
        let pred_boxes = boxes_from(pred_flat)?;
        let gt_boxes = boxes_from(gt_flat)?;
        let preds: Vec<Prediction> =
            probs.iter().zip(&pred_boxes).map(|(&prob, &bbox)| Prediction { prob, bbox }).collect();
        let weights = MatchWeights { class: w_class, l1: w_l1, giou: w_giou };
        let cost = build_match_cost(&preds, &gt_boxes, weights).map_err(assignment_failure)?;
        let handle = Box::new(PedsetMatcher { cost, pred_boxes, gt_boxes });
        write_out(out, Box::into_raw(handle), "out")
    })
}

fn assignment_failure(err: pedset::assignment::AssignmentError) -> Failure {
    use pedset::assignment::AssignmentError as E;
    let code = match err {
        E::MoreGtsThanPredictions { .. } | E::ShapeMismatch { .. } | E::BoxCountMismatch => PEDSET_ERR_SHAPE,
        _ => PEDSET_ERR_INVALID,
    };
    Failure::new(code, err.to_string())
}

fn certificate_code(cert: Certificate) -> i32 {
    match cert {
        Certificate::OptimalExact => PEDSET_CERT_OPTIMAL_EXACT,
        Certificate::OptimalCertified => PEDSET_CERT_OPTIMAL_CERTIFIED,
        Certificate::FallbackExact => PEDSET_CERT_FALLBACK_EXACT,
    }
}

/// Number of ground truths in the problem, or 0 for a null handle.
///
/// # Safety
/// `matcher` is null or a live handle from [`pedset_matcher_new`].
#[no_mangle]
pub unsafe extern "C" fn pedset_matcher_n_gt(matcher: *const PedsetMatcher) -> usize {
    unsafe { matcher.as_ref() }.map_or(0, |m| m.cost.n_gt())
}

/// Dense solve. `gt_to_pred` receives `n_gt` prediction indices.
///
/// # Safety
/// `matcher` is a live handle; `gt_to_pred` has room for `n_gt` entries;
/// `total_cost` is writable.
#[no_mangle]
pub unsafe extern "C" fn pedset_matcher_solve_exact(
    matcher: *const PedsetMatcher,
    gt_to_pred: *mut usize,
    total_cost: *mut f64,
) -> i32 {
    guarded(|| {
        let m = unsafe { matcher.as_ref() }.ok_or_else(|| Failure::new(PEDSET_ERR_NULL, "matcher is null"))?;
        let out = unsafe { output_slice(gt_to_pred, m.cost.n_gt(), "gt_to_pred")? };
        let result = solve_exact(&m.cost);
        out.copy_from_slice(&result.gt_to_pred);
        write_out(total_cost, result.total_cost, "total_cost")
    })
}

/// Candidate-pruned solve with `k_candidates` predictions per ground truth.
/// The assignment is optimal either way; `certificate` reports which path
/// produced it (`PEDSET_CERT_*`).
///
/// # Safety
/// As for [`pedset_matcher_solve_exact`]; `certificate` may be null.
#[no_mangle]
pub unsafe extern "C" fn pedset_matcher_solve_fast(
    matcher: *const PedsetMatcher,
    k_candidates: usize,
    gt_to_pred: *mut usize,
    total_cost: *mut f64,
    certificate: *mut i32,
) -> i32 {
    guarded(|| {
        let m = unsafe { matcher.as_ref() }.ok_or_else(|| Failure::new(PEDSET_ERR_NULL, "matcher is null"))?;
        let out = unsafe { output_slice(gt_to_pred, m.cost.n_gt(), "gt_to_pred")? };
        let result =
            solve_fast_km(&m.cost, &m.pred_boxes, &m.gt_boxes, k_candidates).map_err(assignment_failure)?;
        out.copy_from_slice(&result.gt_to_pred);
        if !certificate.is_null() {
            unsafe { certificate.write(certificate_code(result.certificate)) };
        }
        write_out(total_cost, result.total_cost, "total_cost")
    })
}

/// # Safety
/// `matcher` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pedset_matcher_free(matcher: *mut PedsetMatcher) {
    if !matcher.is_null() {
        drop(unsafe { Box::from_raw(matcher) });
    }
}

/// Opaque accumulator of per-image detections and ground truths.
pub struct PedsetEvaluator {
    images: Vec<ImageEval>,
}

#[no_mangle]
pub extern "C" fn pedset_evaluator_new() -> *mut PedsetEvaluator {
    Box::into_raw(Box::new(PedsetEvaluator { images: Vec::new() }))
}

/// Appends one image. `gt_ignore` may be null, meaning no ignore regions;
/// otherwise any nonzero byte marks that ground truth as an ignore region.
///
/// # Safety
/// `scores` holds `n_det` doubles and `det_boxes` `4 * n_det`; `gt_boxes`
/// holds `4 * n_gt` doubles and `gt_ignore`, if not null, `n_gt` bytes.
#[no_mangle]
pub unsafe extern "C" fn pedset_evaluator_add_image(
    evaluator: *mut PedsetEvaluator,
    scores: *const f64,
    det_boxes: *const f64,
    n_det: usize,
    gt_boxes: *const f64,
    gt_ignore: *const u8,
    n_gt: usize,
) -> i32 {
    guarded(|| {
        let ev = unsafe { evaluator.as_mut() }.ok_or_else(|| Failure::new(PEDSET_ERR_NULL, "evaluator is null"))?;
        let scores = unsafe { input_slice(scores, n_det, "scores")? };
        let det_boxes = boxes_from(unsafe { input_slice(det_boxes, 4 * n_det, "det_boxes")? })?;
        let gt_list = boxes_from(unsafe { input_slice(gt_boxes, 4 * n_gt, "gt_boxes")? })?;
        let ignore = if gt_ignore.is_null() { &[][..] } else { unsafe { input_slice(gt_ignore, n_gt, "gt_ignore")? } };
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Failure::new(PEDSET_ERR_INVALID, format!("non-finite score {bad}")));
        }
        let detections = scores.iter().zip(det_boxes).map(|(&score, bbox)| Detection { score, bbox }).collect();
        let gts = gt_list
            .into_iter()
            .enumerate()
            .map(|(i, bbox)| GtBox { bbox, ignore: ignore.get(i).is_some_and(|&f| f != 0) })
            .collect();
        let image_id = ev.images.len().to_string();
        ev.images.push(ImageEval { image_id, detections, gts });
        Ok(())
    })
}

/// Scores everything added so far. `mr2` is the log-average miss rate in
/// percent. Any output pointer may be null to skip it.
///
/// # Safety
/// `evaluator` is a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn pedset_evaluator_compute(
    evaluator: *const PedsetEvaluator,
    iou_thresh: f64,
    ap: *mut f64,
    mr2: *mut f64,
    recall: *mut f64,
) -> i32 {
    guarded(|| {
        let ev = unsafe { evaluator.as_ref() }.ok_or_else(|| Failure::new(PEDSET_ERR_NULL, "evaluator is null"))?;
        if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
            return Err(Failure::new(PEDSET_ERR_INVALID, format!("IoU threshold {iou_thresh} outside (0, 1]")));
        }
        let report = evaluate(&ev.images, iou_thresh).map_err(|e| {
            use pedset::evalmetrics::MetricsError as E;
            let code = match e {
                E::ApUndefined | E::MissRateUndefined => PEDSET_ERR_UNDEFINED,
                _ => PEDSET_ERR_INVALID,
            };
            Failure::new(code, e.to_string())
        })?;
        for (dst, value) in [(ap, report.ap), (mr2, report.mr2), (recall, report.recall)] {
            if !dst.is_null() {
                unsafe { dst.write(value) };
            }
        }
        Ok(())
    })
}

/// # Safety
/// `evaluator` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pedset_evaluator_free(evaluator: *mut PedsetEvaluator) {
    if !evaluator.is_null() {
        drop(unsafe { Box::from_raw(evaluator) });
    }
}
