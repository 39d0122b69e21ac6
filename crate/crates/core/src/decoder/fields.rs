//! Attention-field construction and box refinement.

use super::ops::sigmoid;
use super::RefineMode;
use crate::assignment::nearest_candidates;
use crate::geometry::{query_distance_total, BBox};

/// For every box, the `k` boxes closest under `1 - GIoU`, ordered by
/// distance with ties going to the lower index. A box's own index comes
/// first unless lower-indexed duplicates fill the neighborhood. `k` is
/// clamped to the number of boxes.
pub fn dq_neighborhood(boxes: &[BBox], k: usize) -> Vec<Vec<usize>> {
    let k = k.min(boxes.len());
    if k == 0 {
        return vec![Vec::new(); boxes.len()];
    }
    nearest_candidates(boxes, boxes, k)
        .into_iter()
        .zip(boxes)
        .map(|(mut picked, b)| {
            let mut keyed: Vec<(f64, usize)> = picked.iter().map(|&j| (query_distance_total(b, &boxes[j]), j)).collect();
            keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            picked.clear();
            picked.extend(keyed.into_iter().map(|(_, j)| j));
            picked
        })
        .collect()
}

/// `R x R` points at fractions `1/(R+1) .. R/(R+1)` of the box, measured
/// from its top-left corner. Ordered with the x index outermost.
pub fn rf_grid(b: &BBox, side: usize) -> Vec<[f64; 2]> {
    let [x, y, w, h] = b.xywh();
    let denom = (side + 1) as f64;
    let mut points = Vec::with_capacity(side * side);
    for i in 1..=side {
        for j in 1..=side {
            points.push([x + i as f64 * w / denom, y + j as f64 * h / denom]);
        }
    }
    points
}

/// Logit-space inputs are kept this far away from 0 and 1.
const LOGIT_MARGIN: f64 = 1e-6;

fn clamp_unit(v: f64) -> (f64, f64) {
    if v <= 0.0 {
        (0.0, 0.0)
    } else if v >= 1.0 {
        (1.0, 0.0)
    } else {
        (v, 1.0)
    }
}

/// Applies box deltas to `prev` in normalized center-size space and clips
/// the result to the unit frame. Returns the new box and the Jacobian of its
/// corners with respect to the four deltas (`jac[corner][delta]`), zero where
/// a clamp is active.
pub fn refine_box(prev: &BBox, delta: [f64; 4], mode: RefineMode) -> (BBox, [[f64; 4]; 4]) {
    let base = prev.cxcywh();
    let mut ccwh = [0.0; 4];
    let mut slope = [0.0; 4];
    for j in 0..4 {
        match mode {
            RefineMode::Additive => {
                let (v, s) = clamp_unit(base[j] + delta[j]);
                ccwh[j] = v;
                slope[j] = s;
            }
            RefineMode::InverseSigmoid => {
                let p = base[j].clamp(LOGIT_MARGIN, 1.0 - LOGIT_MARGIN);
                let v = sigmoid((p / (1.0 - p)).ln() + delta[j]);
                ccwh[j] = v;
                slope[j] = v * (1.0 - v);
            }
        }
    }
    let [cx, cy, w, h] = ccwh;
    let raw = if mode == RefineMode::Additive && slope == [1.0; 4] {
        // Same map written on the corners, so a zero delta is exact.
        let [x0, y0, x1, y1] = prev.corners();
        [x0 + (delta[0] - 0.5 * delta[2]), y0 + (delta[1] - 0.5 * delta[3]), x1 + (delta[0] + 0.5 * delta[2]), y1 + (delta[1] + 0.5 * delta[3])]
    } else {
        [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h]
    };
    let (x0, mx0) = clamp_unit(raw[0]);
    let (y0, my0) = clamp_unit(raw[1]);
    let (x1, mx1) = clamp_unit(raw[2]);
    let (y1, my1) = clamp_unit(raw[3]);
    let mut jac = [[0.0; 4]; 4];
    jac[0][0] = mx0 * slope[0];
    jac[0][2] = -0.5 * mx0 * slope[2];
    jac[2][0] = mx1 * slope[0];
    jac[2][2] = 0.5 * mx1 * slope[2];
    jac[1][1] = my0 * slope[1];
    jac[1][3] = -0.5 * my0 * slope[3];
    jac[3][1] = my1 * slope[1];
    jac[3][3] = 0.5 * my1 * slope[3];
    let b = BBox::new(x0, y0, x1.max(x0), y1.max(y0)).expect("clipped box is valid");
    (b, jac)
}
