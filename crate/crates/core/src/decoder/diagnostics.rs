//! Attention and matching diagnostics over a finished forward pass.

use serde::Serialize;

use super::{CrossMode, LayerOutput};
use crate::assignment::Assignment;
use crate::geometry::{iou, query_distance_total, BBox};

/// A query counts toward a GT in the queries-per-GT histogram when that GT
/// is its nearest and they overlap at least this much.
pub const BINNING_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerAttention {
    pub layer: usize,
    pub cross_mode: CrossMode,
    /// Over matched queries: share of cross points not inside the query's
    /// own reference box.
    pub outside_reference_box: f64,
    /// Over matched queries: share of cross points not inside the matched GT.
    pub outside_matched_gt: f64,
    /// Of the points outside the matched GT, the share inside another GT.
    /// `None` when no point falls outside.
    pub outside_in_other_gt: Option<f64>,
    /// Share of GTs matched to the same query as in the previous layer.
    pub similarity_to_previous: Option<f64>,
    /// Mean IoU between each query's box here and in the previous layer.
    pub mean_iou_to_previous: Option<f64>,
    /// `queries_per_gt[n]` is the number of GTs with exactly `n` queries.
    pub queries_per_gt: Vec<usize>,
    pub missed_gts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionReport {
    pub layers: Vec<LayerAttention>,
}

fn share(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Per-layer attention and matching statistics. `assignments[t]` is the
/// matching of layer `t`'s predictions to `gts`.
pub fn attention_diagnostics(layers: &[LayerOutput], gts: &[BBox], assignments: &[Assignment]) -> AttentionReport {
    let mut out = Vec::with_capacity(layers.len());
    for (t, (layer, assignment)) in layers.iter().zip(assignments).enumerate() {
        let qs = &layer.query_set;
        let (mut total, mut outside_ref, mut outside_gt, mut in_other) = (0usize, 0usize, 0usize, 0usize);
        for (g, &p) in assignment.gt_to_pred.iter().enumerate() {
            let reference = &qs.reference_boxes[p];
            for &[x, y] in &qs.cross_points[p] {
                total += 1;
                if !reference.contains(x, y) {
                    outside_ref += 1;
                }
                if !gts[g].contains(x, y) {
                    outside_gt += 1;
                    if gts.iter().enumerate().any(|(h, b)| h != g && b.contains(x, y)) {
                        in_other += 1;
                    }
                }
            }
        }
        let previous = t.checked_sub(1).map(|s| (&layers[s], &assignments[s]));
        let similarity_to_previous = previous.map(|(_, prev)| {
            let same = prev.gt_to_pred.iter().zip(&assignment.gt_to_pred).filter(|(a, b)| a == b).count();
            share(same, assignment.gt_to_pred.len())
        });
        let mean_iou_to_previous = previous.map(|(prev, _)| {
            let n = layer.boxes.len();
            let sum: f64 = prev.boxes.iter().zip(&layer.boxes).map(|(a, b)| iou(a, b)).sum();
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        });
        let counts = queries_per_gt(&layer.boxes, gts);
        let mut histogram = vec![0usize; counts.iter().copied().max().unwrap_or(0) + 1];
        for &c in &counts {
            histogram[c] += 1;
        }
        out.push(LayerAttention {
            layer: t,
            cross_mode: qs.cross_mode,
            outside_reference_box: share(outside_ref, total),
            outside_matched_gt: share(outside_gt, total),
            outside_in_other_gt: (outside_gt > 0).then(|| share(in_other, outside_gt)),
            similarity_to_previous,
            mean_iou_to_previous,
            missed_gts: counts.iter().filter(|&&c| c == 0).count(),
            queries_per_gt: histogram,
        });
    }
    AttentionReport { layers: out }
}

/// Number of predicted boxes binned to each GT: nearest GT by query
/// distance (ties to the lower index), kept only at IoU >= [`BINNING_IOU`].
pub fn queries_per_gt(boxes: &[BBox], gts: &[BBox]) -> Vec<usize> {
    let mut counts = vec![0; gts.len()];
    for b in boxes {
        let nearest = gts
            .iter()
            .enumerate()
            .map(|(g, gt)| (query_distance_total(b, gt), g))
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        if let Some((_, g)) = nearest {
            if iou(b, &gts[g]) >= BINNING_IOU {
                counts[g] += 1;
            }
        }
    }
    counts
}
