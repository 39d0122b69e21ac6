//! Per-layer set-prediction loss and visible/full target routing.
//!
//! Every decoder layer is matched and supervised on its own. A
//! [`LayerTargetPlan`] decides per layer whether the targets are the
//! visible-region boxes or the full-body boxes: the first `T - L` layers use
//! visible boxes and the last `L` use full boxes. Matching and loss of a
//! layer always use the same target kind.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{build_match_cost, solve_exact, Assignment, AssignmentError, MatchWeights, Prediction};
use crate::decoder::{LayerGrad, LayerOutput};
use crate::geometry::{giou_grad, query_distance_total, Annotation, BBox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SupervisionError {
    #[error("full-box layer count {full} must be in 1..={layers}")]
    FullLayersOutOfRange { layers: usize, full: usize },
    #[error("logits and boxes disagree in length ({logits} vs {boxes})")]
    LengthMismatch { logits: usize, boxes: usize },
    #[error("plan covers {plan} layers, got outputs for {outputs}")]
    PlanMismatch { plan: usize, outputs: usize },
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Visible,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTargetPlan {
    pub layers: usize,
    pub full_layers: usize,
    pub kinds: Vec<TargetKind>,
}

/// `[Visible] * (layers - full_layers) ++ [Full] * full_layers`.
pub fn plan_targets(layers: usize, full_layers: usize) -> Result<LayerTargetPlan, SupervisionError> {
    if full_layers == 0 || full_layers > layers {
        return Err(SupervisionError::FullLayersOutOfRange { layers, full: full_layers });
    }
    let mut kinds = vec![TargetKind::Visible; layers - full_layers];
    kinds.extend(std::iter::repeat_n(TargetKind::Full, full_layers));
    Ok(LayerTargetPlan { layers, full_layers, kinds })
}

/// Probabilities are clamped this far from 0 and 1 inside the logarithm.
pub const BCE_EPS: f64 = 1e-12;

fn bce(p: f64, target: bool) -> f64 {
    let q = if target { p } else { 1.0 - p };
    if q >= 1.0 {
        0.0
    } else {
        -q.max(BCE_EPS).ln()
    }
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss value split by term, with the assignment that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SetLoss {
    pub total: f64,
    pub class_term: f64,
    pub l1_term: f64,
    pub giou_term: f64,
    pub assignment: Assignment,
}

fn box_terms(boxes: &[BBox], targets: &[BBox], assignment: &Assignment) -> (f64, f64) {
    let mut l1 = 0.0;
    let mut giou = 0.0;
    for (g, &p) in assignment.gt_to_pred.iter().enumerate() {
        l1 += boxes[p].l1_distance(&targets[g]);
        giou += query_distance_total(&boxes[p], &targets[g]);
    }
    (l1, giou)
}

fn matched_flags(n: usize, assignment: &Assignment) -> Vec<bool> {
    let mut matched = vec![false; n];
    for &p in &assignment.gt_to_pred {
        matched[p] = true;
    }
    matched
}

/// Hungarian matching on the match cost, then
/// `w_cls * sum BCE + w_l1 * sum |box - target|_1 + w_giou * sum (1 - GIoU)`,
/// box terms over matched pairs only. Terms are plain sums.
pub fn set_loss(
    probs: &[f64],
    boxes: &[BBox],
    targets: &[BBox],
    weights: MatchWeights,
) -> Result<SetLoss, SupervisionError> {
    if probs.len() != boxes.len() {
        return Err(SupervisionError::LengthMismatch { logits: probs.len(), boxes: boxes.len() });
    }
    let preds: Vec<Prediction> = probs.iter().zip(boxes).map(|(&prob, &bbox)| Prediction { prob, bbox }).collect();
    let assignment = solve_exact(&build_match_cost(&preds, targets, weights)?);
    let matched = matched_flags(probs.len(), &assignment);
    let class_term: f64 = probs.iter().zip(&matched).map(|(&p, &m)| bce(p, m)).sum();
    let (l1_term, giou_term) = box_terms(boxes, targets, &assignment);
    Ok(SetLoss {
        total: weights.class * class_term + weights.l1 * l1_term + weights.giou * giou_term,
        class_term,
        l1_term,
        giou_term,
        assignment,
    })
}

/// The same loss evaluated from logits under a given assignment, with its
/// gradient with respect to logits and box corners.
pub fn set_loss_with_assignment(
    logits: &[f64],
    boxes: &[BBox],
    targets: &[BBox],
    weights: MatchWeights,
    assignment: &Assignment,
) -> (f64, LayerGrad) {
    let n = logits.len();
    let matched = matched_flags(n, assignment);
    let mut grad = LayerGrad::zeros(n);
    let mut class_term = 0.0;
    for i in 0..n {
        let y = if matched[i] { 1.0 } else { 0.0 };
        class_term += softplus(logits[i]) - y * logits[i];
        grad.logits[i] = weights.class * (sigmoid(logits[i]) - y);
    }
    let mut l1 = 0.0;
    let mut giou_loss = 0.0;
    for (g, &p) in assignment.gt_to_pred.iter().enumerate() {
        let pc = boxes[p].corners();
        let tc = targets[g].corners();
        for c in 0..4 {
            let diff = pc[c] - tc[c];
            l1 += diff.abs();
            grad.boxes[p][c] += weights.l1 * diff.signum() * (diff != 0.0) as u8 as f64;
        }
        match giou_grad(&boxes[p], &targets[g]) {
            Ok((value, dg)) => {
                giou_loss += 1.0 - value;
                for c in 0..4 {
                    grad.boxes[p][c] -= weights.giou * dg[c];
                }
            }
            Err(_) => giou_loss += query_distance_total(&boxes[p], &targets[g]),
        }
    }
    (weights.class * class_term + weights.l1 * l1 + weights.giou * giou_loss, grad)
}

/// What one layer was supervised with.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLoss {
    pub layer: usize,
    pub kind: TargetKind,
    /// The exact target boxes that entered both matching and loss.
    pub targets: Vec<BBox>,
    pub loss: SetLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutedLoss {
    pub total: f64,
    pub layers: Vec<LayerLoss>,
}

/// Target boxes of `kind`, skipping ignore-flagged annotations.
pub fn targets_of(annotations: &[Annotation], kind: TargetKind) -> Vec<BBox> {
    annotations
        .iter()
        .filter(|a| !a.ignore)
        .map(|a| match kind {
            TargetKind::Visible => a.vbox,
            TargetKind::Full => a.fbox,
        })
        .collect()
}

/// Matches and scores every layer against the targets its plan entry names.
pub fn routed_loss(
    outputs: &[LayerOutput],
    annotations: &[Annotation],
    plan: &LayerTargetPlan,
    weights: MatchWeights,
) -> Result<RoutedLoss, SupervisionError> {
    if plan.kinds.len() != outputs.len() {
        return Err(SupervisionError::PlanMismatch { plan: plan.kinds.len(), outputs: outputs.len() });
    }
    let mut layers = Vec::with_capacity(outputs.len());
    let mut total = 0.0;
    for (t, (out, &kind)) in outputs.iter().zip(&plan.kinds).enumerate() {
        let targets = targets_of(annotations, kind);
        let loss = set_loss(&out.class_probs, &out.boxes, &targets, weights)?;
        total += loss.total;
        layers.push(LayerLoss { layer: t, kind, targets, loss });
    }
    Ok(RoutedLoss { total, layers })
}

/// Value and upstream gradients of the routed loss with every layer's
/// assignment held fixed, in the form the decoder's backward pass takes.
pub fn routed_loss_gradients(outputs: &[LayerOutput], routed: &RoutedLoss, weights: MatchWeights) -> (f64, Vec<LayerGrad>) {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (out, layer) in outputs.iter().zip(&routed.layers) {
        let (v, g) =
            set_loss_with_assignment(&out.class_logits, &out.boxes, &layer.targets, weights, &layer.loss.assignment);
        total += v;
        grads.push(g);
    }
    (total, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::Certificate;
    use proptest::prelude::*;

    fn bx(c: [f64; 4]) -> BBox {
        BBox::new(c[0], c[1], c[2], c[3]).unwrap()
    }

    #[test]
    fn plan_examples() {
        assert_eq!(plan_targets(6, 6).unwrap().kinds, vec![TargetKind::Full; 6]);
        let p = plan_targets(6, 2).unwrap();
        assert_eq!(&p.kinds[..4], &[TargetKind::Visible; 4]);
        assert_eq!(&p.kinds[4..], &[TargetKind::Full; 2]);
        assert_eq!(plan_targets(1, 1).unwrap().kinds, vec![TargetKind::Full]);
        assert!(plan_targets(6, 0).is_err());
        assert!(plan_targets(3, 4).is_err());
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let gts = vec![bx([0.1, 0.1, 0.3, 0.5]), bx([0.5, 0.2, 0.6, 0.6])];
        let boxes = vec![gts[1], bx([0.0, 0.0, 0.1, 0.1]), gts[0]];
        let l = set_loss(&[1.0, 0.0, 1.0], &boxes, &gts, MatchWeights::default()).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(l.assignment.gt_to_pred, vec![2, 0]);
    }

    #[test]
    fn zero_gts_leave_only_the_class_term() {
        let boxes = vec![bx([0.1, 0.1, 0.3, 0.5]), bx([0.5, 0.2, 0.6, 0.6])];
        let l = set_loss(&[0.25, 0.5], &boxes, &[], MatchWeights::default()).unwrap();
        let expected = 2.0 * (-(0.75f64).ln() - (0.5f64).ln());
        assert!((l.total - expected).abs() < 1e-15);
        assert_eq!(l.l1_term, 0.0);
        assert!(l.assignment.gt_to_pred.is_empty());
    }

    #[test]
    fn two_predictions_one_gt_hand_sum() {
        // Costs with weights (2, 5, 2):
        //   pred 0: p 0.9, box [0,0,2,2] vs gt [0,0,2,3]: -1.8 + 5*1 + 2*(1 - 4/6) = 3.8667
        //   pred 1: p 0.6, box [0,0,2,3] exact:         -1.2 + 0 + 0             = -1.2
        // The permutation oracle picks pred 1.
        let gt = bx([0.0, 0.0, 2.0, 3.0]);
        let boxes = vec![bx([0.0, 0.0, 2.0, 2.0]), gt];
        let w = MatchWeights::default();
        let l = set_loss(&[0.9, 0.6], &boxes, &[gt], w).unwrap();
        assert_eq!(l.assignment.gt_to_pred, vec![1]);
        // BCE: pred 0 unmatched -> -ln(0.1); pred 1 matched -> -ln(0.6). Box terms are zero.
        let expected = 2.0 * (-(0.1f64).ln() - (0.6f64).ln());
        assert!((l.total - expected).abs() < 1e-12, "{} vs {expected}", l.total);
    }

    #[test]
    fn logit_gradients_match_differences() {
        let gts = vec![bx([0.1, 0.1, 0.3, 0.5]), bx([0.5, 0.2, 0.62, 0.6])];
        let boxes = vec![bx([0.12, 0.08, 0.33, 0.52]), bx([0.0, 0.0, 0.1, 0.1]), bx([0.47, 0.25, 0.6, 0.58])];
        let logits = [0.4, -1.2, 2.0];
        let w = MatchWeights::default();
        let a = Assignment { gt_to_pred: vec![0, 2], total_cost: 0.0, certificate: Certificate::OptimalExact };
        let (_, g) = set_loss_with_assignment(&logits, &boxes, &gts, w, &a);
        let h = 1e-6;
        for i in 0..3 {
            let mut lp = logits;
            lp[i] += h;
            let mut lm = logits;
            lm[i] -= h;
            let num = (set_loss_with_assignment(&lp, &boxes, &gts, w, &a).0
                - set_loss_with_assignment(&lm, &boxes, &gts, w, &a).0)
                / (2.0 * h);
            assert!((num - g.logits[i]).abs() < 1e-8);
            for c in 0..4 {
                let shift = |d: f64| {
                    let mut bs = boxes.clone();
                    let mut cs = bs[i].corners();
                    cs[c] += d;
                    bs[i] = bx(cs);
                    set_loss_with_assignment(&logits, &bs, &gts, w, &a).0
                };
                let num = (shift(h) - shift(-h)) / (2.0 * h);
                assert!((num - g.boxes[i][c]).abs() < 1e-6, "box {i} corner {c}: {num} vs {}", g.boxes[i][c]);
            }
        }
    }

    #[test]
    fn logit_and_probability_forms_agree() {
        let gts = vec![bx([0.1, 0.1, 0.3, 0.5])];
        let boxes = vec![bx([0.12, 0.08, 0.33, 0.52]), bx([0.6, 0.6, 0.7, 0.9])];
        let logits = [0.3, -0.8];
        let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let w = MatchWeights::default();
        let l = set_loss(&probs, &boxes, &gts, w).unwrap();
        let (v, _) = set_loss_with_assignment(&logits, &boxes, &gts, w, &l.assignment);
        assert!((v - l.total).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..0.8f64, 0.0..0.8f64, 0.01..0.2f64, 0.01..0.2f64).prop_map(|(x, y, w, h)| bx([x, y, x + w, y + h]))
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative(
            boxes in prop::collection::vec(arb_box(), 3..8),
            gts in prop::collection::vec(arb_box(), 0..3),
            probs in prop::collection::vec(0.0..1.0f64, 8),
        ) {
            let l = set_loss(&probs[..boxes.len()], &boxes, &gts, MatchWeights::default()).unwrap();
            prop_assert!(l.total >= 0.0 && l.class_term >= 0.0 && l.l1_term >= 0.0 && l.giou_term >= 0.0);
        }

        #[test]
        fn gt_order_does_not_matter(
            boxes in prop::collection::vec(arb_box(), 4..8),
            gts in prop::collection::vec(arb_box(), 1..4),
            probs in prop::collection::vec(0.0..1.0f64, 8),
            rot in 0usize..4,
        ) {
            let w = MatchWeights::default();
            let a = set_loss(&probs[..boxes.len()], &boxes, &gts, w).unwrap();
            let mut shuffled = gts.clone();
            shuffled.reverse();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            let b = set_loss(&probs[..boxes.len()], &boxes, &shuffled, w).unwrap();
            prop_assert!((a.total - b.total).abs() <= 1e-12 * a.total.abs().max(1.0));
            let pairs = |l: &SetLoss, t: &[BBox]| {
                let mut v: Vec<(usize, [u64; 4])> = l.assignment.gt_to_pred.iter().enumerate()
                    .map(|(g, &p)| (p, t[g].corners().map(f64::to_bits))).collect();
                v.sort();
                v
            };
            prop_assert_eq!(pairs(&a, &gts), pairs(&b, &shuffled));
        }
    }
}
