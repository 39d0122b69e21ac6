//! Brute-force detection metrics: every distinct score is tried as a
//! threshold and each image is re-matched from scratch.

use pedset::evalmetrics::{Detection, ImageEval, MISS_RATE_FLOOR};
use pedset::geometry::BBox;

fn plain_iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max().min(b.x_max()) - a.x_min().max(b.x_min())).max(0.0);
    let h = (a.y_max().min(b.y_max()) - a.y_min().max(b.y_min())).max(0.0);
    let inter = w * h;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// TP / FP counts of one image keeping only detections scored at least `t`.
fn sweep_counts(img: &ImageEval, t: f64, thresh: f64) -> (usize, usize) {
    let mut kept: Vec<(usize, &Detection)> = img.detections.iter().enumerate().filter(|(_, d)| d.score >= t).collect();
    kept.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap().then(a.0.cmp(&b.0)));
    let mut taken = vec![false; img.gts.len()];
    let (mut tp, mut fp) = (0, 0);
    for (_, d) in kept {
        let mut best = None;
        let mut best_iou = thresh;
        for (g, gt) in img.gts.iter().enumerate() {
            let o = plain_iou(&d.bbox, &gt.bbox);
            if !gt.ignore && !taken[g] && o >= best_iou && best.is_none_or(|_| o > best_iou) {
                best = Some(g);
                best_iou = o;
            }
        }
        if let Some(g) = best {
            taken[g] = true;
            tp += 1;
        } else if !img.gts.iter().any(|gt| gt.ignore && plain_iou(&d.bbox, &gt.bbox) >= thresh) {
            fp += 1;
        }
    }
    (tp, fp)
}

pub struct SweepMetrics {
    pub ap: f64,
    pub mr2: f64,
    pub recall: f64,
}

pub fn brute_force_metrics(images: &[ImageEval], thresh: f64) -> SweepMetrics {
    let n_gt: usize = images.iter().map(|i| i.gts.iter().filter(|g| !g.ignore).count()).sum();
    let mut thresholds: Vec<f64> = images.iter().flat_map(|i| i.detections.iter().map(|d| d.score)).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    // (threshold, recall, precision, fppi), highest threshold first
    let mut points = Vec::new();
    for &t in &thresholds {
        let (tp, fp) = images.iter().map(|i| sweep_counts(i, t, thresh)).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        if tp + fp == 0 {
            continue;
        }
        points.push((
            t,
            tp as f64 / n_gt as f64,
            tp as f64 / (tp + fp) as f64,
            fp as f64 / images.len() as f64,
        ));
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for i in 0..points.len() {
        let envelope = points[i..].iter().map(|p| p.2).fold(0.0, f64::max);
        ap += (points[i].1 - prev) * envelope;
        prev = points[i].1;
    }
    let mut log_sum = 0.0;
    for s in 0..9 {
        let reference = 10f64.powf(-2.0 + 0.25 * s as f64);
        let lowest = points.iter().filter(|p| p.3 <= reference).min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let miss = lowest.map_or(1.0, |p| 1.0 - p.1).max(MISS_RATE_FLOOR);
        log_sum += miss.ln();
    }
    SweepMetrics { ap, mr2: 100.0 * (log_sum / 9.0).exp(), recall: points.last().map_or(0.0, |p| p.1) }
}
