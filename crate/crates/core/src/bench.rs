//! Matching benchmark: synthetic instances, timed exact vs pruned solves,
//! and the CSV report.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::assignment::{
    build_match_cost, solve_exact, solve_fast_km, AssignmentError, Certificate, CostMatrix, MatchWeights,
    Prediction,
};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    /// Uniformly scattered boxes and confidences.
    Random,
    /// GTs in tight crowds, several noisy predictions per GT plus background.
    Clustered,
}

#[derive(Debug, Clone)]
pub struct MatchInstance {
    pub pred_boxes: Vec<BBox>,
    pub gt_boxes: Vec<BBox>,
    pub cost: CostMatrix,
}

impl MatchInstance {
    pub fn from_parts(
        preds: Vec<Prediction>,
        gt_boxes: Vec<BBox>,
        weights: MatchWeights,
    ) -> Result<Self, AssignmentError> {
        let cost = build_match_cost(&preds, &gt_boxes, weights)?;
        Ok(Self { pred_boxes: preds.iter().map(|p| p.bbox).collect(), gt_boxes, cost })
    }
}

fn normalized_box(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
    let w = w.clamp(1e-3, 1.0);
    let h = h.clamp(1e-3, 1.0);
    let x0 = (cx - 0.5 * w).clamp(0.0, 1.0 - w);
    let y0 = (cy - 0.5 * h).clamp(0.0, 1.0 - h);
    BBox::from_xywh(x0, y0, w, h).expect("clamped box is valid")
}

/// Pedestrian-shaped GT boxes packed into a few crowds, in normalized coordinates.
pub fn clustered_gt_boxes(rng: &mut ChaCha8Rng, n_gt: usize) -> Vec<BBox> {
    let n_clusters = rng.random_range(1..=4usize).min(n_gt.max(1));
    let centers: Vec<(f64, f64)> =
        (0..n_clusters).map(|_| (rng.random_range(0.15..0.85), rng.random_range(0.2..0.8))).collect();
    let spread_x = Normal::new(0.0, 0.12).unwrap();
    let spread_y = Normal::new(0.0, 0.04).unwrap();
    (0..n_gt)
        .map(|i| {
            let (cx, cy) = centers[i % n_clusters];
            let h = rng.random_range(0.06..0.25);
            let w = h * rng.random_range(0.35..0.45);
            normalized_box(cx + spread_x.sample(rng), cy + spread_y.sample(rng), w, h)
        })
        .collect()
}

/// Predictions for given GTs: roughly three quarters jittered duplicates of
/// the GTs, the rest scattered background with low confidence.
pub fn predictions_around(gts: &[BBox], n_pred: usize, rng: &mut ChaCha8Rng) -> Vec<Prediction> {
    let n_gt = gts.len();
    let near = if n_gt == 0 { 0 } else { (n_pred * 3 / 4).max(n_gt).min(n_pred) };
    let jitter = Normal::new(0.0, 0.15).unwrap();
    let mut preds = Vec::with_capacity(n_pred);
    for i in 0..n_pred {
        if i < near {
            let [cx, cy, w, h] = gts[i % n_gt].cxcywh();
            let bbox = normalized_box(
                cx + w * jitter.sample(rng),
                cy + h * jitter.sample(rng),
                w * (1.0 + jitter.sample(rng)),
                h * (1.0 + jitter.sample(rng)),
            );
            preds.push(Prediction { bbox, prob: rng.random_range(0.3..1.0) });
        } else {
            preds.push(Prediction { bbox: random_box(rng), prob: rng.random_range(0.0..0.4) });
        }
    }
    preds
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let h = rng.random_range(0.03..0.3);
    normalized_box(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), h * rng.random_range(0.3..1.0), h)
}

/// Builds one instance. `Clustered` puts roughly three quarters of the
/// predictions near GTs as jittered duplicates and scatters the rest.
pub fn generate_instance(
    kind: InstanceKind,
    n_pred: usize,
    n_gt: usize,
    weights: MatchWeights,
    rng: &mut ChaCha8Rng,
) -> Result<MatchInstance, AssignmentError> {
    let (gt_boxes, preds) = match kind {
        InstanceKind::Random => {
            let gts: Vec<BBox> = (0..n_gt).map(|_| random_box(rng)).collect();
            let preds: Vec<Prediction> = (0..n_pred)
                .map(|_| Prediction { bbox: random_box(rng), prob: rng.random_range(0.0..1.0) })
                .collect();
            (gts, preds)
        }
        InstanceKind::Clustered => {
            let gts = clustered_gt_boxes(rng, n_gt);
            let preds = predictions_around(&gts, n_pred, rng);
            (gts, preds)
        }
    };
    MatchInstance::from_parts(preds, gt_boxes, weights)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub instance_id: usize,
    pub n_q: usize,
    pub n_g: usize,
    pub k: usize,
    pub time_exact_ns: u128,
    pub time_fast_ns: u128,
    pub certificate: Certificate,
    pub cost_exact: f64,
    pub cost_fast: f64,
}

impl BenchRow {
    pub fn cost_matches(&self, tol: f64) -> bool {
        (self.cost_exact - self.cost_fast).abs() <= tol
    }
}

/// Times both solvers on one instance, taking the best of `repeats` runs each.
pub fn time_instance(id: usize, inst: &MatchInstance, k: usize, repeats: usize) -> Result<BenchRow, AssignmentError> {
    let repeats = repeats.max(1);
    let mut exact = None;
    let mut best_exact = u128::MAX;
    for _ in 0..repeats {
        let t = Instant::now();
        let a = solve_exact(&inst.cost);
        best_exact = best_exact.min(t.elapsed().as_nanos());
        exact = Some(a);
    }
    let mut fast = None;
    let mut best_fast = u128::MAX;
    for _ in 0..repeats {
        let t = Instant::now();
        let a = solve_fast_km(&inst.cost, &inst.pred_boxes, &inst.gt_boxes, k)?;
        best_fast = best_fast.min(t.elapsed().as_nanos());
        fast = Some(a);
    }
    let (exact, fast) = (exact.unwrap(), fast.unwrap());
    Ok(BenchRow {
        instance_id: id,
        n_q: inst.cost.n_pred(),
        n_g: inst.cost.n_gt(),
        k,
        time_exact_ns: best_exact,
        time_fast_ns: best_fast,
        certificate: fast.certificate,
        cost_exact: exact.total_cost,
        cost_fast: fast.total_cost,
    })
}

pub const CSV_HEADER: &str = "instance_id,N_q,N_g,k,time_exact_ns,time_fast_ns,certificate";

pub fn write_csv<W: Write>(mut out: W, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.instance_id,
            r.n_q,
            r.n_g,
            r.k,
            r.time_exact_ns,
            r.time_fast_ns,
            r.certificate.as_str()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub instances: usize,
    pub cost_mismatches: usize,
    pub optimal_certified: usize,
    pub fallback_exact: usize,
    pub median_exact_ns: u128,
    pub median_fast_ns: u128,
    pub median_speedup: f64,
}

pub fn median(values: &mut [u128]) -> u128 {
    if values.is_empty() {
        return 0;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2
    }
}

pub fn summarize(rows: &[BenchRow], tol: f64) -> BenchSummary {
    let mut exact: Vec<u128> = rows.iter().map(|r| r.time_exact_ns).collect();
    let mut fast: Vec<u128> = rows.iter().map(|r| r.time_fast_ns).collect();
    let median_exact_ns = median(&mut exact);
    let median_fast_ns = median(&mut fast);
    BenchSummary {
        instances: rows.len(),
        cost_mismatches: rows.iter().filter(|r| !r.cost_matches(tol)).count(),
        optimal_certified: rows.iter().filter(|r| r.certificate == Certificate::OptimalCertified).count(),
        fallback_exact: rows.iter().filter(|r| r.certificate == Certificate::FallbackExact).count(),
        median_exact_ns,
        median_fast_ns,
        median_speedup: if median_fast_ns == 0 { f64::INFINITY } else { median_exact_ns as f64 / median_fast_ns as f64 },
    }
}

/// Deterministic per-instance RNG.
pub fn instance_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_instance_report_has_one_row() {
        let mut rng = instance_rng(1, 0);
        let inst = generate_instance(InstanceKind::Clustered, 1, 1, MatchWeights::default(), &mut rng).unwrap();
        let row = time_instance(0, &inst, 1, 1).unwrap();
        assert!(row.cost_matches(1e-9));
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn clustered_speed_probe() {
        let mut rows = Vec::new();
        for id in 0..20 {
            let mut rng = instance_rng(7, id);
            let inst = generate_instance(InstanceKind::Clustered, 400, 100, MatchWeights::default(), &mut rng).unwrap();
            rows.push(time_instance(id, &inst, 16, 3).unwrap());
        }
        let s = summarize(&rows, 1e-9);
        eprintln!("{s:?}");
        assert_eq!(s.cost_mismatches, 0);
    }
}
