//! Detection metrics: all-point AP, log-average miss rate over FPPI and
//! recall, plus the line-delimited prediction format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox, GeometryError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("AP undefined: no non-ignored ground truth")]
    ApUndefined,
    #[error("miss rate undefined: no non-ignored ground truth")]
    MissRateUndefined,
    #[error("non-finite score {0}")]
    BadScore(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_IOU: f64 = 0.5;
/// Miss rates are clamped to this before taking logs.
pub const MISS_RATE_FLOOR: f64 = 1e-10;
pub const FPPI_SAMPLES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub ignore: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetLabel {
    TruePositive,
    FalsePositive,
    /// Matched an ignore region; excluded from every count.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMatch {
    /// In the caller's detection order.
    pub labels: Vec<DetLabel>,
    pub gt_matched: Vec<bool>,
}

fn best_gt(det: &BBox, gts: &[GtBox], used: &[bool], ignore: bool, thresh: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (g, gt) in gts.iter().enumerate() {
        if gt.ignore != ignore || used[g] {
            continue;
        }
        let o = iou(det, &gt.bbox);
        if o >= thresh && best.is_none_or(|(b, _)| o > b) {
            best = Some((o, g));
        }
    }
    best.map(|(_, g)| g)
}

/// Greedy matching in descending score order (ties by input order). Each
/// regular GT is used once; a detection that finds no free regular GT but
/// overlaps an ignore region is labeled [`DetLabel::Ignored`].
pub fn match_detections(dets: &[Detection], gts: &[GtBox], iou_thresh: f64) -> ImageMatch {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let no_use = vec![false; gts.len()];
    let mut labels = vec![DetLabel::FalsePositive; dets.len()];
    for i in order {
        if let Some(g) = best_gt(&dets[i].bbox, gts, &used, false, iou_thresh) {
            used[g] = true;
            labels[i] = DetLabel::TruePositive;
        } else if best_gt(&dets[i].bbox, gts, &no_use, true, iou_thresh).is_some() {
            labels[i] = DetLabel::Ignored;
        }
    }
    ImageMatch { labels, gt_matched: used }
}

/// Scored TP/FP labels pooled over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledResults {
    /// `(score, is_true_positive)`, ignored detections dropped.
    pub scored: Vec<(f64, bool)>,
    pub n_gt: usize,
    pub n_images: usize,
}

/// One evaluated image: its detections and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub gts: Vec<GtBox>,
}

pub fn label_results(images: &[ImageEval], iou_thresh: f64) -> Result<LabeledResults, MetricsError> {
    let mut scored = Vec::new();
    let mut n_gt = 0;
    for img in images {
        if let Some(d) = img.detections.iter().find(|d| !d.score.is_finite()) {
            return Err(MetricsError::BadScore(d.score));
        }
        let m = match_detections(&img.detections, &img.gts, iou_thresh);
        n_gt += img.gts.iter().filter(|g| !g.ignore).count();
        for (d, l) in img.detections.iter().zip(&m.labels) {
            match l {
                DetLabel::TruePositive => scored.push((d.score, true)),
                DetLabel::FalsePositive => scored.push((d.score, false)),
                DetLabel::Ignored => {}
            }
        }
    }
    Ok(LabeledResults { scored, n_gt, n_images: images.len() })
}

/// Cumulative `(score, tp, fp)` at the end of each group of equal scores,
/// highest score first. Every point is a reachable threshold.
fn operating_points(results: &LabeledResults) -> Vec<(f64, usize, usize)> {
    let mut sorted = results.scored.clone();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &(score, hit)) in sorted.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        if sorted.get(i + 1).is_none_or(|next| next.0 != score) {
            points.push((score, tp, fp));
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FppiPoint {
    pub score: f64,
    pub fppi: f64,
    pub miss_rate: f64,
}

pub fn pr_curve(results: &LabeledResults) -> Vec<PrPoint> {
    let n = results.n_gt as f64;
    operating_points(results)
        .into_iter()
        .map(|(score, tp, fp)| PrPoint { score, recall: tp as f64 / n, precision: tp as f64 / (tp + fp) as f64 })
        .collect()
}

pub fn fppi_curve(results: &LabeledResults) -> Vec<FppiPoint> {
    let n = results.n_gt as f64;
    let images = results.n_images.max(1) as f64;
    operating_points(results)
        .into_iter()
        .map(|(score, tp, fp)| FppiPoint { score, fppi: fp as f64 / images, miss_rate: 1.0 - tp as f64 / n })
        .collect()
}

/// Area under the precision envelope, integrated over every recall step.
pub fn average_precision(results: &LabeledResults) -> Result<f64, MetricsError> {
    if results.n_gt == 0 {
        return Err(MetricsError::ApUndefined);
    }
    let curve = pr_curve(results);
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, &env) in curve.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    Ok(ap)
}

/// The FPPI sample points: `FPPI_SAMPLES` values evenly spaced in log
/// space over `[1e-2, 1]`.
pub fn fppi_references() -> [f64; FPPI_SAMPLES] {
    std::array::from_fn(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / (FPPI_SAMPLES - 1) as f64))
}

/// Log-average miss rate in percent. At each reference FPPI the miss rate is
/// that of the lowest threshold whose FPPI does not exceed it, or 1 when even
/// the highest threshold exceeds it.
pub fn log_average_miss_rate(results: &LabeledResults) -> Result<f64, MetricsError> {
    if results.n_gt == 0 {
        return Err(MetricsError::MissRateUndefined);
    }
    let curve = fppi_curve(results);
    let samples = fppi_references().map(|reference| {
        let mr = curve.iter().take_while(|p| p.fppi <= reference).last().map_or(1.0, |p| p.miss_rate);
        mr.max(MISS_RATE_FLOOR)
    });
    // A flat curve is its own geometric mean; skip the log round trip.
    if samples.iter().all(|&m| m == samples[0]) {
        return Ok(100.0 * samples[0]);
    }
    let log_sum: f64 = samples.iter().map(|m| m.ln()).sum();
    Ok(100.0 * (log_sum / FPPI_SAMPLES as f64).exp())
}

/// Share of non-ignored GTs matched when every detection is kept.
pub fn recall(results: &LabeledResults) -> f64 {
    if results.n_gt == 0 {
        return 0.0;
    }
    results.scored.iter().filter(|s| s.1).count() as f64 / results.n_gt as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curves {
    pub pr: Vec<PrPoint>,
    pub fppi: Vec<FppiPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "MR2")]
    pub mr2: f64,
    pub recall: f64,
    pub n_gt: usize,
    pub n_images: usize,
    pub n_detections: usize,
    pub curves: Curves,
}

pub fn evaluate(images: &[ImageEval], iou_thresh: f64) -> Result<MetricsReport, MetricsError> {
    let results = label_results(images, iou_thresh)?;
    Ok(MetricsReport {
        ap: average_precision(&results)?,
        mr2: log_average_miss_rate(&results)?,
        recall: recall(&results),
        n_gt: results.n_gt,
        n_images: results.n_images,
        n_detections: images.iter().map(|i| i.detections.len()).sum(),
        curves: Curves { pr: pr_curve(&results), fppi: fppi_curve(&results) },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ImageKey {
    Text(String),
    Number(i64),
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    image_id: ImageKey,
    score: f64,
    #[serde(rename = "box")]
    xywh: [f64; 4],
}

/// Reads `{image_id, score, box: [x, y, w, h]}` lines, grouped by image.
/// Blank lines are skipped; numeric IDs are read as their decimal text.
pub fn read_predictions<R: BufRead>(reader: R) -> Result<BTreeMap<String, Vec<Detection>>, MetricsError> {
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| MetricsError::Parse { line: i + 1, message };
        let rec: PredictionLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !rec.score.is_finite() {
            return Err(parse_err(format!("non-finite score {}", rec.score)));
        }
        let [x, y, w, h] = rec.xywh;
        let bbox = BBox::from_xywh(x, y, w, h).map_err(|e: GeometryError| parse_err(e.to_string()))?;
        let key = match rec.image_id {
            ImageKey::Text(s) => s,
            ImageKey::Number(n) => n.to_string(),
        };
        out.entry(key).or_default().push(Detection { score: rec.score, bbox });
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(mut writer: W, image_id: &str, dets: &[Detection]) -> Result<(), MetricsError> {
    for d in dets {
        let line = PredictionLine { image_id: ImageKey::Text(image_id.to_string()), score: d.score, xywh: d.bbox.xywh() };
        serde_json::to_writer(&mut writer, &line).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::from_xywh(x, y, w, h).unwrap()
    }

    fn det(score: f64, b: BBox) -> Detection {
        Detection { score, bbox: b }
    }

    fn gt(b: BBox) -> GtBox {
        GtBox { bbox: b, ignore: false }
    }

    fn image(dets: Vec<Detection>, gts: Vec<GtBox>) -> ImageEval {
        ImageEval { image_id: String::new(), detections: dets, gts }
    }

    #[test]
    fn exact_detection_is_true_positive() {
        let g = bx(10.0, 10.0, 20.0, 40.0);
        let m = match_detections(&[det(0.9, g)], &[gt(g)], DEFAULT_IOU);
        assert_eq!(m.labels, vec![DetLabel::TruePositive]);
        assert_eq!(m.gt_matched, vec![true]);
    }

    #[test]
    fn duplicate_on_one_gt_is_false_positive() {
        let g = bx(10.0, 10.0, 20.0, 40.0);
        let m = match_detections(&[det(0.4, g), det(0.8, bx(11.0, 10.0, 20.0, 40.0))], &[gt(g)], DEFAULT_IOU);
        assert_eq!(m.labels, vec![DetLabel::FalsePositive, DetLabel::TruePositive]);
    }

    #[test]
    fn ignore_regions_absorb_detections() {
        let g = bx(0.0, 0.0, 10.0, 10.0);
        let crowd = GtBox { bbox: bx(50.0, 50.0, 10.0, 10.0), ignore: true };
        let m = match_detections(&[det(0.9, crowd.bbox), det(0.8, g)], &[gt(g), crowd], DEFAULT_IOU);
        assert_eq!(m.labels, vec![DetLabel::Ignored, DetLabel::TruePositive]);
        let r = label_results(&[image(vec![det(0.9, crowd.bbox)], vec![crowd])], DEFAULT_IOU).unwrap();
        assert_eq!(r.n_gt, 0);
        assert!(r.scored.is_empty());
    }

    /// Three images labeled by hand, boxes 10x10 unless noted.
    fn three_image_fixture() -> Vec<ImageEval> {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(20.0, 0.0, 10.0, 10.0);
        let c = bx(40.0, 0.0, 10.0, 10.0);
        vec![
            // IoU with a: 8x10 / (100+100-80) = 0.667 -> TP; second hit on a -> FP.
            image(vec![det(0.95, bx(2.0, 0.0, 10.0, 10.0)), det(0.6, a), det(0.3, c)], vec![gt(a), gt(b)]),
            // IoU 5x10 / 150 = 0.333 -> FP; b exact -> TP.
            image(vec![det(0.7, bx(5.0, 0.0, 10.0, 10.0)), det(0.5, b)], vec![gt(a), gt(b)]),
            // c is an ignore region.
            image(vec![det(0.8, c), det(0.2, a)], vec![GtBox { bbox: c, ignore: true }, gt(a)]),
        ]
    }

    #[test]
    fn three_image_fixture_hand_labels() {
        use DetLabel::*;
        let imgs = three_image_fixture();
        let labels: Vec<Vec<DetLabel>> =
            imgs.iter().map(|i| match_detections(&i.detections, &i.gts, DEFAULT_IOU).labels).collect();
        assert_eq!(
            labels,
            vec![vec![TruePositive, FalsePositive, FalsePositive], vec![FalsePositive, TruePositive], vec![Ignored, TruePositive]]
        );
        let r = label_results(&imgs, DEFAULT_IOU).unwrap();
        assert_eq!(r.n_gt, 5);
        // Recall 3/5.
        assert!((recall(&r) - 0.6).abs() < 1e-15);
        // Sorted: .95 T, .7 F, .6 F, .5 T, .3 F, .2 T
        // PR: (1/5, 1), (1/5, 1/2), (1/5, 1/3), (2/5, 1/2), (2/5, 2/5), (3/5, 1/2)
        // Envelope at recall steps: 1 at 1/5, 1/2 at 2/5, 1/2 at 3/5.
        let ap = average_precision(&r).unwrap();
        assert!((ap - (0.2 * 1.0 + 0.2 * 0.5 + 0.2 * 0.5)).abs() < 1e-15, "{ap}");
    }

    #[test]
    fn two_tp_one_fp_staircase() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(20.0, 0.0, 10.0, 10.0);
        let c = bx(40.0, 0.0, 10.0, 10.0);
        let imgs = vec![image(
            vec![det(0.9, a), det(0.8, bx(60.0, 0.0, 10.0, 10.0)), det(0.7, b)],
            vec![gt(a), gt(b), gt(c)],
        )];
        let r = label_results(&imgs, DEFAULT_IOU).unwrap();
        // Steps: recall 1/3 at precision 1, recall 2/3 at precision 2/3.
        let expected = 1.0 / 3.0 + (1.0 / 3.0) * (2.0 / 3.0);
        assert!((average_precision(&r).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn trivial_cases() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let perfect = label_results(&[image(vec![det(0.9, a)], vec![gt(a)])], DEFAULT_IOU).unwrap();
        assert_eq!(average_precision(&perfect).unwrap(), 1.0);
        assert_eq!(recall(&perfect), 1.0);
        assert_eq!(log_average_miss_rate(&perfect).unwrap(), 100.0 * MISS_RATE_FLOOR);
        let empty = label_results(&[image(vec![], vec![gt(a)])], DEFAULT_IOU).unwrap();
        assert_eq!(average_precision(&empty).unwrap(), 0.0);
        assert_eq!(recall(&empty), 0.0);
        assert_eq!(log_average_miss_rate(&empty).unwrap(), 100.0);
        let no_gt = label_results(&[image(vec![det(0.5, a)], vec![])], DEFAULT_IOU).unwrap();
        assert!(matches!(average_precision(&no_gt), Err(MetricsError::ApUndefined)));
        assert!(log_average_miss_rate(&no_gt).is_err());
    }

    #[test]
    fn fppi_references_span_two_decades() {
        let r = fppi_references();
        assert!((r[0] - 0.01).abs() < 1e-18 && (r[8] - 1.0).abs() < 1e-15);
        assert!((r[4] - 0.1).abs() < 1e-16);
    }

    #[test]
    fn prediction_lines_round_trip() {
        let dets = vec![det(0.25, bx(1.5, 2.0, 3.0, 4.125)), det(0.1 + 0.2, bx(0.1, 0.2, 0.3, 0.7))];
        let mut buf = Vec::new();
        write_predictions(&mut buf, "img,1", &dets).unwrap();
        let back = read_predictions(buf.as_slice()).unwrap();
        assert_eq!(back["img,1"], dets);
        let numeric = read_predictions(&b"{\"image_id\": 7, \"score\": 0.5, \"box\": [0, 0, 1, 1]}\n\n"[..]).unwrap();
        assert_eq!(numeric["7"].len(), 1);
        let bad = read_predictions(&b"{\"image_id\": 7, \"score\": 0.5}\n"[..]);
        assert!(matches!(bad, Err(MetricsError::Parse { line: 1, .. })));
        let neg = read_predictions(&b"\n{\"image_id\": \"a\", \"score\": 0.5, \"box\": [0, 0, -1, 1]}\n"[..]);
        assert!(matches!(neg, Err(MetricsError::Parse { line: 2, .. })));
    }

    /// Small scenes of 20x20 boxes. Detections are either free or jittered
    /// around one of the image's GTs, with scores on a coarse grid so ties occur.
    fn arb_scene() -> impl Strategy<Value = Vec<ImageEval>> {
        let image = (
            prop::collection::vec((0.0..80.0f64, 0.0..80.0f64, any::<bool>()), 1..4),
            prop::collection::vec((prop::option::of(0usize..4), -6.0..6.0f64, 0.0..80.0f64, 0.0..1.0f64), 0..7),
        )
            .prop_map(|(gts, dets)| {
                let gts: Vec<GtBox> =
                    gts.into_iter().map(|(x, y, ig)| GtBox { bbox: bx(x, y, 20.0, 20.0), ignore: ig && x > 60.0 }).collect();
                let dets = dets
                    .into_iter()
                    .map(|(anchor, jitter, free, s)| {
                        let b = match anchor {
                            Some(a) => {
                                let [x, y, _, _] = gts[a % gts.len()].bbox.xywh();
                                bx(x + jitter, y - 0.5 * jitter, 20.0, 20.0)
                            }
                            None => bx(free, 80.0 - free, 20.0, 20.0),
                        };
                        det((s * 20.0).round() / 20.0, b)
                    })
                    .collect();
                image(dets, gts)
            });
        prop::collection::vec(image, 1..5)
    }

    proptest! {
        #[test]
        fn metrics_are_invariant_to_monotone_score_maps(scene in arb_scene()) {
            let r = label_results(&scene, DEFAULT_IOU).unwrap();
            prop_assume!(r.n_gt > 0);
            let mapped: Vec<ImageEval> = scene.iter().map(|i| ImageEval {
                detections: i.detections.iter().map(|d| det((3.0 * d.score).exp() - 7.0, d.bbox)).collect(),
                ..i.clone()
            }).collect();
            let m = label_results(&mapped, DEFAULT_IOU).unwrap();
            prop_assert_eq!(average_precision(&r).unwrap(), average_precision(&m).unwrap());
            prop_assert_eq!(log_average_miss_rate(&r).unwrap(), log_average_miss_rate(&m).unwrap());
        }

        /// A redundant copy of a matched detection, scored below it and not
        /// overlapping any other GT enough to match it, lands as a false positive.
        #[test]
        fn duplicates_of_matched_gts_never_help(scene in arb_scene(), which in 0usize..16, frac in 0.0..1.0f64) {
            let r = label_results(&scene, DEFAULT_IOU).unwrap();
            prop_assume!(r.n_gt > 0);
            let img = &scene[which % scene.len()];
            let m = match_detections(&img.detections, &img.gts, DEFAULT_IOU);
            let tps: Vec<usize> = (0..img.detections.len()).filter(|&i| m.labels[i] == DetLabel::TruePositive).collect();
            prop_assume!(!tps.is_empty());
            let original = img.detections[tps[which % tps.len()]];
            let competing = img.gts.iter().filter(|g| !g.ignore && iou(&g.bbox, &original.bbox) >= DEFAULT_IOU).count();
            prop_assume!(competing == 1);
            let mut more = scene.clone();
            more[which % scene.len()].detections.push(det(original.score * frac, original.bbox));
            let d = label_results(&more, DEFAULT_IOU).unwrap();
            prop_assert!(average_precision(&d).unwrap() <= average_precision(&r).unwrap() + 1e-12);
            prop_assert!(log_average_miss_rate(&d).unwrap() >= log_average_miss_rate(&r).unwrap() - 1e-12);
        }
    }
}
