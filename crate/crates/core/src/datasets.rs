//! odgt annotation files, synthetic crowd scenes and the visibility-aware
//! random crop.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::instance_rng;
use crate::geometry::{iou, Annotation, BBox, GeometryError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("infeasible scene spec: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One `gtboxes` entry. Boxes stay in the file's `[x, y, w, h]` form so a
/// write-then-load cycle reproduces every coordinate bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct OdgtBox {
    pub tag: String,
    pub fbox: [f64; 4],
    pub vbox: [f64; 4],
    pub ignore: bool,
}

impl OdgtBox {
    pub fn from_annotation(a: &Annotation) -> Self {
        Self { tag: a.tag.clone(), fbox: a.fbox.xywh(), vbox: a.vbox.xywh(), ignore: a.ignore }
    }

    pub fn annotation(&self) -> Result<Annotation, GeometryError> {
        let [x, y, w, h] = self.fbox;
        let fbox = BBox::from_xywh(x, y, w, h)?;
        let [x, y, w, h] = self.vbox;
        let vbox = BBox::from_xywh(x, y, w, h)?;
        Ok(Annotation { fbox, vbox, tag: self.tag.clone(), ignore: self.ignore })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    /// Frame size, when the file records it.
    pub size: Option<[f64; 2]>,
    pub boxes: Vec<OdgtBox>,
}

impl ImageRecord {
    pub fn from_annotations(id: impl Into<String>, size: Option<[f64; 2]>, annotations: &[Annotation]) -> Self {
        Self { id: id.into(), size, boxes: annotations.iter().map(OdgtBox::from_annotation).collect() }
    }

    /// Boxes are validated on load, so this only fails on hand-built records.
    pub fn annotations(&self) -> Result<Vec<Annotation>, GeometryError> {
        self.boxes.iter().map(OdgtBox::annotation).collect()
    }

    pub fn frame(&self) -> Option<BBox> {
        self.size.and_then(|[w, h]| BBox::new(0.0, 0.0, w, h).ok())
    }
}

#[derive(Serialize, Deserialize, Default)]
struct RawExtra {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ignore: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    #[serde(default = "person_tag")]
    tag: String,
    fbox: Option<[f64; 4]>,
    vbox: Option<[f64; 4]>,
    #[serde(default)]
    extra: RawExtra,
}

fn person_tag() -> String {
    "person".to_string()
}

#[derive(Serialize, Deserialize)]
struct RawLine {
    #[serde(rename = "ID")]
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
    gtboxes: Vec<RawBox>,
}

/// Parses one odgt line. `mask` entries and `extra.ignore != 0` are ignore
/// regions.
pub fn parse_odgt_line(line: &str, line_no: usize) -> Result<ImageRecord, DatasetError> {
    let err = |message: String| DatasetError::Parse { line: line_no, message };
    let raw: RawLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let size = match (raw.width, raw.height) {
        (Some(w), Some(h)) => Some([w, h]),
        (None, None) => None,
        _ => return Err(err("width and height must appear together".into())),
    };
    let mut boxes = Vec::with_capacity(raw.gtboxes.len());
    for (i, b) in raw.gtboxes.into_iter().enumerate() {
        let fbox = b.fbox.ok_or_else(|| err(format!("gtboxes[{i}]: missing fbox")))?;
        let vbox = b.vbox.ok_or_else(|| err(format!("gtboxes[{i}]: missing vbox")))?;
        let ignore = b.extra.ignore.unwrap_or(0) != 0 || b.tag == "mask";
        let parsed = OdgtBox { tag: b.tag, fbox, vbox, ignore };
        parsed.annotation().map_err(|e| err(format!("gtboxes[{i}]: {e}")))?;
        boxes.push(parsed);
    }
    Ok(ImageRecord { id: raw.id, size, boxes })
}

pub fn read_odgt<R: BufRead>(reader: R) -> Result<Vec<ImageRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(parse_odgt_line(&line, i + 1)?);
        }
    }
    Ok(out)
}

pub fn load_odgt(path: &Path) -> Result<Vec<ImageRecord>, DatasetError> {
    read_odgt(BufReader::new(File::open(path)?))
}

pub fn write_odgt_to<W: Write>(mut writer: W, records: &[ImageRecord]) -> Result<(), DatasetError> {
    for r in records {
        let raw = RawLine {
            id: r.id.clone(),
            width: r.size.map(|s| s[0]),
            height: r.size.map(|s| s[1]),
            gtboxes: r
                .boxes
                .iter()
                .map(|b| RawBox {
                    tag: b.tag.clone(),
                    fbox: Some(b.fbox),
                    vbox: Some(b.vbox),
                    extra: RawExtra { ignore: Some(b.ignore as i64) },
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &raw).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_odgt(path: &Path, records: &[ImageRecord]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_odgt_to(&mut w, records)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountDist {
    Fixed(usize),
    Poisson(f64),
}

impl CountDist {
    pub fn mean(&self) -> f64 {
        match *self {
            CountDist::Fixed(n) => n as f64,
            CountDist::Poisson(m) => m,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match *self {
            CountDist::Fixed(n) => n,
            CountDist::Poisson(m) if m <= 0.0 => 0,
            CountDist::Poisson(m) => Poisson::new(m).expect("positive mean").sample(rng) as usize,
        }
    }
}

/// Synthetic crowd scene parameters. Sizes are in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: f64,
    pub height: f64,
    pub persons: CountDist,
    /// Pairs of persons placed at full-box IoU above 0.5.
    pub overlap_pairs: CountDist,
    /// Dense regions per image, alternating horizontal lines and corners.
    pub clusters: usize,
    /// Cluster scatter as a fraction of the frame size.
    pub cluster_spread: f64,
    /// Share of persons placed uniformly instead of in a cluster.
    pub background_share: f64,
    /// Person height range as fractions of the frame height.
    pub height_range: [f64; 2],
    /// Persons whose visible box covers less than this share of the full
    /// box are removed.
    pub min_visible: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 1280.0,
            height: 720.0,
            persons: CountDist::Poisson(22.64),
            overlap_pairs: CountDist::Poisson(2.40),
            clusters: 3,
            cluster_spread: 0.08,
            background_share: 0.25,
            height_range: [0.12, 0.45],
            min_visible: 0.05,
            seed: 0,
        }
    }
}

const ASPECT: f64 = 0.41;
const PLACEMENT_TRIES: usize = 400;
const PLACEMENT_ROUNDS: usize = 100;
/// Pairwise IoU that counts as a heavy overlap.
pub const OVERLAP_IOU: f64 = 0.5;

impl SceneSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Infeasible(m.to_string()));
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return bad("frame size must be positive");
        }
        let [lo, hi] = self.height_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) || hi * self.height * ASPECT > self.width {
            return bad("person heights must fit in the frame");
        }
        if !(0.0..=1.0).contains(&self.background_share) || !(0.0..1.0).contains(&self.min_visible) {
            return bad("shares must lie in [0, 1]");
        }
        if self.persons.mean() < 0.0 || self.overlap_pairs.mean() < 0.0 || !self.persons.mean().is_finite() {
            return bad("counts must be non-negative");
        }
        if 2.0 * self.overlap_pairs.mean() > self.persons.mean() {
            return bad("more overlapping pairs than persons allow");
        }
        if let (CountDist::Fixed(p), CountDist::Fixed(n)) = (self.overlap_pairs, self.persons) {
            if 2 * p > n {
                return bad("more overlapping pairs than persons allow");
            }
        }
        // Without heavy overlaps each person needs roughly half its box to itself.
        let mean_h = 0.5 * (lo + hi) * self.height;
        let needed = self.persons.mean() * ASPECT * mean_h * mean_h * 0.5;
        if needed > self.width * self.height {
            return bad("persons do not fit in the frame area");
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Cluster {
    Line { y_bottom: f64 },
    Corner { cx: f64, cy: f64 },
}

fn round8(v: f64) -> f64 {
    (v * 8.0).round() / 8.0
}

/// Box on the 1/8 pixel grid, shifted inside the frame.
fn person_box(spec: &SceneSpec, cx: f64, bottom: f64, h: f64, w: f64) -> BBox {
    let w = round8(w.clamp(1.0, spec.width));
    let h = round8(h.clamp(1.0, spec.height));
    let x = round8(cx - 0.5 * w).clamp(0.0, spec.width - w);
    let y = round8(bottom - h).clamp(0.0, spec.height - h);
    BBox::from_xywh(x, y, w, h).expect("finite positive box")
}

fn sample_person(spec: &SceneSpec, clusters: &[(Cluster, f64)], rng: &mut ChaCha8Rng) -> BBox {
    let [lo, hi] = spec.height_range;
    let jitter: Normal<f64> = Normal::new(0.0, 0.1).expect("valid normal");
    let spread: Normal<f64> = Normal::new(0.0, spec.cluster_spread).expect("valid normal");
    let (cx, bottom, base) = if clusters.is_empty() || rng.random::<f64>() < spec.background_share {
        let base = rng.random_range(lo..=hi) * spec.height;
        (rng.random_range(0.0..spec.width), rng.random_range(base..=spec.height), base)
    } else {
        let (cluster, base) = clusters[rng.random_range(0..clusters.len())];
        match cluster {
            Cluster::Line { y_bottom } => {
                (rng.random_range(0.0..spec.width), y_bottom + 0.3 * spread.sample(rng) * spec.height, base)
            }
            Cluster::Corner { cx, cy } => {
                (cx + spread.sample(rng) * spec.width, cy + base * 0.5 + spread.sample(rng) * spec.height, base)
            }
        }
    };
    let h = (base * jitter.sample(rng).exp()).clamp(lo * spec.height, hi * spec.height);
    let w = h * ASPECT * (0.5 * jitter.sample(rng)).exp();
    person_box(spec, cx, bottom, h, w)
}

fn fits(candidate: &BBox, placed: &[BBox], partner: Option<usize>) -> bool {
    placed.iter().enumerate().all(|(i, b)| Some(i) == partner || iou(candidate, b) <= OVERLAP_IOU)
}

/// Largest axis-aligned part of `full` not covered by any of `occluders`.
/// `None` when nothing with positive area is left.
pub fn largest_uncovered(full: &BBox, occluders: &[BBox]) -> Option<BBox> {
    let [fx0, fy0, fx1, fy1] = full.corners();
    let cuts = |lo: f64, hi: f64, pick: &dyn Fn(&BBox) -> [f64; 2]| {
        let mut v = vec![lo, hi];
        for o in occluders {
            for c in pick(o) {
                v.push(c.clamp(lo, hi));
            }
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = cuts(fx0, fx1, &|o| [o.x_min(), o.x_max()]);
    let ys = cuts(fy0, fy1, &|o| [o.y_min(), o.y_max()]);
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);
    let covered = |i: usize, j: usize| {
        occluders.iter().any(|o| o.x_min() <= xs[i] && o.x_max() >= xs[i + 1] && o.y_min() <= ys[j] && o.y_max() >= ys[j + 1])
    };
    let cells: Vec<Vec<bool>> = (0..ny).map(|j| (0..nx).map(|i| covered(i, j)).collect()).collect();
    let mut best: Option<(f64, BBox)> = None;
    for top in 0..ny {
        let mut free = vec![true; nx];
        for bottom in top..ny {
            for i in 0..nx {
                free[i] &= !cells[bottom][i];
            }
            let h = ys[bottom + 1] - ys[top];
            let mut start = None;
            for i in 0..=nx {
                match (i < nx && free[i], start) {
                    (true, None) => start = Some(i),
                    (false, Some(s)) => {
                        let area = (xs[i] - xs[s]) * h;
                        if area > 0.0 && best.is_none_or(|(a, _)| area > a) {
                            best = Some((area, BBox::new(xs[s], ys[top], xs[i], ys[bottom + 1]).expect("ordered cuts")));
                        }
                        start = None;
                    }
                    _ => {}
                }
            }
        }
    }
    best.map(|(_, b)| b)
}

/// Visible boxes in painter's order: a person is occluded by every person
/// whose full box reaches lower in the frame (ties: later index in front).
pub fn visible_boxes(fboxes: &[BBox]) -> Vec<Option<BBox>> {
    fboxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let front: Vec<BBox> = fboxes
                .iter()
                .enumerate()
                .filter(|&(j, o)| j != i && (o.y_max() > b.y_max() || (o.y_max() == b.y_max() && j > i)))
                .filter(|(_, o)| o.intersection_area(b) > 0.0)
                .map(|(_, o)| *o)
                .collect();
            largest_uncovered(b, &front)
        })
        .collect()
}

fn generate_one(spec: &SceneSpec, index: usize) -> Result<ImageRecord, DatasetError> {
    let mut rng = instance_rng(spec.seed, index);
    let n = spec.persons.sample(&mut rng);
    let pairs = spec.overlap_pairs.sample(&mut rng).min(n / 2);
    let [lo, hi] = spec.height_range;
    let clusters: Vec<(Cluster, f64)> = (0..spec.clusters)
        .map(|c| {
            let base = rng.random_range(lo..=hi) * spec.height;
            let cluster = if c % 2 == 0 {
                Cluster::Line { y_bottom: rng.random_range(base..=spec.height) }
            } else {
                let cx = if rng.random::<bool>() { 0.12 } else { 0.88 } * spec.width;
                let cy = if rng.random::<bool>() { 0.2 } else { 0.6 } * spec.height;
                Cluster::Corner { cx, cy }
            };
            (cluster, base)
        })
        .collect();

    let infeasible = || DatasetError::Infeasible(format!("image {index}: no room left for another person"));
    // `group[i]` ties the two members of a forced pair together.
    let mut placed: Vec<BBox> = Vec::with_capacity(n);
    let mut group: Vec<usize> = Vec::with_capacity(n);
    let mut next_group = 0;
    let place_single = |placed: &[BBox], rng: &mut ChaCha8Rng| {
        (0..PLACEMENT_TRIES).map(|_| sample_person(spec, &clusters, rng)).find(|b| fits(b, placed, None))
    };
    let mut rounds = 0;
    let visible = loop {
        // Top up pairs first, then singles.
        let have_pairs = group.len() - group.iter().collect::<std::collections::HashSet<_>>().len();
        let want_pairs = pairs.saturating_sub(have_pairs).min(n.saturating_sub(placed.len()) / 2);
        for _ in 0..want_pairs {
            let mut done = false;
            for _ in 0..PLACEMENT_TRIES {
                let Some(a) = place_single(&placed, &mut rng) else { break };
                let [cx, _] = a.center();
                let shift = rng.random_range(-0.3..0.3) * a.width();
                let scale = rng.random_range(0.85..1.15);
                let bottom = a.y_max() + rng.random_range(-0.1..0.1) * a.height();
                let b = person_box(spec, cx + shift, bottom, a.height() * scale, a.width() * scale);
                if iou(&a, &b) > OVERLAP_IOU && fits(&b, &placed, None) {
                    placed.extend([a, b]);
                    group.extend([next_group; 2]);
                    next_group += 1;
                    done = true;
                    break;
                }
            }
            if !done {
                return Err(infeasible());
            }
        }
        while placed.len() < n {
            placed.push(place_single(&placed, &mut rng).ok_or_else(infeasible)?);
            group.push(next_group);
            next_group += 1;
        }

        // Persons hidden behind others are removed along with their pair
        // partner and redrawn next round.
        let visible = visible_boxes(&placed);
        let hidden: std::collections::HashSet<usize> = (0..placed.len())
            .filter(|&i| visible[i].is_none_or(|v| v.area() < spec.min_visible * placed[i].area()))
            .map(|i| group[i])
            .collect();
        if hidden.is_empty() {
            break visible;
        }
        rounds += 1;
        if rounds > PLACEMENT_ROUNDS {
            return Err(DatasetError::Infeasible(format!("image {index}: persons keep ending up hidden")));
        }
        let keep: Vec<bool> = group.iter().map(|g| !hidden.contains(g)).collect();
        let mut k = keep.iter();
        placed.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        group.retain(|_| *k.next().unwrap());
    };
    let annotations: Vec<Annotation> = placed
        .iter()
        .zip(visible)
        .map(|(f, v)| Annotation::person(*f, v.expect("visible after filtering")))
        .collect();
    Ok(ImageRecord::from_annotations(format!("synthetic_{:06}", index), Some([spec.width, spec.height]), &annotations))
}

/// Seeded synthetic crowd scenes; image `i` draws from its own stream of
/// `spec.seed`, so output does not depend on thread count.
pub fn generate_scenes(spec: &SceneSpec, n_images: usize) -> Result<Vec<ImageRecord>, DatasetError> {
    spec.validate()?;
    (0..n_images).into_par_iter().map(|i| generate_one(spec, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneStats {
    pub images: usize,
    pub mean_persons: f64,
    /// Mean count of full-box pairs with IoU above 0.5 per image.
    pub mean_overlap_pairs: f64,
    pub mean_visible_share: f64,
}

pub fn overlap_pairs(boxes: &[BBox]) -> usize {
    let mut count = 0;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            count += (iou(&boxes[i], &boxes[j]) > OVERLAP_IOU) as usize;
        }
    }
    count
}

pub fn scene_statistics(records: &[ImageRecord]) -> Result<SceneStats, GeometryError> {
    let (mut persons, mut pairs, mut visible, mut counted) = (0usize, 0usize, 0.0, 0usize);
    for r in records {
        let anns: Vec<Annotation> = r.annotations()?.into_iter().filter(|a| !a.ignore).collect();
        persons += anns.len();
        pairs += overlap_pairs(&anns.iter().map(|a| a.fbox).collect::<Vec<_>>());
        for a in &anns {
            if a.fbox.area() > 0.0 {
                visible += a.vbox.intersection_area(&a.fbox) / a.fbox.area();
                counted += 1;
            }
        }
    }
    let n = records.len().max(1) as f64;
    Ok(SceneStats {
        images: records.len(),
        mean_persons: persons as f64 / n,
        mean_overlap_pairs: pairs as f64 / n,
        mean_visible_share: if counted == 0 { 0.0 } else { visible / counted as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropSpec {
    /// Window side lengths are this share of the frame's, drawn uniformly.
    pub scale_range: [f64; 2],
    pub min_retention: f64,
    pub max_retries: usize,
    /// Clip full boxes to the window. Off by default: full boxes keep their
    /// extent past the crop edge.
    pub clip_full_boxes: bool,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self { scale_range: [0.5, 1.0], min_retention: 0.8, max_retries: 50, clip_full_boxes: false }
    }
}

/// Share of `vbox` inside `window`. A degenerate box counts as fully
/// retained when it lies in the window and lost otherwise.
pub fn retention(vbox: &BBox, window: &BBox) -> f64 {
    let area = vbox.area();
    if area > 0.0 {
        vbox.intersection_area(window) / area
    } else {
        let [x0, y0, x1, y1] = vbox.corners();
        (window.contains(x0, y0) && window.contains(x1, y1)) as u8 as f64
    }
}

/// A window is admissible when it keeps at least `min_retention` of every
/// visible box it touches. Boxes it misses entirely are simply dropped.
pub fn window_admissible(window: &BBox, annotations: &[Annotation], min_retention: f64) -> bool {
    annotations.iter().all(|a| {
        let r = retention(&a.vbox, window);
        r == 0.0 || r >= min_retention
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropOutcome {
    pub window: BBox,
    /// Kept annotations in window coordinates.
    pub annotations: Vec<Annotation>,
    /// Index of each kept annotation in the input.
    pub kept: Vec<usize>,
    /// Retries ran out; the window is the whole frame.
    pub fell_back: bool,
    pub attempts: usize,
}

fn remap(window: &BBox, annotations: &[Annotation], spec: &CropSpec) -> (Vec<Annotation>, Vec<usize>) {
    let (dx, dy) = (-window.x_min(), -window.y_min());
    let mut out = Vec::new();
    let mut kept = Vec::new();
    for (i, a) in annotations.iter().enumerate() {
        if retention(&a.vbox, window) < spec.min_retention {
            continue;
        }
        let fbox = if spec.clip_full_boxes { a.fbox.clip_to(window) } else { a.fbox };
        out.push(Annotation {
            fbox: fbox.translate(dx, dy),
            vbox: a.vbox.clip_to(window).translate(dx, dy),
            tag: a.tag.clone(),
            ignore: a.ignore,
        });
        kept.push(i);
    }
    (out, kept)
}

/// Random crop that never cuts a pedestrian below `min_retention` of its
/// visible box. Rejected windows are redrawn up to `max_retries` times, after
/// which the whole frame is returned.
pub fn crop_augment<R: Rng + ?Sized>(frame: &BBox, annotations: &[Annotation], spec: &CropSpec, rng: &mut R) -> CropOutcome {
    let [lo, hi] = spec.scale_range;
    for attempt in 1..=spec.max_retries {
        let s = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let (w, h) = (s * frame.width(), s * frame.height());
        let x = frame.x_min() + rng.random_range(0.0..=frame.width() - w);
        let y = frame.y_min() + rng.random_range(0.0..=frame.height() - h);
        let window = BBox::from_xywh(x, y, w, h).expect("window inside frame");
        if window_admissible(&window, annotations, spec.min_retention) {
            let (annotations, kept) = remap(&window, annotations, spec);
            return CropOutcome { window, annotations, kept, fell_back: false, attempts: attempt };
        }
    }
    let (annotations, kept) = remap(frame, annotations, spec);
    CropOutcome { window: *frame, annotations, kept, fell_back: true, attempts: spec.max_retries }
}

/// Smallest visible-box retention over the pedestrians a crop kept, measured
/// against the original annotations. 1 when nothing was kept.
pub fn min_retention(original: &[Annotation], outcome: &CropOutcome) -> f64 {
    outcome.kept.iter().map(|&i| retention(&original[i].vbox, &outcome.window)).fold(1.0, f64::min)
}
