//! Axis-aligned boxes, overlap measures and the query distance used for
//! neighborhood selection and candidate pruning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: negative extent or non-finite coordinate")]
    InvalidBox(f64, f64, f64, f64),
    #[error("undefined GIoU: both boxes are degenerate")]
    UndefinedGiou,
}

/// Axis-aligned box stored in corner form.
///
/// Coordinates are unit-agnostic (pixels or normalized), but every pipeline
/// must stay internally consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite();
        if !finite || x_min > x_max || y_min > y_max {
            return Err(GeometryError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    /// Builds a box from the top-left corner and size.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if w < 0.0 || h < 0.0 {
            return Err(GeometryError::InvalidBox(x, y, x + w, y + h));
        }
        Self::new(x, y, x + w, y + h)
    }

    pub fn from_cxcywh(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if w < 0.0 || h < 0.0 {
            return Err(GeometryError::InvalidBox(cx, cy, w, h));
        }
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    /// Corner form `[x_min, y_min, x_max, y_max]`.
    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Top-left corner plus size, `[x, y, w, h]`.
    pub fn xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn cxcywh(&self) -> [f64; 4] {
        let [cx, cy] = self.center();
        [cx, cy, self.width(), self.height()]
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.area() > 0.0)
    }

    /// Overlap region, or `None` when the boxes do not intersect with
    /// positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x_min.max(other.x_min);
        let y0 = self.y_min.max(other.y_min);
        let x1 = self.x_max.min(other.x_max);
        let y1 = self.y_max.min(other.y_max);
        if x1 > x0 && y1 > y0 {
            Some(BBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 })
        } else {
            None
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Smallest box enclosing both.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    /// Strict interior test; points on an edge are outside.
    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        x > self.x_min && x < self.x_max && y > self.y_min && y < self.y_max
    }

    /// Closed containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Clips to `frame`. Boxes entirely outside collapse onto the nearest
    /// frame edge as a degenerate box.
    pub fn clip_to(&self, frame: &BBox) -> BBox {
        let cx = |v: f64| v.clamp(frame.x_min, frame.x_max);
        let cy = |v: f64| v.clamp(frame.y_min, frame.y_max);
        BBox {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// L1 distance between corner vectors.
    pub fn l1_distance(&self, other: &BBox) -> f64 {
        (self.x_min - other.x_min).abs()
            + (self.y_min - other.y_min).abs()
            + (self.x_max - other.x_max).abs()
            + (self.y_max - other.y_max).abs()
    }
}

/// Full-body and visible-region boxes of one pedestrian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub fbox: BBox,
    pub vbox: BBox,
    pub tag: String,
    pub ignore: bool,
}

impl Annotation {
    pub fn person(fbox: BBox, vbox: BBox) -> Self {
        Self { fbox, vbox, tag: "person".to_string(), ignore: false }
    }
}

/// Intersection over union. Zero whenever either box is degenerate.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Generalized IoU: `iou - (hull - union) / hull`.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    if a.is_degenerate() && b.is_degenerate() {
        return Err(GeometryError::UndefinedGiou);
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    Ok(iou - (hull - union) / hull)
}

/// `1 - giou(a, b)`, in `[0, 2)`.
pub fn query_distance(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    giou(a, b).map(|g| 1.0 - g)
}

/// Query distance that stays defined for degenerate pairs: identical boxes
/// are at distance 0, any other undefined pair at the maximum distance 2.
pub fn query_distance_total(a: &BBox, b: &BBox) -> f64 {
    match query_distance(a, b) {
        Ok(d) => d,
        Err(_) if a == b => 0.0,
        Err(_) => 2.0,
    }
}

/// Gradient of `giou(pred, target)` with respect to the corners of `pred`.
///
/// Uses one-sided choices at min/max ties (the prediction wins), which keeps
/// the result a valid subgradient everywhere.
pub fn giou_grad(pred: &BBox, target: &BBox) -> Result<(f64, [f64; 4]), GeometryError> {
    let value = giou(pred, target)?;
    let [px0, py0, px1, py1] = pred.corners();
    let [tx0, ty0, tx1, ty1] = target.corners();

    let pw = px1 - px0;
    let ph = py1 - py0;
    let area_p = pw * ph;
    let d_area_p = [-ph, -pw, ph, pw];

    // Intersection extents.
    let ix0_pred = px0 >= tx0;
    let iy0_pred = py0 >= ty0;
    let ix1_pred = px1 <= tx1;
    let iy1_pred = py1 <= ty1;
    let iw_raw = px1.min(tx1) - px0.max(tx0);
    let ih_raw = py1.min(ty1) - py0.max(ty0);
    let iw = iw_raw.max(0.0);
    let ih = ih_raw.max(0.0);
    let inter = iw * ih;
    let mut d_iw = [0.0; 4];
    let mut d_ih = [0.0; 4];
    if iw_raw > 0.0 {
        if ix0_pred {
            d_iw[0] = -1.0;
        }
        if ix1_pred {
            d_iw[2] = 1.0;
        }
    }
    if ih_raw > 0.0 {
        if iy0_pred {
            d_ih[1] = -1.0;
        }
        if iy1_pred {
            d_ih[3] = 1.0;
        }
    }
    let mut d_inter = [0.0; 4];
    for k in 0..4 {
        d_inter[k] = d_iw[k] * ih + iw * d_ih[k];
    }

    let union = area_p + target.area() - inter;
    let mut d_union = [0.0; 4];
    for k in 0..4 {
        d_union[k] = d_area_p[k] - d_inter[k];
    }

    let cw = px1.max(tx1) - px0.min(tx0);
    let ch = py1.max(ty1) - py0.min(ty0);
    let hull = cw * ch;
    let mut d_cw = [0.0; 4];
    let mut d_ch = [0.0; 4];
    if px0 <= tx0 {
        d_cw[0] = -1.0;
    }
    if px1 >= tx1 {
        d_cw[2] = 1.0;
    }
    if py0 <= ty0 {
        d_ch[1] = -1.0;
    }
    if py1 >= ty1 {
        d_ch[3] = 1.0;
    }
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_hull = d_cw[k] * ch + cw * d_ch[k];
        let d_iou = if union > 0.0 {
            d_inter[k] / union - inter * d_union[k] / (union * union)
        } else {
            0.0
        };
        grad[k] = d_iou + d_union[k] / hull - union * d_hull / (hull * hull);
    }
    Ok((value, grad))
}
