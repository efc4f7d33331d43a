//! Boxes, anchors, IoU, NMS and RoI pooling.
//!
//! Boxes use inclusive pixel corners: a box spanning pixels `x1..=x2` has
//! width `x2 - x1 + 1`, and its center is `(x1 + x2) / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Axis-aligned box with inclusive corners, serialized as `[x1, y1, x2, y2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x2 < x1 || y2 < y1 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Box of inclusive size `w` x `h` centered at `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let (hw, hh) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
        Self::new(cx - hw, cy - hh, cx + hw, cy + hh)
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1 + 1.0
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1 + 1.0
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Clips to the pixel extent `[0, width-1] x [0, height-1]`.
    pub fn clip(&self, image_h: usize, image_w: usize) -> Self {
        let xmax = image_w.saturating_sub(1) as f64;
        let ymax = image_h.saturating_sub(1) as f64;
        Self {
            x1: self.x1.clamp(0.0, xmax),
            y1: self.y1.clamp(0.0, ymax),
            x2: self.x2.clamp(0.0, xmax),
            y2: self.y2.clamp(0.0, ymax),
        }
    }

    /// True when the box lies entirely within the pixel extent of an image.
    pub fn inside(&self, image_h: usize, image_w: usize) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= image_w as f64 - 1.0 && self.y2 <= image_h as f64 - 1.0
    }

    /// Inclusive containment of a point, edges included.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x1 <= x && x <= self.x2 && self.y1 <= y && y <= self.y2
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union with inclusive-pixel areas.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1) + 1.0;
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1) + 1.0;
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidParameter(format!("score {score} is not in [0, 1]")));
        }
        Ok(Self { bbox, score })
    }
}

/// Anchor shapes and the stride of the feature map they are tiled over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub stride: f64,
    pub scales: Vec<f64>,
    /// Aspect ratios as height / width.
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            stride: 16.0,
            scales: vec![8.0, 16.0, 32.0],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

impl AnchorConfig {
    pub fn anchors_per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    /// Base anchors centered at the origin, ratio-major then scale.
    pub fn base_anchors(&self) -> Result<Vec<BBox>> {
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !positive(&self.stride)
            || self.scales.is_empty()
            || self.ratios.is_empty()
            || !self.scales.iter().all(positive)
            || !self.ratios.iter().all(positive)
        {
            return Err(Error::InvalidParameter(format!(
                "anchor config needs a positive stride and non-empty positive scales/ratios: {self:?}"
            )));
        }
        let mut base = Vec::with_capacity(self.anchors_per_cell());
        for &ratio in &self.ratios {
            for &scale in &self.scales {
                let side = self.stride * scale;
                let w = side / ratio.sqrt();
                let h = side * ratio.sqrt();
                base.push(BBox::from_center(0.0, 0.0, w, h)?);
            }
        }
        Ok(base)
    }
}

/// Every anchor of a feature map, ordered cell row-major, then ratio, then scale.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub feature_h: usize,
    pub feature_w: usize,
    pub config: AnchorConfig,
    pub base: Vec<BBox>,
    pub anchors: Vec<BBox>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Flat anchor index of base anchor `k` at cell `(y, x)`.
    pub fn index(&self, y: usize, x: usize, k: usize) -> usize {
        (y * self.feature_w + x) * self.base.len() + k
    }
}

pub fn generate_anchors(feature_h: usize, feature_w: usize, config: &AnchorConfig) -> Result<AnchorGrid> {
    if feature_h == 0 || feature_w == 0 {
        return Err(Error::InvalidParameter("feature map must be non-empty".into()));
    }
    let base = config.base_anchors()?;
    let mut anchors = Vec::with_capacity(feature_h * feature_w * base.len());
    for y in 0..feature_h {
        let cy = (y as f64 + 0.5) * config.stride;
        for x in 0..feature_w {
            let cx = (x as f64 + 0.5) * config.stride;
            anchors.extend(base.iter().map(|b| b.translate(cx, cy)));
        }
    }
    Ok(AnchorGrid {
        feature_h,
        feature_w,
        config: config.clone(),
        base,
        anchors,
    })
}

/// Greedy NMS returning indices into `candidates`, best score first.
///
/// Equal scores are ordered by the smaller original index.
pub fn nms_indices(candidates: &[ScoredBox], iou_threshold: f64, max_keep: usize) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::InvalidParameter(format!(
            "NMS threshold {iou_threshold} is not in [0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // stable sort keeps index order among equal scores
    order.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score));

    let mut suppressed = vec![false; candidates.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if keep.len() >= max_keep {
            break;
        }
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        let kept = &candidates[i].bbox;
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(kept, &candidates[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}

pub fn nms(candidates: &[ScoredBox], iou_threshold: f64, max_keep: usize) -> Result<Vec<ScoredBox>> {
    Ok(nms_indices(candidates, iou_threshold, max_keep)?
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

/// Max-pools the feature cells under `roi` into a fixed `out_h` x `out_w` grid.
///
/// The roi is projected with floor on the top-left corner and ceil on the
/// bottom-right corner, then clipped to the map. Bin `i` of `n` over a span of
/// `len` cells covers `[floor(i*len/n), ceil((i+1)*len/n))`.
pub fn roi_pool(features: &Tensor3, roi: &BBox, stride: f64, out_h: usize, out_w: usize) -> Result<Tensor3> {
    if !(stride.is_finite() && stride > 0.0) || out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter(format!(
            "roi_pool needs positive stride and output size, got stride {stride}, {out_h}x{out_w}"
        )));
    }
    let (fh, fw) = (features.height() as i64, features.width() as i64);
    let x1 = ((roi.x1 / stride).floor() as i64).max(0);
    let y1 = ((roi.y1 / stride).floor() as i64).max(0);
    let x2 = ((roi.x2 / stride).ceil() as i64).min(fw - 1);
    let y2 = ((roi.y2 / stride).ceil() as i64).min(fh - 1);
    if x1 > x2 || y1 > y2 {
        return Err(Error::DegenerateRoi);
    }
    let (x1, y1) = (x1 as usize, y1 as usize);
    let span_w = x2 as usize - x1 + 1;
    let span_h = y2 as usize - y1 + 1;

    let bin = |i: usize, n: usize, len: usize| (i * len / n, ((i + 1) * len).div_ceil(n));

    let channels = features.channels();
    let mut out = Vec::with_capacity(channels * out_h * out_w);
    for c in 0..channels {
        let plane = features.channel(c);
        for oy in 0..out_h {
            let (ys, ye) = bin(oy, out_h, span_h);
            for ox in 0..out_w {
                let (xs, xe) = bin(ox, out_w, span_w);
                let mut best = f32::NEG_INFINITY;
                for y in y1 + ys..y1 + ye {
                    let row = &plane[y * features.width()..(y + 1) * features.width()];
                    for &v in &row[x1 + xs..x1 + xe] {
                        best = best.max(v);
                    }
                }
                out.push(if best == f32::NEG_INFINITY { 0.0 } else { best });
            }
        }
    }
    Tensor3::new(channels, out_h, out_w, out)
}
