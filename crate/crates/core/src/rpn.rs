//! RPN supervision: anchor labels, box regression targets, and the
//! two-term RPN loss (log loss + lambda-weighted smooth L1).

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, AnchorGrid, BBox};

pub const DEFAULT_POS_IOU: f64 = 0.7;
pub const DEFAULT_NEG_IOU: f64 = 0.3;
pub const DEFAULT_LAMBDA: f64 = 10.0;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_POS_FRACTION: f64 = 0.5;

/// Largest |tw| or |th| accepted by [`decode_box`].
pub const MAX_LOG_DELTA: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

impl AnchorLabel {
    /// Integer code used in CSV exports: 1, 0 and -1.
    pub fn code(self) -> i8 {
        match self {
            AnchorLabel::Positive => 1,
            AnchorLabel::Negative => 0,
            AnchorLabel::Ignore => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorTarget {
    pub label: AnchorLabel,
    /// `(tx, ty, tw, th)`; present only on positives.
    pub deltas: Option<[f64; 4]>,
    /// Index of the best-overlapping box; `None` for border anchors.
    pub matched: Option<usize>,
    pub max_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorTargets {
    pub targets: Vec<AnchorTarget>,
}

impl AnchorTargets {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn count(&self, label: AnchorLabel) -> usize {
        self.targets.iter().filter(|t| t.label == label).count()
    }

    pub fn positives(&self) -> usize {
        self.count(AnchorLabel::Positive)
    }

    pub fn negatives(&self) -> usize {
        self.count(AnchorLabel::Negative)
    }

    pub fn ignored(&self) -> usize {
        self.count(AnchorLabel::Ignore)
    }

    /// CSV with header `anchor_idx,label,tx,ty,tw,th`; deltas are empty on
    /// non-positive rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("anchor_idx,label,tx,ty,tw,th\n");
        for (i, t) in self.targets.iter().enumerate() {
            match t.deltas {
                Some([tx, ty, tw, th]) => writeln!(out, "{i},{},{tx},{ty},{tw},{th}", t.label.code()).unwrap(),
                None => writeln!(out, "{i},{},,,,", t.label.code()).unwrap(),
            }
        }
        out
    }
}

/// Regression target of `target` relative to `anchor`.
pub fn encode_box(anchor: &BBox, target: &BBox) -> [f64; 4] {
    let (wa, ha) = (anchor.width(), anchor.height());
    let (cxa, cya) = anchor.center();
    let (cx, cy) = target.center();
    [
        (cx - cxa) / wa,
        (cy - cya) / ha,
        (target.width() / wa).ln(),
        (target.height() / ha).ln(),
    ]
}

/// Inverse of [`encode_box`], optionally clipped to a `(height, width)` image.
///
/// Decoded sizes below one pixel are raised to one so the result stays a
/// valid inclusive box.
pub fn decode_box(anchor: &BBox, deltas: [f64; 4], clip: Option<(usize, usize)>) -> Result<BBox> {
    let [tx, ty, tw, th] = deltas;
    for d in deltas {
        if !d.is_finite() {
            return Err(Error::DeltaOutOfRange(d));
        }
    }
    for d in [tw, th] {
        if d.abs() > MAX_LOG_DELTA {
            return Err(Error::DeltaOutOfRange(d));
        }
    }
    let (wa, ha) = (anchor.width(), anchor.height());
    let (cxa, cya) = anchor.center();
    let w = (wa * tw.exp()).max(1.0);
    let h = (ha * th.exp()).max(1.0);
    let b = BBox::from_center(cxa + tx * wa, cya + ty * ha, w, h)?;
    Ok(match clip {
        Some((ih, iw)) => b.clip(ih, iw),
        None => b,
    })
}

/// Assigns a label to every anchor against the pseudo ground-truth boxes.
///
/// Anchors crossing the image border are ignored. An inside anchor is
/// positive when its best IoU exceeds `pos_iou`, or when it attains the
/// highest IoU any inside anchor has with some box (provided that IoU is
/// non-zero). Remaining anchors with best IoU below `neg_iou` are negative.
pub fn label_anchors(
    anchors: &AnchorGrid,
    boxes: &[BBox],
    image_h: usize,
    image_w: usize,
    pos_iou: f64,
    neg_iou: f64,
) -> Result<AnchorTargets> {
    if !(0.0..=1.0).contains(&pos_iou) || !(0.0..=1.0).contains(&neg_iou) || pos_iou <= neg_iou {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= neg_iou < pos_iou <= 1, got neg {neg_iou}, pos {pos_iou}"
        )));
    }

    let mut targets: Vec<AnchorTarget> = Vec::with_capacity(anchors.len());
    let mut best_per_box = vec![0.0f64; boxes.len()];
    // per-anchor IoU rows, only for inside anchors
    let mut overlaps: Vec<Option<Vec<f64>>> = Vec::with_capacity(anchors.len());

    for a in &anchors.anchors {
        if !a.inside(image_h, image_w) {
            targets.push(AnchorTarget {
                label: AnchorLabel::Ignore,
                deltas: None,
                matched: None,
                max_iou: 0.0,
            });
            overlaps.push(None);
            continue;
        }
        let row: Vec<f64> = boxes.iter().map(|b| iou(a, b)).collect();
        let mut matched = None;
        let mut max_iou = 0.0;
        for (g, &v) in row.iter().enumerate() {
            if matched.is_none() || v > max_iou {
                matched = Some(g);
                max_iou = v;
            }
            best_per_box[g] = best_per_box[g].max(v);
        }
        let label = if max_iou < neg_iou {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
        targets.push(AnchorTarget {
            label,
            deltas: None,
            matched,
            max_iou,
        });
        overlaps.push(Some(row));
    }

    for (i, row) in overlaps.iter().enumerate() {
        let Some(row) = row else { continue };
        let t = &mut targets[i];
        let attains_box_max = row.iter().zip(&best_per_box).any(|(&v, &best)| best > 0.0 && v == best);
        if t.max_iou > pos_iou || attains_box_max {
            let g = t.matched.expect("inside anchor with a box has a match");
            t.label = AnchorLabel::Positive;
            t.deltas = Some(encode_box(&anchors.anchors[i], &boxes[g]));
        }
    }
    Ok(AnchorTargets { targets })
}

/// Draws a balanced mini-batch: at most `batch_size * pos_fraction`
/// positives, negatives filling the remainder. Unsampled anchors become
/// `Ignore`. The draw depends only on `seed`.
pub fn sample_anchors(
    targets: &AnchorTargets,
    batch_size: usize,
    pos_fraction: f64,
    seed: u64,
) -> Result<AnchorTargets> {
    if !(0.0..=1.0).contains(&pos_fraction) {
        return Err(Error::InvalidParameter(format!(
            "positive fraction {pos_fraction} is not in [0, 1]"
        )));
    }
    let indices_of = |label| -> Vec<usize> {
        targets
            .targets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.label == label)
            .map(|(i, _)| i)
            .collect()
    };
    let pos = indices_of(AnchorLabel::Positive);
    let neg = indices_of(AnchorLabel::Negative);

    let want_pos = ((batch_size as f64 * pos_fraction).floor() as usize).min(pos.len());
    let want_neg = (batch_size - want_pos).min(neg.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; targets.len()];
    for i in index::sample(&mut rng, pos.len(), want_pos) {
        keep[pos[i]] = true;
    }
    for i in index::sample(&mut rng, neg.len(), want_neg) {
        keep[neg[i]] = true;
    }

    let targets = targets
        .targets
        .iter()
        .zip(&keep)
        .map(|(t, &k)| {
            if k {
                *t
            } else {
                AnchorTarget {
                    label: AnchorLabel::Ignore,
                    deltas: None,
                    ..*t
                }
            }
        })
        .collect();
    Ok(AnchorTargets { targets })
}

/// Per-anchor objectness probabilities and regression outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnPrediction {
    pub probs: Vec<f64>,
    pub deltas: Vec<[f64; 4]>,
}

impl RpnPrediction {
    pub fn new(probs: Vec<f64>, deltas: Vec<[f64; 4]>) -> Result<Self> {
        if probs.len() != deltas.len() {
            return Err(Error::Shape(format!(
                "{} probabilities but {} delta rows",
                probs.len(),
                deltas.len()
            )));
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0 && **p < 1.0))
        {
            return Err(Error::InvalidProbability { index, value });
        }
        if deltas.iter().flatten().any(|d| !d.is_finite()) {
            return Err(Error::InvalidParameter("non-finite regression output".into()));
        }
        Ok(Self { probs, deltas })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls_term: f64,
    pub reg_term: f64,
    pub total: f64,
    pub n_cls: usize,
    pub n_reg: usize,
    pub lambda: f64,
}

/// Quadratic below |x| = 1, linear beyond.
#[inline]
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Evaluates the RPN loss of `pred` against `targets`.
///
/// `cls_term` sums the natural-log loss over non-ignored anchors and
/// `reg_term` sums smooth L1 over the four coordinates of positive anchors;
/// `total = cls_term / n_cls + lambda * reg_term / n_reg`.
pub fn rpn_loss(
    pred: &RpnPrediction,
    targets: &AnchorTargets,
    lambda: f64,
    n_cls: usize,
    n_reg: usize,
) -> Result<LossBreakdown> {
    if pred.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} anchors",
            pred.len(),
            targets.len()
        )));
    }
    if n_cls == 0 || n_reg == 0 || !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "loss needs positive normalizers and non-negative lambda, got n_cls {n_cls}, n_reg {n_reg}, lambda {lambda}"
        )));
    }
    if let Some((index, &value)) = pred
        .probs
        .iter()
        .enumerate()
        .find(|(_, p)| !(p.is_finite() && **p > 0.0 && **p < 1.0))
    {
        return Err(Error::InvalidProbability { index, value });
    }

    let mut cls_term = 0.0;
    let mut reg_term = 0.0;
    for ((t, &p), d) in targets.targets.iter().zip(&pred.probs).zip(&pred.deltas) {
        match t.label {
            AnchorLabel::Positive => {
                cls_term -= p.ln();
                let star = t.deltas.expect("positive anchors carry targets");
                reg_term += d.iter().zip(&star).map(|(a, b)| smooth_l1(a - b)).sum::<f64>();
            }
            AnchorLabel::Negative => cls_term -= (-p).ln_1p(),
            AnchorLabel::Ignore => {}
        }
    }
    Ok(LossBreakdown {
        cls_term,
        reg_term,
        total: cls_term / n_cls as f64 + lambda * reg_term / n_reg as f64,
        n_cls,
        n_reg,
        lambda,
    })
}
