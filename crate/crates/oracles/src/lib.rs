//! Reference implementations and random instance generators for tests.
//!
//! Nothing here calls the algorithmic routines of `sgloc`; only its data
//! containers are used. Each oracle is the slowest obvious evaluation of the
//! defining rule: scalar loops, exhaustive search, rasterization, flood fill.

pub mod fixtures;
pub mod gen;

use sgloc::geometry::BBox;
use sgloc::tensor::{Matrix2, Tensor3};

/// GAP-head scores by explicit loops over class, channel and pixel.
pub fn gap_scores(f: &Tensor3, w: &Matrix2) -> Vec<f64> {
    let plane = (f.height() * f.width()) as f64;
    let mut scores = vec![0.0; w.rows()];
    for (c, score) in scores.iter_mut().enumerate() {
        for u in 0..f.channels() {
            let mut mean = 0.0;
            for y in 0..f.height() {
                for x in 0..f.width() {
                    mean += f.get(u, y, x) as f64;
                }
            }
            mean /= plane;
            *score += w.get(c, u) as f64 * mean;
        }
    }
    scores
}

/// Index of the first maximum.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 0..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

/// CAM by a pixel-outer triple loop.
pub fn cam(f: &Tensor3, w: &Matrix2, class: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.height() * f.width());
    for y in 0..f.height() {
        for x in 0..f.width() {
            let mut s = 0.0;
            for u in 0..f.channels() {
                s += w.get(class, u) as f64 * f.get(u, y, x) as f64;
            }
            out.push(s);
        }
    }
    out
}

/// Exhaustive Otsu: tries every interior bin edge `k` of a `bins`-bin
/// min-max histogram, partitioning pixels directly by `value >= edge_k`.
/// Returns `(threshold, k)` of the first maximizer, or `None` for a
/// constant map.
pub fn otsu(values: &[f32], bins: usize) -> Option<(f64, usize)> {
    let lo = values.iter().fold(f32::INFINITY, |a, &v| a.min(v)) as f64;
    let hi = values.iter().fold(f32::NEG_INFINITY, |a, &v| a.max(v)) as f64;
    if hi <= lo {
        return None;
    }
    let edge = |k: usize| lo + (hi - lo) * (k as f64 / bins as f64);
    let edges: Vec<f64> = (0..bins).map(edge).collect();
    // bin index = number of interior edges reached
    let bin_of: Vec<u64> = values
        .iter()
        .map(|&v| (1..bins).filter(|&j| v as f64 >= edges[j]).count() as u64)
        .collect();

    let mut best: Option<(f64, usize, f64)> = None;
    for (k, &cut) in edges.iter().enumerate().skip(1) {
        let (mut n0, mut s0, mut n1, mut s1) = (0u64, 0u64, 0u64, 0u64);
        for (&v, &b) in values.iter().zip(&bin_of) {
            if v as f64 >= cut {
                n1 += 1;
                s1 += b;
            } else {
                n0 += 1;
                s0 += b;
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let total = (n0 + n1) as f64;
        let w0 = n0 as f64 / total;
        let w1 = n1 as f64 / total;
        let mu0 = s0 as f64 / n0 as f64;
        let mu1 = s1 as f64 / n1 as f64;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if best.is_none_or(|(_, _, b)| var > b) {
            best = Some((cut, k, var));
        }
    }
    best.map(|(t, k, _)| (t, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blob {
    pub area: usize,
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

/// 8-connected components by stack flood fill, seeded in raster order.
/// Returns per-pixel labels (0 = background, 1-based otherwise) and blobs.
pub fn flood_fill(bits: &[bool], h: usize, w: usize) -> (Vec<u32>, Vec<Blob>) {
    let mut labels = vec![0u32; h * w];
    let mut blobs = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !bits[sy * w + sx] || labels[sy * w + sx] != 0 {
                continue;
            }
            let id = blobs.len() as u32 + 1;
            let mut blob = Blob {
                area: 0,
                x_min: sx,
                y_min: sy,
                x_max: sx,
                y_max: sy,
            };
            labels[sy * w + sx] = id;
            let mut stack = vec![(sy, sx)];
            while let Some((y, x)) = stack.pop() {
                blob.area += 1;
                blob.x_min = blob.x_min.min(x);
                blob.x_max = blob.x_max.max(x);
                blob.y_min = blob.y_min.min(y);
                blob.y_max = blob.y_max.max(y);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let p = ny as usize * w + nx as usize;
                        if bits[p] && labels[p] == 0 {
                            labels[p] = id;
                            stack.push((ny as usize, nx as usize));
                        }
                    }
                }
            }
            blobs.push(blob);
        }
    }
    (labels, blobs)
}

/// First blob of maximal area.
pub fn largest_blob(blobs: &[Blob]) -> Option<Blob> {
    let mut best: Option<Blob> = None;
    for b in blobs {
        if best.is_none_or(|x| b.area > x.area) {
            best = Some(*b);
        }
    }
    best
}

/// IoU of integer boxes by counting pixels on a `grid` x `grid` raster.
pub fn raster_iou(a: [i64; 4], b: [i64; 4], grid: i64) -> f64 {
    let inside = |bx: &[i64; 4], x: i64, y: i64| bx[0] <= x && x <= bx[2] && bx[1] <= y && y <= bx[3];
    let (mut inter, mut union) = (0u64, 0u64);
    for y in 0..grid {
        for x in 0..grid {
            let (ia, ib) = (inside(&a, x, y), inside(&b, x, y));
            if ia && ib {
                inter += 1;
            }
            if ia || ib {
                union += 1;
            }
        }
    }
    inter as f64 / union as f64
}

/// IoU written out from the inclusive-area definition.
pub fn formula_iou(a: &BBox, b: &BBox) -> f64 {
    let area = |x: &BBox| (x.x2 - x.x1 + 1.0) * (x.y2 - x.y1 + 1.0);
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1) + 1.0).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1) + 1.0).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (area(a) + area(b) - inter)
}

/// Quadratic NMS: repeatedly selects the best remaining candidate by linear
/// scan and keeps it iff it overlaps no kept box above the threshold.
pub fn nms(cands: &[(BBox, f64)], threshold: f64, max_keep: usize) -> Vec<usize> {
    let mut used = vec![false; cands.len()];
    let mut kept: Vec<usize> = Vec::new();
    for _ in 0..cands.len() {
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if !used[i] && best.is_none_or(|b| cands[i].1 > cands[b].1) {
                best = Some(i);
            }
        }
        let i = best.expect("an unused candidate remains");
        used[i] = true;
        if kept.len() == max_keep {
            break;
        }
        if kept.iter().all(|&k| formula_iou(&cands[k].0, &cands[i].0) <= threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Smallest integer `e` with `e * den >= num`.
fn ceil_div(num: usize, den: usize) -> usize {
    let mut e = 0;
    while e * den < num {
        e += 1;
    }
    e
}

/// RoI max pooling with the bin rule written as explicit searches.
pub fn roi_pool(f: &Tensor3, roi: &BBox, stride: f64, out_h: usize, out_w: usize) -> Option<Vec<f32>> {
    let x1 = ((roi.x1 / stride).floor().max(0.0)) as usize;
    let y1 = ((roi.y1 / stride).floor().max(0.0)) as usize;
    let x2 = (roi.x2 / stride).ceil().min(f.width() as f64 - 1.0);
    let y2 = (roi.y2 / stride).ceil().min(f.height() as f64 - 1.0);
    if x2 < x1 as f64 || y2 < y1 as f64 {
        return None;
    }
    let (rw, rh) = (x2 as usize - x1 + 1, y2 as usize - y1 + 1);
    let mut out = Vec::new();
    for c in 0..f.channels() {
        for by in 0..out_h {
            let (ys, ye) = ((by * rh) / out_h, ceil_div((by + 1) * rh, out_h));
            for bx in 0..out_w {
                let (xs, xe) = ((bx * rw) / out_w, ceil_div((bx + 1) * rw, out_w));
                let mut m: Option<f32> = None;
                for y in ys..ye {
                    for x in xs..xe {
                        let v = f.get(c, y1 + y, x1 + x);
                        m = Some(m.map_or(v, |m: f32| m.max(v)));
                    }
                }
                out.push(m.unwrap_or(0.0));
            }
        }
    }
    Some(out)
}

/// Anchor labels (1 / 0 / -1) by direct evaluation of the rule, one box.
pub fn anchor_labels(anchors: &[BBox], gt: &BBox, image_h: usize, image_w: usize, pos: f64, neg: f64) -> Vec<i8> {
    let inside: Vec<bool> = anchors
        .iter()
        .map(|a| a.x1 >= 0.0 && a.y1 >= 0.0 && a.x2 <= image_w as f64 - 1.0 && a.y2 <= image_h as f64 - 1.0)
        .collect();
    let ious: Vec<f64> = anchors.iter().map(|a| formula_iou(a, gt)).collect();
    let best = anchors
        .iter()
        .enumerate()
        .filter(|(i, _)| inside[*i])
        .map(|(i, _)| ious[i])
        .fold(0.0f64, f64::max);
    (0..anchors.len())
        .map(|i| {
            if !inside[i] {
                -1
            } else if ious[i] > pos || (best > 0.0 && ious[i] == best) {
                1
            } else if ious[i] < neg {
                0
            } else {
                -1
            }
        })
        .collect()
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Two-term RPN loss summed anchor by anchor. `labels` uses 1 / 0 / -1.
#[allow(clippy::too_many_arguments)]
pub fn rpn_loss(
    probs: &[f64],
    deltas: &[[f64; 4]],
    labels: &[i8],
    targets: &[[f64; 4]],
    lambda: f64,
    n_cls: usize,
    n_reg: usize,
) -> (f64, f64, f64) {
    let mut cls = 0.0;
    let mut reg = 0.0;
    for i in 0..probs.len() {
        if labels[i] < 0 {
            continue;
        }
        let star = labels[i] as f64;
        cls += -(star * probs[i].ln() + (1.0 - star) * (1.0 - probs[i]).ln());
        if labels[i] == 1 {
            for k in 0..4 {
                reg += smooth_l1(deltas[i][k] - targets[i][k]);
            }
        }
    }
    (cls, reg, cls / n_cls as f64 + lambda * reg / n_reg as f64)
}
