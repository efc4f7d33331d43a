//! Class activation maps and pseudo ground-truth boxes.
//!
//! A saliency map for class `c` is the classifier-weighted sum of the last
//! convolutional feature channels, `M_c(y, x) = sum_u w[c][u] * f_u(y, x)`.
//! The map is upsampled to image resolution, binarized with an Otsu threshold,
//! and the tight box around its largest 8-connected foreground component
//! becomes the pseudo ground truth for anchor labeling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::{Matrix2, Tensor3};

pub const DEFAULT_OTSU_BINS: usize = 256;

/// How the class used to weight a saliency map was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CamSource {
    ArgmaxPredicted,
    CallerForced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    pub class_index: usize,
    pub source: CamSource,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>, class_index: usize, source: CamSource) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} saliency map cannot hold {} values",
                values.len()
            )));
        }
        if let Some(offset) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue { offset });
        }
        Ok(Self {
            height,
            width,
            values,
            class_index,
            source,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn to_matrix(&self) -> Matrix2 {
        Matrix2::new(self.height, self.width, self.values.clone()).expect("saliency values are finite and sized")
    }

    pub fn from_matrix(m: &Matrix2, class_index: usize, source: CamSource) -> Result<Self> {
        Self::new(m.rows(), m.cols(), m.data().to_vec(), class_index, source)
    }

    /// Minimum and maximum value.
    pub fn range(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

fn check_weights(features: &Tensor3, weights: &Matrix2) -> Result<()> {
    if weights.cols() != features.channels() {
        return Err(Error::Shape(format!(
            "weights have {} columns but features have {} channels",
            weights.cols(),
            features.channels()
        )));
    }
    if weights.rows() == 0 {
        return Err(Error::Shape("weight matrix has no classes".into()));
    }
    Ok(())
}

/// Class scores of the GAP head: `score[c] = sum_u w[c][u] * mean(f_u)`.
pub fn class_scores(features: &Tensor3, weights: &Matrix2) -> Result<Vec<f64>> {
    check_weights(features, weights)?;
    let plane = (features.height() * features.width()) as f64;
    let gap: Vec<f64> = (0..features.channels())
        .map(|u| features.channel(u).iter().map(|&v| v as f64).sum::<f64>() / plane)
        .collect();
    Ok((0..weights.rows())
        .map(|c| weights.row(c).iter().zip(&gap).map(|(&w, g)| w as f64 * g).sum())
        .collect())
}

/// Argmax of the GAP-head scores; ties go to the lowest class index.
pub fn predict_class(features: &Tensor3, weights: &Matrix2) -> Result<usize> {
    let scores = class_scores(features, weights)?;
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Saliency map of `class_index`, marked as caller-forced.
pub fn compute_cam(features: &Tensor3, weights: &Matrix2, class_index: usize) -> Result<SaliencyMap> {
    check_weights(features, weights)?;
    if class_index >= weights.rows() {
        return Err(Error::ClassOutOfRange {
            index: class_index,
            classes: weights.rows(),
        });
    }
    let mut acc = vec![0.0f64; features.height() * features.width()];
    for (u, &w) in weights.row(class_index).iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let w = w as f64;
        for (a, &f) in acc.iter_mut().zip(features.channel(u)) {
            *a += w * f as f64;
        }
    }
    SaliencyMap::new(
        features.height(),
        features.width(),
        acc.into_iter().map(|v| v as f32).collect(),
        class_index,
        CamSource::CallerForced,
    )
}

/// Saliency map of the predicted class.
pub fn predicted_cam(features: &Tensor3, weights: &Matrix2) -> Result<SaliencyMap> {
    let class = predict_class(features, weights)?;
    let mut map = compute_cam(features, weights, class)?;
    map.source = CamSource::ArgmaxPredicted;
    Ok(map)
}

/// Source coordinate of output index `i` under corner-aligned sampling.
fn sample_coord(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    if src == 1 || dst == 1 {
        return (0, 0, 0.0);
    }
    let s = (i * (src - 1)) as f64 / (dst - 1) as f64;
    let lo = (s.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, s - lo as f64)
}

/// Bilinear resize with corner-aligned sampling: output corners coincide
/// with input corners.
pub fn upsample_bilinear(map: &SaliencyMap, target_h: usize, target_w: usize) -> Result<SaliencyMap> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidParameter(format!(
            "target size {target_h}x{target_w} must be positive"
        )));
    }
    let cols: Vec<_> = (0..target_w).map(|x| sample_coord(x, map.width, target_w)).collect();
    let mut out = Vec::with_capacity(target_h * target_w);
    for y in 0..target_h {
        let (y0, y1, ty) = sample_coord(y, map.height, target_h);
        for &(x0, x1, tx) in &cols {
            let top = (1.0 - tx) * map.get(y0, x0) as f64 + tx * map.get(y0, x1) as f64;
            let bottom = (1.0 - tx) * map.get(y1, x0) as f64 + tx * map.get(y1, x1) as f64;
            out.push(((1.0 - ty) * top + ty * bottom) as f32);
        }
    }
    SaliencyMap::new(target_h, target_w, out, map.class_index, map.source)
}

/// Outcome of an Otsu search over a min-max normalized histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuSplit {
    /// Pixels with value `>= threshold` are foreground.
    pub threshold: f64,
    /// Index `k` of the chosen bin edge; bins `k..` are foreground.
    pub edge_index: usize,
    pub between_variance: f64,
}

/// Value of bin edge `k` (of `bins`) over `[lo, lo + range]`.
#[inline]
fn bin_edge(lo: f64, range: f64, k: usize, bins: usize) -> f64 {
    lo + range * (k as f64 / bins as f64)
}

/// Maximizes between-class variance over the interior edges of a
/// `bins`-bin histogram. Ties resolve to the lowest edge.
///
/// A value's bin is the number of interior edges it reaches, so the returned
/// threshold partitions pixels exactly as the histogram does.
pub fn otsu(map: &SaliencyMap, bins: usize) -> Result<OtsuSplit> {
    if bins < 2 {
        return Err(Error::InvalidParameter(format!(
            "Otsu needs at least 2 bins, got {bins}"
        )));
    }
    let (lo, hi) = map.range();
    let (lo, hi) = (lo as f64, hi as f64);
    if hi <= lo {
        return Err(Error::DegenerateMap);
    }
    let range = hi - lo;

    let mut hist = vec![0u64; bins];
    for &v in map.values() {
        let v = v as f64;
        let mut b = (((v - lo) / range) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        while b + 1 < bins && v >= bin_edge(lo, range, b + 1, bins) {
            b += 1;
        }
        while b > 0 && v < bin_edge(lo, range, b, bins) {
            b -= 1;
        }
        hist[b] += 1;
    }

    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(i, &n)| i as u64 * n).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best: Option<OtsuSplit> = None;
    for k in 1..bins {
        n0 += hist[k - 1];
        s0 += (k as u64 - 1) * hist[k - 1];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let var = between_class_variance(n0, s0, n1, total_sum - s0);
        if best.is_none_or(|b| var > b.between_variance) {
            best = Some(OtsuSplit {
                threshold: bin_edge(lo, range, k, bins),
                edge_index: k,
                between_variance: var,
            });
        }
    }
    // a non-constant map puts its minimum below edge 1 and its maximum above
    // the last edge, so some split has two non-empty classes
    best.ok_or(Error::DegenerateMap)
}

/// `w0 * w1 * (mu0 - mu1)^2` from class counts and bin-index sums.
pub fn between_class_variance(n0: u64, s0: u64, n1: u64, s1: u64) -> f64 {
    let total = (n0 + n1) as f64;
    let w0 = n0 as f64 / total;
    let w1 = n1 as f64 / total;
    let mu0 = s0 as f64 / n0 as f64;
    let mu1 = s1 as f64 / n1 as f64;
    w0 * w1 * (mu0 - mu1) * (mu0 - mu1)
}

pub fn otsu_threshold(map: &SaliencyMap, bins: usize) -> Result<f64> {
    otsu(map, bins).map(|s| s.threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    pub threshold_used: f64,
}

impl BinaryMask {
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>, threshold_used: f64) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask cannot hold {} bits",
                bits.len()
            )));
        }
        Ok(Self {
            height,
            width,
            bits,
            threshold_used,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Foreground is every value `>= threshold`.
pub fn binarize(map: &SaliencyMap, threshold: f64) -> BinaryMask {
    BinaryMask {
        height: map.height,
        width: map.width,
        bits: map.values.iter().map(|&v| v as f64 >= threshold).collect(),
        threshold_used: threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentStats {
    pub area: usize,
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

/// 8-connected labeling. `labels[p]` is 0 for background, otherwise the
/// 1-based component number in raster-order discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub labels: Vec<u32>,
    pub stats: Vec<ComponentStats>,
}

impl Components {
    /// Index into `stats` of the largest component; earliest wins ties.
    pub fn largest(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, s) in self.stats.iter().enumerate() {
            if best.is_none_or(|b| s.area > self.stats[b].area) {
                best = Some(i);
            }
        }
        best
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labeling with 8-connectivity.
pub fn label_components(mask: &BinaryMask) -> Components {
    let (h, w) = (mask.height, mask.width);
    let mut provisional = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbors[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                push(provisional[y * w + x - 1]);
            }
            if y > 0 {
                let up = (y - 1) * w;
                if x > 0 {
                    push(provisional[up + x - 1]);
                }
                push(provisional[up + x]);
                if x + 1 < w {
                    push(provisional[up + x + 1]);
                }
            }
            let label = if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let first = neighbors[0];
                for &other in &neighbors[1..n] {
                    union(&mut parent, first, other);
                }
                first
            };
            provisional[y * w + x] = label;
        }
    }

    // renumber roots in raster order of first appearance
    let mut remap = vec![0u32; parent.len()];
    let mut labels = vec![0u32; h * w];
    let mut stats: Vec<ComponentStats> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p) as usize;
            if remap[root] == 0 {
                stats.push(ComponentStats {
                    area: 0,
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                });
                remap[root] = stats.len() as u32;
            }
            let id = remap[root];
            labels[y * w + x] = id;
            let s = &mut stats[id as usize - 1];
            s.area += 1;
            s.x_min = s.x_min.min(x);
            s.x_max = s.x_max.max(x);
            s.y_max = s.y_max.max(y);
        }
    }
    Components { labels, stats }
}

/// Tight box and pixel count of the largest foreground component.
pub fn largest_component_box(mask: &BinaryMask) -> Option<(BBox, usize)> {
    let comps = label_components(mask);
    let s = comps.stats[comps.largest()?];
    let bbox = BBox::new(s.x_min as f64, s.y_min as f64, s.x_max as f64, s.y_max as f64)
        .expect("component extents are ordered");
    Some((bbox, s.area))
}

/// Pseudo ground-truth box derived from a saliency map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub component_area: usize,
    pub saliency_class: usize,
    pub threshold: f64,
}

/// Upsamples to image size, thresholds with Otsu, and boxes the largest
/// connected foreground region.
pub fn extract_pseudo_box(map: &SaliencyMap, image_h: usize, image_w: usize, bins: usize) -> Result<PseudoBox> {
    let up = upsample_bilinear(map, image_h, image_w)?;
    let split = otsu(&up, bins)?;
    let mask = binarize(&up, split.threshold);
    let (bbox, component_area) = largest_component_box(&mask).expect("Otsu split leaves a non-empty foreground");
    Ok(PseudoBox {
        bbox,
        component_area,
        saliency_class: map.class_index,
        threshold: split.threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, values: Vec<f32>) -> SaliencyMap {
        SaliencyMap::new(h, w, values, 0, CamSource::CallerForced).unwrap()
    }

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.bytes().map(|b| b == b'#')).collect();
        BinaryMask::from_bits(h, w, bits, 0.5).unwrap()
    }

    #[test]
    fn zero_features_predict_class_zero() {
        let f = Tensor3::zeros(4, 3, 3).unwrap();
        let w = Matrix2::from_fn(5, 4, |r, c| (r + c) as f32).unwrap();
        assert_eq!(predict_class(&f, &w).unwrap(), 0);
    }

    #[test]
    fn dominant_row_wins() {
        let f = Tensor3::from_fn(3, 2, 2, |c, y, x| 1.0 + (c + y + x) as f32).unwrap();
        let w = Matrix2::from_fn(4, 3, |r, _| if r == 2 { 5.0 } else { 0.1 }).unwrap();
        assert_eq!(predict_class(&f, &w).unwrap(), 2);
        assert_eq!(predicted_cam(&f, &w).unwrap().source, CamSource::ArgmaxPredicted);
    }

    #[test]
    fn shape_mismatch_and_bad_class() {
        let f = Tensor3::zeros(512, 2, 2).unwrap();
        let w = Matrix2::new(2, 1024, vec![0.0; 2048]).unwrap();
        assert!(matches!(predict_class(&f, &w), Err(Error::Shape(_))));
        let f = Tensor3::zeros(2, 2, 2).unwrap();
        let w = Matrix2::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(matches!(
            compute_cam(&f, &w, 3),
            Err(Error::ClassOutOfRange { index: 3, classes: 3 })
        ));
    }

    #[test]
    fn single_channel_cam_is_identity() {
        let f = Tensor3::from_fn(1, 3, 4, |_, y, x| (y * 4 + x) as f32 - 2.5).unwrap();
        let w = Matrix2::new(1, 1, vec![1.0]).unwrap();
        let m = compute_cam(&f, &w, 0).unwrap();
        assert_eq!(m.values(), f.data());
        let zero = Matrix2::new(1, 1, vec![0.0]).unwrap();
        assert!(compute_cam(&f, &zero, 0).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_closed_form() {
        let m = map(2, 2, vec![0.0, 1.0, 0.0, 1.0]);
        let up = upsample_bilinear(&m, 2, 3).unwrap();
        assert_eq!(up.values(), &[0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);

        let same = upsample_bilinear(&m, 2, 2).unwrap();
        assert_eq!(same.values(), m.values());

        let c = map(3, 2, vec![0.7; 6]);
        let up = upsample_bilinear(&c, 17, 11).unwrap();
        assert!(up.values().iter().all(|&v| v == 0.7));

        let one = map(1, 1, vec![3.0]);
        assert_eq!(upsample_bilinear(&one, 2, 2).unwrap().values(), &[3.0; 4]);
        assert!(upsample_bilinear(&one, 0, 2).is_err());
    }

    #[test]
    fn otsu_separates_bimodal_values() {
        let mut v = vec![0.1f32; 50];
        v.extend(vec![0.9f32; 50]);
        let t = otsu_threshold(&map(10, 10, v), DEFAULT_OTSU_BINS).unwrap();
        assert!(t > 0.1 && t < 0.9, "threshold {t}");
        // the first edge past the low mode is the lowest of the tied optima
        let (lo, hi) = (0.1f32 as f64, 0.9f32 as f64);
        assert_eq!(t, lo + (hi - lo) * (1.0 / 256.0));
    }

    #[test]
    fn constant_map_is_degenerate() {
        assert!(matches!(
            otsu(&map(4, 4, vec![2.0; 16]), 256),
            Err(Error::DegenerateMap)
        ));
        assert!(matches!(
            extract_pseudo_box(&map(2, 2, vec![1.0; 4]), 10, 10, 256),
            Err(Error::DegenerateMap)
        ));
        assert!(otsu(&map(1, 2, vec![0.0, 1.0]), 1).is_err());
    }

    #[test]
    fn single_blob_tight_box() {
        let mut bits = vec![false; 64 * 64];
        for y in 20..30 {
            for x in 30..40 {
                bits[y * 64 + x] = true;
            }
        }
        let mask = BinaryMask::from_bits(64, 64, bits, 0.5).unwrap();
        let (bbox, area) = largest_component_box(&mask).unwrap();
        assert_eq!(bbox.to_array(), [30.0, 20.0, 39.0, 29.0]);
        assert_eq!(area, 100);
    }

    #[test]
    fn largest_area_wins() {
        let mut bits = vec![false; 40 * 40];
        for y in 2..5 {
            for x in 2..5 {
                bits[y * 40 + x] = true;
            }
        }
        for y in 20..30 {
            for x in 10..20 {
                bits[y * 40 + x] = true;
            }
        }
        let mask = BinaryMask::from_bits(40, 40, bits, 0.5).unwrap();
        let comps = label_components(&mask);
        assert_eq!(comps.stats.len(), 2);
        assert_eq!(comps.stats[0].area, 9);
        let (bbox, area) = largest_component_box(&mask).unwrap();
        assert_eq!((bbox.to_array(), area), ([10.0, 20.0, 19.0, 29.0], 100));
    }

    #[test]
    fn diagonal_pixels_join_and_ties_keep_first() {
        let mask = mask_from(&["#...#", ".#.#.", "..#..", ".....", "##.##"]);
        let comps = label_components(&mask);
        // the V shape is one 8-connected component; the bottom pairs are separate
        assert_eq!(comps.stats.len(), 3);
        assert_eq!(comps.stats[0].area, 5);
        assert_eq!(comps.labels[4], 1);

        let twins = mask_from(&["##..##"]);
        let (bbox, _) = largest_component_box(&twins).unwrap();
        assert_eq!(bbox.x1, 0.0);
    }

    #[test]
    fn u_shape_merges_late() {
        let mask = mask_from(&["#.#", "#.#", "###"]);
        let comps = label_components(&mask);
        assert_eq!(comps.stats.len(), 1);
        assert_eq!(comps.stats[0].area, 7);
        assert!(comps.labels.iter().all(|&l| l <= 1));
    }

    #[test]
    fn pseudo_box_from_peaked_map() {
        // 4x4 map with a bright 2x2 core; at 8x8 the core spans the middle
        let mut v = vec![0.0f32; 16];
        for (y, x) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            v[y * 4 + x] = 1.0;
        }
        let m = SaliencyMap::new(4, 4, v, 3, CamSource::ArgmaxPredicted).unwrap();
        let pb = extract_pseudo_box(&m, 8, 8, 256).unwrap();
        assert_eq!(pb.saliency_class, 3);
        let b = pb.bbox;
        assert!(b.x1 > 0.0 && b.y1 > 0.0 && b.x2 < 7.0 && b.y2 < 7.0, "{b:?}");
        assert_eq!(b.x1, 7.0 - b.x2);
        assert_eq!(pb.component_area as f64, b.area());
    }
}
