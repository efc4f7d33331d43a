//! Seeded random instances.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgloc::geometry::BBox;
use sgloc::metrics::{EvalRecord, PartLocation};
use sgloc::tensor::{Matrix2, Tensor3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Feature volume with entries uniform in `[0, scale)`, like post-ReLU maps.
pub fn volume(rng: &mut impl Rng, c: usize, h: usize, w: usize, scale: f32) -> Tensor3 {
    Tensor3::from_fn(c, h, w, |_, _, _| rng.gen_range(0.0..scale)).expect("small volume")
}

/// Classifier weights uniform in `[-1, 1)`.
pub fn weights(rng: &mut impl Rng, classes: usize, c: usize) -> Matrix2 {
    Matrix2::from_fn(classes, c, |_, _| rng.gen_range(-1.0..1.0)).expect("small matrix")
}

/// Saliency-like map: a few Gaussian bumps plus noise. One map in four is
/// quantized to a handful of levels so that many pixels share a value.
pub fn saliency_values(rng: &mut impl Rng, h: usize, w: usize) -> Vec<f32> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(1..4))
        .map(|_| {
            (
                rng.gen_range(0.0..w as f64),
                rng.gen_range(0.0..h as f64),
                rng.gen_range(1.0..(w.max(h) as f64 / 3.0).max(1.5)),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let noise: f64 = rng.gen_range(0.0..0.1);
    let levels: Option<f64> = rng.gen_bool(0.25).then(|| rng.gen_range(2..8) as f64);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for &(cx, cy, s, a) in &bumps {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            v += rng.gen_range(-noise..=noise);
            if let Some(l) = levels {
                v = (v * l).round() / l;
            }
            out.push(v as f32);
        }
    }
    out
}

/// Binary mask made of random rectangles, discs and random walks. At least
/// one pixel is set.
pub fn blob_mask(rng: &mut impl Rng, h: usize, w: usize) -> Vec<bool> {
    let mut bits = vec![false; h * w];
    for _ in 0..rng.gen_range(1..6) {
        match rng.gen_range(0..3) {
            0 => {
                let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
                let (x1, y1) = (rng.gen_range(x0..w), rng.gen_range(y0..h));
                for y in y0..=y1.min(y0 + h / 3) {
                    for x in x0..=x1.min(x0 + w / 3) {
                        bits[y * w + x] = true;
                    }
                }
            }
            1 => {
                let (cx, cy) = (rng.gen_range(0..w) as i64, rng.gen_range(0..h) as i64);
                let r = rng.gen_range(0..(h.min(w) as i64 / 4).max(1) + 1);
                for y in 0..h as i64 {
                    for x in 0..w as i64 {
                        if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                            bits[y as usize * w + x as usize] = true;
                        }
                    }
                }
            }
            _ => {
                let (mut x, mut y) = (rng.gen_range(0..w) as i64, rng.gen_range(0..h) as i64);
                for _ in 0..rng.gen_range(1..(h * w / 4).max(2)) {
                    bits[y as usize * w + x as usize] = true;
                    x = (x + rng.gen_range(-1..=1)).clamp(0, w as i64 - 1);
                    y = (y + rng.gen_range(-1..=1)).clamp(0, h as i64 - 1);
                }
            }
        }
    }
    for _ in 0..rng.gen_range(0..(h * w / 20).max(1)) {
        bits[rng.gen_range(0..h * w)] = true;
    }
    bits
}

/// Integer box inside a `grid` x `grid` raster.
pub fn int_box(rng: &mut impl Rng, grid: i64) -> [i64; 4] {
    let x1 = rng.gen_range(0..grid);
    let y1 = rng.gen_range(0..grid);
    [x1, y1, rng.gen_range(x1..grid), rng.gen_range(y1..grid)]
}

/// Real-valued box with corners in `[0, max_coord]` and sides of at least 1.
pub fn real_box(rng: &mut impl Rng, max_coord: f64) -> BBox {
    let x1 = rng.gen_range(0.0..max_coord - 1.0);
    let y1 = rng.gen_range(0.0..max_coord - 1.0);
    let x2 = rng.gen_range(x1 + 1.0..=max_coord);
    let y2 = rng.gen_range(y1 + 1.0..=max_coord);
    BBox::new(x1, y1, x2, y2).expect("ordered corners")
}

/// Scored candidates: clustered boxes so that suppression actually fires.
pub fn candidates(rng: &mut impl Rng, n: usize, max_coord: f64) -> Vec<(BBox, f64)> {
    let centres: Vec<BBox> = (0..rng.gen_range(3..10)).map(|_| real_box(rng, max_coord)).collect();
    (0..n)
        .map(|_| {
            let c = &centres[rng.gen_range(0..centres.len())];
            let j = |rng: &mut dyn rand::RngCore| rng.gen_range(-8.0..8.0);
            let x1 = (c.x1 + j(rng)).max(0.0);
            let y1 = (c.y1 + j(rng)).max(0.0);
            let x2 = (c.x2 + j(rng)).max(x1 + 1.0);
            let y2 = (c.y2 + j(rng)).max(y1 + 1.0);
            let score = (rng.gen_range(0..1000) as f64) / 1000.0;
            (BBox::new(x1, y1, x2, y2).expect("ordered corners"), score)
        })
        .collect()
}

pub const SYNTH_PARTS: u32 = 15;

/// Quantities of the synthetic evaluation set known by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub classes: usize,
    pub class_correct: usize,
    pub loc_correct: usize,
    pub histogram: [u64; 5],
    pub part_visible: Vec<u64>,
    pub part_inside: Vec<u64>,
    pub confusion: Vec<Vec<u64>>,
}

/// `n` records with ground truth `[0,0,9,9]` and predictions whose IoU is an
/// exact multiple of a tenth, chosen by record index. The truth is tallied
/// from integer rules, never from box arithmetic.
pub fn synthetic_records(n: usize) -> (Vec<EvalRecord>, SyntheticTruth) {
    let classes = 7;
    let mut truth = SyntheticTruth {
        classes,
        class_correct: 0,
        loc_correct: 0,
        histogram: [0; 5],
        part_visible: vec![0; SYNTH_PARTS as usize],
        part_inside: vec![0; SYNTH_PARTS as usize],
        confusion: vec![vec![0; classes]; classes],
    };
    let gt = BBox::new(0.0, 0.0, 9.0, 9.0).expect("valid");
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        // tenths in 0..=10; 0 means a disjoint prediction
        let tenths = i % 11;
        let pred = if tenths == 0 {
            BBox::new(20.0, 20.0, 29.0, 29.0)
        } else {
            BBox::new(0.0, 0.0, tenths as f64 - 1.0, 9.0)
        }
        .expect("valid");
        let true_class = i % classes;
        let predicted_class = if i % 5 == 0 {
            (true_class + 1) % classes
        } else {
            true_class
        };
        if true_class == predicted_class {
            truth.class_correct += 1;
        }
        truth.confusion[true_class][predicted_class] += 1;
        if tenths > 5 {
            truth.loc_correct += 1;
        }
        truth.histogram[(tenths / 2).min(4)] += 1;

        let parts = (1..=SYNTH_PARTS)
            .map(|p| {
                let visible = !(i + p as usize).is_multiple_of(4);
                let inside = !(i * 7 + p as usize).is_multiple_of(3);
                if visible {
                    truth.part_visible[p as usize - 1] += 1;
                    if inside {
                        truth.part_inside[p as usize - 1] += 1;
                    }
                }
                let (x, y) = if inside {
                    (pred.x1, pred.y2)
                } else {
                    (pred.x2 + 1.0, pred.y1)
                };
                PartLocation {
                    part_id: p,
                    x,
                    y,
                    visible,
                }
            })
            .collect();
        records.push(EvalRecord {
            image_id: i as u64 + 1,
            true_class,
            predicted_class,
            predicted_box: Some(pred),
            gt_box: Some(gt),
            parts,
        });
    }
    (records, truth)
}
