//! Classification and localization evaluation.
//!
//! Every aggregate here is a count reduction over [`EvalRecord`]s, so shards
//! can be evaluated independently and merged.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub const DEFAULT_IOU_CUT: f64 = 0.5;

/// Upper edges of the first four IoU histogram bins; the last bin is `[0.8, 1.0]`.
pub const IOU_BIN_EDGES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartLocation {
    pub part_id: u32,
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// One evaluated image. Class indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: u64,
    pub true_class: usize,
    pub predicted_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_box: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_box: Option<BBox>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<PartLocation>,
}

/// Fraction of correctly classified records.
pub fn accuracy(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyEvaluation("no records for accuracy"));
    }
    let correct = records.iter().filter(|r| r.true_class == r.predicted_class).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Counts over the five IoU bins `[0,.2) [.2,.4) [.4,.6) [.6,.8) [.8,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IouHistogram {
    pub counts: [u64; 5],
}

impl IouHistogram {
    pub fn bin_of(iou: f64) -> usize {
        IOU_BIN_EDGES.iter().take_while(|&&edge| iou >= edge).count()
    }

    pub fn add(&mut self, iou: f64) {
        self.counts[Self::bin_of(iou)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV with header `bin_start,bin_end,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count\n");
        let mut lo = 0.0;
        for (i, &n) in self.counts.iter().enumerate() {
            let hi = IOU_BIN_EDGES.get(i).copied().unwrap_or(1.0);
            writeln!(out, "{lo},{hi},{n}").unwrap();
            lo = hi;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub accuracy: f64,
    pub correct: u64,
    pub evaluated: u64,
    pub iou_cut: f64,
    pub histogram: IouHistogram,
}

/// Share of records whose predicted box overlaps the ground truth with IoU
/// strictly above `iou_cut`. Records missing either box are skipped.
pub fn localization_accuracy(records: &[EvalRecord], iou_cut: f64) -> Result<LocalizationSummary> {
    let mut histogram = IouHistogram::default();
    let mut correct = 0;
    for r in records {
        if let (Some(p), Some(g)) = (&r.predicted_box, &r.gt_box) {
            let v = iou(p, g);
            histogram.add(v);
            if v > iou_cut {
                correct += 1;
            }
        }
    }
    let evaluated = histogram.total();
    if evaluated == 0 {
        return Err(Error::EmptyEvaluation(
            "no records carry both a predicted and a ground-truth box",
        ));
    }
    Ok(LocalizationSummary {
        accuracy: correct as f64 / evaluated as f64,
        correct,
        evaluated,
        iou_cut,
        histogram,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartPcl {
    pub visible: u64,
    pub inside: u64,
    /// `None` when the part was never visible.
    pub pcl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PclReport {
    pub per_part: BTreeMap<u32, PartPcl>,
    /// Unweighted mean over parts that were visible at least once.
    pub average: f64,
}

/// Percentage of correctly localized parts: per part, the share of images
/// (with a predicted box and the part visible) whose part point lies inside
/// the predicted box, edges included.
pub fn pcl(records: &[EvalRecord]) -> Result<PclReport> {
    let mut per_part: BTreeMap<u32, PartPcl> = BTreeMap::new();
    for r in records {
        for p in &r.parts {
            let entry = per_part.entry(p.part_id).or_insert(PartPcl {
                visible: 0,
                inside: 0,
                pcl: None,
            });
            let Some(b) = &r.predicted_box else { continue };
            if !p.visible {
                continue;
            }
            entry.visible += 1;
            if b.contains_point(p.x, p.y) {
                entry.inside += 1;
            }
        }
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for e in per_part.values_mut() {
        if e.visible > 0 {
            let v = e.inside as f64 / e.visible as f64;
            e.pcl = Some(v);
            sum += v;
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::EmptyEvaluation("no visible parts with a predicted box"));
    }
    Ok(PclReport {
        per_part,
        average: sum / present as f64,
    })
}

/// `counts[t][p]` = records of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusedPair {
    pub true_class: usize,
    pub predicted_class: usize,
    pub count: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// The `k` largest off-diagonal cells; ties go to the lower true class,
    /// then the lower predicted class. Zero cells are never reported.
    pub fn top_confused(&self, k: usize) -> Vec<ConfusedPair> {
        let mut pairs: Vec<ConfusedPair> = self
            .counts
            .iter()
            .enumerate()
            .flat_map(|(t, row)| {
                row.iter()
                    .enumerate()
                    .filter(move |&(p, &n)| p != t && n > 0)
                    .map(move |(p, &n)| ConfusedPair {
                        true_class: t,
                        predicted_class: p,
                        count: n,
                    })
            })
            .collect();
        pairs.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then(a.true_class.cmp(&b.true_class))
                .then(a.predicted_class.cmp(&b.predicted_class))
        });
        pairs.truncate(k);
        pairs
    }

    /// Rows are true classes, columns predicted classes, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.counts {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn confusion(records: &[EvalRecord], num_classes: usize) -> Result<ConfusionMatrix> {
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for r in records {
        for c in [r.true_class, r.predicted_class] {
            if c >= num_classes {
                return Err(Error::ClassOutOfRange {
                    index: c,
                    classes: num_classes,
                });
            }
        }
        counts[r.true_class][r.predicted_class] += 1;
    }
    Ok(ConfusionMatrix { num_classes, counts })
}

/// Full evaluation over one record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub accuracy: f64,
    /// `None` when no record carries both boxes.
    pub localization: Option<LocalizationSummary>,
    /// `None` when no visible part meets a predicted box.
    pub pcl: Option<PclReport>,
    pub confusion: ConfusionMatrix,
    pub top_confused: Vec<ConfusedPair>,
}

pub fn evaluate(records: &[EvalRecord], num_classes: usize, iou_cut: f64, top_k: usize) -> Result<EvalReport> {
    let accuracy = accuracy(records)?;
    let confusion = confusion(records, num_classes)?;
    let localization = match localization_accuracy(records, iou_cut) {
        Ok(s) => Some(s),
        Err(Error::EmptyEvaluation(_)) => None,
        Err(e) => return Err(e),
    };
    let pcl = match pcl(records) {
        Ok(p) => Some(p),
        Err(Error::EmptyEvaluation(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        records: records.len(),
        accuracy,
        localization,
        pcl,
        top_confused: confusion.top_confused(top_k),
        confusion,
    })
}
