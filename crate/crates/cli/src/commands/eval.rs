use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use sgloc::metrics::{confusion, evaluate, ConfusedPair, EvalRecord};

use super::{ids_in_dir, Ctx};
use crate::output::{write_atomic, write_json};
use crate::records::{read_json, read_jsonl, CamRecord, Prediction, PseudoBoxRecord};
use crate::runner::Outcome;

/// Where evaluation records come from. Without `--records` or
/// `--predictions`, the `cam` and `pseudo-box` outputs under the output
/// directory are joined with the dataset index.
#[derive(Debug, Args)]
pub struct RecordSource {
    /// JSON-lines file of complete evaluation records.
    #[arg(long, value_name = "FILE", conflicts_with = "predictions")]
    pub records: Option<PathBuf>,
    /// JSON-lines file of `{image_id, predicted_class, box}` joined with the
    /// dataset index for ground truth.
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
    /// Number of classes; defaults to the largest class index seen plus one.
    #[arg(long, value_name = "N")]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: RecordSource,
    /// Number of most-confused class pairs to report.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct ConfusionArgs {
    #[command(flatten)]
    pub source: RecordSource,
    /// Number of most-confused class pairs to report.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

fn pipeline_predictions(ctx: &Ctx) -> Result<Vec<Prediction>> {
    let cam_dir = ctx.out("cam");
    let box_dir = ctx.out("pseudo_box");
    let mut out = Vec::new();
    for id in ids_in_dir(&cam_dir, "json")? {
        let cam: CamRecord = read_json(&cam_dir.join(format!("{id}.json")))?;
        let box_path = box_dir.join(format!("{id}.json"));
        let bbox = if box_path.is_file() {
            Some(read_json::<PseudoBoxRecord>(&box_path)?.bbox)
        } else {
            None
        };
        out.push(Prediction {
            image_id: id,
            predicted_class: cam.class_index,
            bbox,
        });
    }
    if out.is_empty() {
        bail!("no cam records under {}", cam_dir.display());
    }
    Ok(out)
}

fn load_records(ctx: &Ctx, src: &RecordSource) -> Result<(Vec<EvalRecord>, usize)> {
    let (records, index_classes) = match &src.records {
        Some(path) => (read_jsonl::<EvalRecord>(path)?, 0),
        None => {
            let predictions = match &src.predictions {
                Some(path) => read_jsonl::<Prediction>(path)?,
                None => pipeline_predictions(ctx)?,
            };
            let index = ctx.index()?;
            let mut records = Vec::with_capacity(predictions.len());
            for p in predictions {
                let entry = index.get(p.image_id).with_context(|| {
                    format!("prediction for image {} which is not in the dataset index", p.image_id)
                })?;
                records.push(entry.eval_record(p.predicted_class, p.bbox));
            }
            (records, index.num_classes())
        }
    };
    if records.is_empty() {
        bail!("no records to evaluate");
    }
    let seen = records
        .iter()
        .map(|r| r.true_class.max(r.predicted_class) + 1)
        .max()
        .unwrap_or(0)
        .max(index_classes);
    Ok((records, src.num_classes.unwrap_or(seen)))
}

fn pairs_csv(pairs: &[ConfusedPair]) -> String {
    let mut s = String::from("true_class,predicted_class,count\n");
    for p in pairs {
        let _ = writeln!(s, "{},{},{}", p.true_class, p.predicted_class, p.count);
    }
    s
}

/// Writes `eval/report.json`, `eval/confusion.csv` and, when boxes are
/// present, `eval/iou_histogram.csv`.
pub fn run_eval(ctx: &Ctx, args: &EvalArgs) -> Result<Outcome> {
    let (records, classes) = load_records(ctx, &args.source)?;
    let report = evaluate(&records, classes, ctx.cfg.iou_cut, args.top_k)?;
    let dir = ctx.out("eval");
    write_json(&dir.join("report.json"), &report)?;
    write_atomic(&dir.join("confusion.csv"), report.confusion.to_csv().as_bytes())?;
    println!("records: {}", report.records);
    println!("accuracy: {}", report.accuracy);
    if let Some(loc) = &report.localization {
        write_atomic(&dir.join("iou_histogram.csv"), loc.histogram.to_csv().as_bytes())?;
        println!("localization accuracy (IoU > {}): {}", loc.iou_cut, loc.accuracy);
    }
    if let Some(pcl) = &report.pcl {
        println!("average PCL: {}", pcl.average);
    }
    Ok(Outcome {
        processed: records.len(),
        failures: Vec::new(),
    })
}

/// Writes `confusion/confusion.csv` and `confusion/top_pairs.csv`, and
/// prints the top pairs.
pub fn run_confusion(ctx: &Ctx, args: &ConfusionArgs) -> Result<Outcome> {
    let (records, classes) = load_records(ctx, &args.source)?;
    let m = confusion(&records, classes)?;
    let pairs = m.top_confused(args.top_k);
    let dir = ctx.out("confusion");
    write_atomic(&dir.join("confusion.csv"), m.to_csv().as_bytes())?;
    let csv = pairs_csv(&pairs);
    write_atomic(&dir.join("top_pairs.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(Outcome {
        processed: records.len(),
        failures: Vec::new(),
    })
}
