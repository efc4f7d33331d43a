use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use serde::Deserialize;
use sgloc::geometry::{nms, BBox, ScoredBox};

use super::Ctx;
use crate::output::write_atomic;
use crate::runner::{run_items, Outcome};

pub const PROPOSAL_HEADER: &str = "image_id,x1,y1,x2,y2,score";

#[derive(Debug, Args)]
pub struct NmsArgs {
    /// Proposal CSV with header `image_id,x1,y1,x2,y2,score`.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Keep at most this many boxes per image.
    #[arg(long, value_name = "N")]
    pub max_keep: Option<usize>,
    /// Output file; defaults to `<output_dir>/nms.csv`.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct Row {
    image_id: u64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    #[serde(default)]
    score: Option<f64>,
}

fn line_of(e: &csv::Error) -> String {
    e.position().map_or_else(String::new, |p| format!(":{}", p.line()))
}

/// Reads a box CSV into per-image lists (ids ascending, file order within
/// an image). Rows without a `score` column get score 1 when
/// `require_score` is false.
pub fn read_boxes(path: &Path, require_score: bool) -> Result<BTreeMap<u64, Vec<ScoredBox>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut out: BTreeMap<u64, Vec<ScoredBox>> = BTreeMap::new();
    let headers = reader
        .headers()
        .map_err(|e| anyhow!("{}{}: {e}", path.display(), line_of(&e)))?
        .clone();
    for result in reader.records() {
        let record = result.map_err(|e| anyhow!("{}{}: {e}", path.display(), line_of(&e)))?;
        let line = record.position().map_or(0, |p| p.line());
        let at = || format!("{}:{line}", path.display());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| anyhow!("{}: {e}", at()))?;
        let score = match (row.score, require_score) {
            (Some(s), _) => s,
            (None, false) => 1.0,
            (None, true) => return Err(anyhow!("{}: missing score", at())),
        };
        let bbox = BBox::new(row.x1, row.y1, row.x2, row.y2).with_context(at)?;
        let scored = ScoredBox::new(bbox, score).with_context(at)?;
        out.entry(row.image_id).or_default().push(scored);
    }
    Ok(out)
}

pub fn proposal_line(out: &mut String, image_id: u64, b: &ScoredBox) {
    let _ = writeln!(
        out,
        "{image_id},{},{},{},{},{}",
        b.bbox.x1, b.bbox.y1, b.bbox.x2, b.bbox.y2, b.score
    );
}

/// Suppresses per image and writes the survivors grouped by image id,
/// each group in descending score order.
pub fn run(ctx: &Ctx, args: &NmsArgs) -> Result<Outcome> {
    let groups = read_boxes(&args.input, true)?;
    let ids: Vec<u64> = groups.keys().copied().collect();
    let max_keep = args.max_keep.unwrap_or(usize::MAX);
    let (kept, outcome) = run_items(&ctx.pool, &ids, |id| Ok(nms(&groups[&id], ctx.cfg.nms_iou, max_keep)?));

    let mut csv = format!("{PROPOSAL_HEADER}\n");
    for (id, boxes) in &kept {
        for b in boxes {
            proposal_line(&mut csv, *id, b);
        }
    }
    let path = args.output.clone().unwrap_or_else(|| ctx.out("nms.csv"));
    write_atomic(&path, csv.as_bytes())?;
    Ok(outcome)
}
