use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use sgloc::geometry::BBox;

use super::{parse_box, parse_point, Ctx};
use crate::output::write_atomic;
use crate::overlay::{draw, encode_png, Overlay};
use crate::records::{read_json, PseudoBoxRecord};
use crate::runner::{run_items, Outcome};

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Dataset image ids to render into `render/<id>.png`, using the ground
    /// truth and visible parts from the index and the predicted box from
    /// `pseudo_box/<id>.json` when present.
    pub ids: Vec<u64>,
    /// Render every image in the dataset index.
    #[arg(long, conflicts_with_all = ["ids", "image"])]
    pub all: bool,
    /// Directory of pseudo-box records; defaults to `<output_dir>/pseudo_box`.
    #[arg(long, value_name = "DIR")]
    pub boxes_dir: Option<PathBuf>,
    /// Render a single image file instead of dataset ids.
    #[arg(long, value_name = "FILE", conflicts_with = "ids")]
    pub image: Option<PathBuf>,
    /// Output PNG for `--image`; defaults to `<output_dir>/render/<stem>.png`.
    #[arg(long, value_name = "FILE", requires = "image")]
    pub out: Option<PathBuf>,
    /// Predicted box `x1,y1,x2,y2`, drawn in yellow.
    #[arg(long = "box", value_name = "X1,Y1,X2,Y2", value_parser = parse_box, allow_hyphen_values = true, requires = "image")]
    pub predicted: Option<BBox>,
    /// Ground-truth box, drawn in red.
    #[arg(long, value_name = "X1,Y1,X2,Y2", value_parser = parse_box, allow_hyphen_values = true, requires = "image")]
    pub gt: Option<BBox>,
    /// Part location `x,y`; may be repeated.
    #[arg(long = "part", value_name = "X,Y", value_parser = parse_point, allow_hyphen_values = true, requires = "image")]
    pub parts: Vec<(f64, f64)>,
}

fn render_file(path: &std::path::Path, overlay: &Overlay) -> Result<Vec<u8>> {
    let mut img = image::open(path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_rgb8();
    draw(&mut img, overlay);
    encode_png(&img)
}

pub fn run(ctx: &Ctx, args: &RenderArgs) -> Result<Outcome> {
    if let Some(path) = &args.image {
        let overlay = Overlay {
            predicted: args.predicted,
            ground_truth: args.gt,
            parts: args.parts.clone(),
        };
        let png = render_file(path, &overlay)?;
        let out = match &args.out {
            Some(p) => p.clone(),
            None => {
                let stem = path.file_stem().context("image path has no file name")?;
                ctx.out("render").join(stem).with_extension("png")
            }
        };
        write_atomic(&out, &png)?;
        return Ok(Outcome {
            processed: 1,
            failures: Vec::new(),
        });
    }

    let index = ctx.index()?;
    let ids: Vec<u64> = if args.all {
        index.iter().map(|e| e.image_id).collect()
    } else if args.ids.is_empty() {
        bail!("no image ids given (pass ids, --all, or --image)");
    } else {
        let mut ids = args.ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let boxes_dir = args.boxes_dir.clone().unwrap_or_else(|| ctx.out("pseudo_box"));
    let dir = ctx.out("render");

    let (_, outcome) = run_items(&ctx.pool, &ids, |id| {
        let entry = index
            .get(id)
            .with_context(|| format!("image {id} is not in the dataset index"))?;
        let box_path = boxes_dir.join(format!("{id}.json"));
        let predicted = if box_path.is_file() {
            Some(read_json::<PseudoBoxRecord>(&box_path)?.bbox)
        } else {
            None
        };
        let overlay = Overlay {
            predicted,
            ground_truth: Some(entry.gt_box),
            parts: entry.parts.iter().filter(|p| p.visible).map(|p| (p.x, p.y)).collect(),
        };
        let png = render_file(&ctx.image_path(&index, id)?, &overlay)?;
        write_atomic(&dir.join(format!("{id}.png")), &png)
    });
    Ok(outcome)
}
