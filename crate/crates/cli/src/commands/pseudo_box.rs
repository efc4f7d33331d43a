use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use sgloc::saliency::{extract_pseudo_box, SaliencyMap};
use sgloc::tensor::read_tensor;

use super::{parse_size, Ctx, Selection};
use crate::output::{write_atomic, write_json};
use crate::records::{read_json, to_jsonl, CamRecord, PseudoBoxRecord};
use crate::runner::{run_items, Outcome};

#[derive(Debug, Args)]
pub struct PseudoBoxArgs {
    #[command(flatten)]
    pub select: Selection,
    /// Directory of saliency maps; defaults to `<output_dir>/cam`.
    #[arg(long, value_name = "DIR")]
    pub cam_dir: Option<PathBuf>,
    /// Image size for every map. Without it, sizes are read from the image
    /// files of the dataset.
    #[arg(long, value_name = "HxW", value_parser = parse_size)]
    pub image_size: Option<(usize, usize)>,
}

/// Writes `pseudo_box/<id>.json` per image and `pseudo_boxes.jsonl` with
/// every successful record in id order.
pub fn run(ctx: &Ctx, args: &PseudoBoxArgs) -> Result<Outcome> {
    let cam_dir = args.cam_dir.clone().unwrap_or_else(|| ctx.out("cam"));
    let ids = args.select.resolve(&cam_dir, "npy")?;
    let index = match args.image_size {
        Some(_) => None,
        None if ctx.cfg.dataset_root.is_some() => Some(ctx.index()?),
        None => bail!("pseudo-box needs --image-size or a dataset root to read image sizes from"),
    };
    let dir = ctx.out("pseudo_box");

    let (done, outcome) = run_items(&ctx.pool, &ids, |id| {
        let cam: CamRecord = read_json(&cam_dir.join(format!("{id}.json")))?;
        let values = read_tensor(cam_dir.join(format!("{id}.npy")))?.into_matrix()?;
        let map = SaliencyMap::from_matrix(&values, cam.class_index, cam.source)?;
        let (h, w) = match (args.image_size, &index) {
            (Some(size), _) => size,
            (None, Some(index)) => {
                let path = ctx.image_path(index, id)?;
                let (w, h) = image::image_dimensions(&path)
                    .with_context(|| format!("reading image size of {}", path.display()))?;
                (h as usize, w as usize)
            }
            (None, None) => unreachable!("checked before dispatch"),
        };
        let pb = extract_pseudo_box(&map, h, w, ctx.cfg.otsu_bins)?;
        let record = PseudoBoxRecord {
            image_id: id,
            class_index: pb.saliency_class,
            threshold: pb.threshold,
            bbox: pb.bbox,
            component_area: pb.component_area,
            image_height: h,
            image_width: w,
        };
        write_json(&dir.join(format!("{id}.json")), &record)?;
        Ok(record)
    });

    let records: Vec<PseudoBoxRecord> = done.into_iter().map(|(_, r)| r).collect();
    write_atomic(&ctx.out("pseudo_boxes.jsonl"), to_jsonl(&records)?.as_bytes())?;
    Ok(outcome)
}
