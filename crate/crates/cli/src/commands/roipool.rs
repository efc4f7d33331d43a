use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use sgloc::dataset::load_feature;
use sgloc::geometry::roi_pool;

use super::nms::read_boxes;
use super::{parse_size, Ctx};
use crate::output::write_npy;
use crate::runner::{run_items, Outcome};

#[derive(Debug, Args)]
pub struct RoipoolArgs {
    /// Region CSV with header `image_id,x1,y1,x2,y2` (a `score` column is
    /// allowed, so `nms` output can be fed directly).
    #[arg(long, value_name = "FILE")]
    pub rois: PathBuf,
    /// Pooled output size.
    #[arg(long, value_name = "HxW", value_parser = parse_size, default_value = "7x7")]
    pub out_size: (usize, usize),
}

/// Writes `roipool/<id>_<k>.npy` (C x H x W) for the k-th region of each
/// image, counting from 0 in file order.
pub fn run(ctx: &Ctx, args: &RoipoolArgs) -> Result<Outcome> {
    let features = ctx.cfg.feature_dir()?;
    let groups = read_boxes(&args.rois, false)?;
    let ids: Vec<u64> = groups.keys().copied().collect();
    let (oh, ow) = args.out_size;
    let dir = ctx.out("roipool");

    let (_, outcome) = run_items(&ctx.pool, &ids, |id| {
        let f = load_feature(features, id)?;
        for (k, roi) in groups[&id].iter().enumerate() {
            let pooled = roi_pool(&f, &roi.bbox, ctx.cfg.stride, oh, ow).with_context(|| format!("region {k}"))?;
            write_npy(&dir.join(format!("{id}_{k}.npy")), &pooled.shape(), pooled.data())?;
        }
        Ok(())
    });
    Ok(outcome)
}
