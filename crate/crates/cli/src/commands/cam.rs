use anyhow::{Context, Result};
use clap::Args;
use sgloc::dataset::{load_feature, load_weights};
use sgloc::saliency::{compute_cam, predicted_cam};

use super::{Ctx, Selection};
use crate::output::{write_json, write_npy};
use crate::records::CamRecord;
use crate::runner::{run_items, Outcome};

#[derive(Debug, Args)]
pub struct CamArgs {
    #[command(flatten)]
    pub select: Selection,
    /// Weight the map with this class instead of the predicted one.
    #[arg(long = "class", value_name = "INDEX")]
    pub class_index: Option<usize>,
}

/// Writes `cam/<id>.npy` (H x W) and `cam/<id>.json` per image.
pub fn run(ctx: &Ctx, args: &CamArgs) -> Result<Outcome> {
    let features = ctx.cfg.feature_dir()?;
    let ids = args.select.resolve(features, "npy")?;
    let weights = load_weights(features).with_context(|| format!("loading weights from {}", features.display()))?;
    let dir = ctx.out("cam");

    let (_, outcome) = run_items(&ctx.pool, &ids, |id| {
        let f = load_feature(features, id)?;
        let map = match args.class_index {
            Some(c) => compute_cam(&f, &weights, c)?,
            None => predicted_cam(&f, &weights)?,
        };
        write_npy(
            &dir.join(format!("{id}.npy")),
            &[map.height(), map.width()],
            map.values(),
        )?;
        write_json(
            &dir.join(format!("{id}.json")),
            &CamRecord {
                image_id: id,
                class_index: map.class_index,
                source: map.source,
                height: map.height(),
                width: map.width(),
            },
        )
    });
    Ok(outcome)
}
