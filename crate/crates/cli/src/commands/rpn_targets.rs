use std::path::PathBuf;

use anyhow::{bail, ensure, Result};
use clap::Args;
use sgloc::dataset::load_feature;
use sgloc::geometry::generate_anchors;
use sgloc::rpn::{label_anchors, rpn_loss, sample_anchors, RpnPrediction};
use sgloc::tensor::read_tensor;

use super::{parse_size, Ctx, Selection};
use crate::output::{write_atomic, write_json};
use crate::records::{read_json, PseudoBoxRecord};
use crate::runner::{run_items, Outcome};

#[derive(Debug, Args)]
pub struct RpnTargetsArgs {
    #[command(flatten)]
    pub select: Selection,
    /// Directory of pseudo-box records; defaults to `<output_dir>/pseudo_box`.
    #[arg(long, value_name = "DIR")]
    pub boxes_dir: Option<PathBuf>,
    /// Feature map size the anchors tile. Defaults to the feature tensor's
    /// size when a feature directory is configured, else the image size
    /// divided by the stride, rounded up.
    #[arg(long, value_name = "HxW", value_parser = parse_size)]
    pub feature_size: Option<(usize, usize)>,
    /// Keep a seeded, class-balanced mini-batch of `batch_size` anchors and
    /// mark the rest ignored.
    #[arg(long)]
    pub sample: bool,
    /// Directory of `<id>.npy` predictions, one row `p, tx, ty, tw, th` per
    /// anchor; writes `rpn_targets/<id>_loss.json`.
    #[arg(long, value_name = "DIR")]
    pub predictions: Option<PathBuf>,
}

/// Writes `rpn_targets/<id>.csv` (`anchor_idx,label,tx,ty,tw,th`).
pub fn run(ctx: &Ctx, args: &RpnTargetsArgs) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let boxes_dir = args.boxes_dir.clone().unwrap_or_else(|| ctx.out("pseudo_box"));
    let ids = args.select.resolve(&boxes_dir, "json")?;
    let anchor_cfg = cfg.anchor_config();
    let dir = ctx.out("rpn_targets");

    let (_, outcome) = run_items(&ctx.pool, &ids, |id| {
        let pb: PseudoBoxRecord = read_json(&boxes_dir.join(format!("{id}.json")))?;
        let (ih, iw) = (pb.image_height, pb.image_width);
        let (fh, fw) = match (args.feature_size, &cfg.feature_dir) {
            (Some(size), _) => size,
            (None, Some(features)) => {
                let [_, h, w] = load_feature(features, id)?.shape();
                (h, w)
            }
            (None, None) => (
                (ih as f64 / cfg.stride).ceil() as usize,
                (iw as f64 / cfg.stride).ceil() as usize,
            ),
        };
        let grid = generate_anchors(fh, fw, &anchor_cfg)?;
        let mut targets = label_anchors(&grid, &[pb.bbox], ih, iw, cfg.pos_iou, cfg.neg_iou)?;
        if args.sample {
            targets = sample_anchors(&targets, cfg.batch_size, cfg.pos_fraction, cfg.seed.wrapping_add(id))?;
        }
        write_atomic(&dir.join(format!("{id}.csv")), targets.to_csv().as_bytes())?;

        if let Some(pred_dir) = &args.predictions {
            let m = read_tensor(pred_dir.join(format!("{id}.npy")))?.into_matrix()?;
            ensure!(
                m.rows() == targets.len() && m.cols() == 5,
                "predictions are {}x{}, expected {}x5",
                m.rows(),
                m.cols(),
                targets.len()
            );
            let probs = (0..m.rows()).map(|r| m.get(r, 0) as f64).collect();
            let deltas = (0..m.rows())
                .map(|r| [1, 2, 3, 4].map(|c| m.get(r, c) as f64))
                .collect();
            let pred = RpnPrediction::new(probs, deltas)?;
            let labeled = targets.positives() + targets.negatives();
            let n_cls = cfg.n_cls.unwrap_or(labeled);
            if n_cls == 0 {
                bail!("no labeled anchors to normalize the classification term");
            }
            let n_reg = cfg.n_reg.unwrap_or(fh * fw);
            let loss = rpn_loss(&pred, &targets, cfg.lambda, n_cls, n_reg)?;
            write_json(&dir.join(format!("{id}_loss.json")), &loss)?;
        }
        Ok(())
    });
    Ok(outcome)
}
