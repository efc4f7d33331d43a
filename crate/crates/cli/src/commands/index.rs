use anyhow::Result;
use clap::Args;

use super::Ctx;
use crate::output::write_atomic;
use crate::runner::Outcome;

#[derive(Debug, Args)]
pub struct IndexArgs {}

/// Writes `index.jsonl`, one image per line in id order.
pub fn run(ctx: &Ctx, _args: &IndexArgs) -> Result<Outcome> {
    let index = ctx.index()?;
    write_atomic(&ctx.out("index.jsonl"), index.to_jsonl().as_bytes())?;
    println!(
        "{} images ({} train, {} test), {} classes",
        index.len(),
        index.train_count(),
        index.test_count(),
        index.num_classes()
    );
    Ok(Outcome {
        processed: index.len(),
        failures: Vec::new(),
    })
}
