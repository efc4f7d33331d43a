pub mod cam;
pub mod eval;
pub mod index;
pub mod nms;
pub mod pseudo_box;
pub mod render;
pub mod roipool;
pub mod rpn_targets;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::ThreadPool;
use sgloc::dataset::{load_index, DatasetIndex};
use sgloc::geometry::BBox;

use crate::config::PipelineConfig;
use crate::runner::build_pool;

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub pool: ThreadPool,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig, jobs: usize) -> Result<Self> {
        Ok(Self {
            cfg,
            pool: build_pool(jobs)?,
        })
    }

    pub fn out(&self, sub: &str) -> PathBuf {
        self.cfg.output_dir.join(sub)
    }

    pub fn index(&self) -> Result<DatasetIndex> {
        let root = self.cfg.dataset_root()?;
        load_index(root).with_context(|| format!("loading dataset index from {}", root.display()))
    }

    /// Path of an indexed image under `<dataset_root>/images/`.
    pub fn image_path(&self, index: &DatasetIndex, image_id: u64) -> Result<PathBuf> {
        let entry = index
            .get(image_id)
            .with_context(|| format!("image {image_id} is not in the dataset index"))?;
        Ok(self.cfg.dataset_root()?.join("images").join(&entry.path))
    }
}

/// Which images a per-image command processes.
#[derive(Debug, Clone, Args)]
pub struct Selection {
    /// Image ids to process.
    pub ids: Vec<u64>,
    /// Process every image found in the command's input directory.
    #[arg(long, conflicts_with = "ids")]
    pub all: bool,
}

impl Selection {
    /// Explicit ids (sorted, deduplicated), or with `--all` every numeric
    /// `<id>.<ext>` file stem in `dir`.
    pub fn resolve(&self, dir: &Path, ext: &str) -> Result<Vec<u64>> {
        let mut ids = if self.all {
            ids_in_dir(dir, ext)?
        } else if self.ids.is_empty() {
            bail!("no image ids given (pass ids or --all)");
        } else {
            self.ids.clone()
        };
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }
}

pub fn ids_in_dir(dir: &Path, ext: &str) -> Result<Vec<u64>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

/// `HxW`, e.g. `224x224`.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("invalid height in {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("invalid width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err(format!("size {s:?} must be positive"));
    }
    Ok((h, w))
}

/// `x1,y1,x2,y2`.
pub fn parse_box(s: &str) -> Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("invalid coordinate in {s:?}"))
        })
        .collect::<Result<_, _>>()?;
    let [x1, y1, x2, y2] = v[..] else {
        return Err(format!("expected x1,y1,x2,y2, got {s:?}"));
    };
    BBox::new(x1, y1, x2, y2).map_err(|e| e.to_string())
}

/// `x,y`.
pub fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
    let x = x.trim().parse().map_err(|_| format!("invalid x in {s:?}"))?;
    let y = y.trim().parse().map_err(|_| format!("invalid y in {s:?}"))?;
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_and_box_syntax() {
        assert_eq!(parse_size("224x160"), Ok((224, 160)));
        assert!(parse_size("0x4").is_err());
        assert!(parse_size("224").is_err());
        assert_eq!(parse_box("1,2,3,4").unwrap().to_array(), [1.0, 2.0, 3.0, 4.0]);
        assert!(parse_box("1,2,3").is_err());
        assert!(parse_box("5,2,3,4").is_err());
        assert_eq!(parse_point("1.5, 2"), Ok((1.5, 2.0)));
    }

    #[test]
    fn ids_come_from_numeric_stems() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["10.npy", "2.npy", "weights.npy", "3.json", "x7.npy"] {
            fs::write(dir.path().join(name), b"").unwrap();
        }
        assert_eq!(ids_in_dir(dir.path(), "npy").unwrap(), vec![2, 10]);
    }
}
