//! Per-image JSON records exchanged between subcommands.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sgloc::geometry::BBox;
use sgloc::saliency::CamSource;

/// Written by `cam` next to each saliency tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamRecord {
    pub image_id: u64,
    pub class_index: usize,
    pub source: CamSource,
    pub height: usize,
    pub width: usize,
}

/// Written by `pseudo-box`, read by `rpn-targets`, `eval` and `render`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoBoxRecord {
    pub image_id: u64,
    pub class_index: usize,
    pub threshold: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub component_area: usize,
    pub image_height: usize,
    pub image_width: usize,
}

/// One line of a predictions file for `eval` and `confusion`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: u64,
    pub predicted_class: usize,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Parses a JSON-lines file; blank lines are skipped and errors carry the
/// line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item)?);
        s.push('\n');
    }
    Ok(s)
}
