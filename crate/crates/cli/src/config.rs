//! Pipeline configuration: defaults, a flat `key = value` file, then
//! command-line overrides, applied in that order.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use sgloc::geometry::AnchorConfig;
use sgloc::metrics::DEFAULT_IOU_CUT;
use sgloc::rpn::{DEFAULT_BATCH_SIZE, DEFAULT_LAMBDA, DEFAULT_NEG_IOU, DEFAULT_POS_FRACTION, DEFAULT_POS_IOU};
use sgloc::saliency::DEFAULT_OTSU_BINS;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dataset_root: Option<PathBuf>,
    pub feature_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub stride: f64,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub nms_iou: f64,
    pub iou_cut: f64,
    pub otsu_bins: usize,
    pub lambda: f64,
    /// `None` means the number of labeled (non-ignored) anchors.
    pub n_cls: Option<usize>,
    /// `None` means the number of anchor locations (feature cells).
    pub n_reg: Option<usize>,
    pub batch_size: usize,
    pub pos_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let anchors = AnchorConfig::default();
        Self {
            dataset_root: None,
            feature_dir: None,
            output_dir: PathBuf::from("out"),
            stride: anchors.stride,
            scales: anchors.scales,
            ratios: anchors.ratios,
            pos_iou: DEFAULT_POS_IOU,
            neg_iou: DEFAULT_NEG_IOU,
            nms_iou: 0.7,
            iou_cut: DEFAULT_IOU_CUT,
            otsu_bins: DEFAULT_OTSU_BINS,
            lambda: DEFAULT_LAMBDA,
            n_cls: None,
            n_reg: None,
            batch_size: DEFAULT_BATCH_SIZE,
            pos_fraction: DEFAULT_POS_FRACTION,
            seed: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset_root",
    "feature_dir",
    "output_dir",
    "stride",
    "scales",
    "ratios",
    "pos_iou",
    "neg_iou",
    "nms_iou",
    "iou_cut",
    "otsu_bins",
    "lambda",
    "n_cls",
    "n_reg",
    "batch_size",
    "pos_fraction",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    value
        .parse()
        .with_context(|| format!("invalid value {value:?} for {key}"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_count(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        Ok(Some(parse(key, value)?))
    }
}

impl PipelineConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "dataset_root" => self.dataset_root = Some(PathBuf::from(value)),
            "feature_dir" => self.feature_dir = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "stride" => self.stride = parse(key, value)?,
            "scales" => self.scales = parse_list(key, value)?,
            "ratios" => self.ratios = parse_list(key, value)?,
            "pos_iou" => self.pos_iou = parse(key, value)?,
            "neg_iou" => self.neg_iou = parse(key, value)?,
            "nms_iou" => self.nms_iou = parse(key, value)?,
            "iou_cut" => self.iou_cut = parse(key, value)?,
            "otsu_bins" => self.otsu_bins = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "n_cls" => self.n_cls = parse_count(key, value)?,
            "n_reg" => self.n_reg = parse_count(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "pos_fraction" => self.pos_fraction = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => bail!("unknown configuration key {other:?} (known keys: {})", KEYS.join(", ")),
        }
        Ok(())
    }

    /// Applies every assignment in a config file. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", origin.display(), i + 1))?;
            self.set(key, value)
                .with_context(|| format!("{}:{}", origin.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pos_iou", self.pos_iou),
            ("neg_iou", self.neg_iou),
            ("nms_iou", self.nms_iou),
            ("iou_cut", self.iou_cut),
            ("pos_fraction", self.pos_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                bail!("{name} must lie in [0, 1], got {v}");
            }
        }
        if self.pos_iou <= self.neg_iou {
            bail!("pos_iou ({}) must exceed neg_iou ({})", self.pos_iou, self.neg_iou);
        }
        if self.otsu_bins < 2 {
            bail!("otsu_bins must be at least 2");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            bail!("lambda must be a non-negative number");
        }
        if self.n_cls == Some(0) || self.n_reg == Some(0) {
            bail!("n_cls and n_reg must be positive");
        }
        self.anchor_config().base_anchors()?;
        Ok(())
    }

    pub fn anchor_config(&self) -> AnchorConfig {
        AnchorConfig {
            stride: self.stride,
            scales: self.scales.clone(),
            ratios: self.ratios.clone(),
        }
    }

    pub fn feature_dir(&self) -> Result<&Path> {
        self.feature_dir
            .as_deref()
            .context("no feature directory configured (set feature_dir or pass --feature-dir)")
    }

    pub fn dataset_root(&self) -> Result<&Path> {
        self.dataset_root
            .as_deref()
            .context("no dataset root configured (set dataset_root or pass --dataset-root)")
    }
}
