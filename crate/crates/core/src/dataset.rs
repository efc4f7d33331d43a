//! CUB-200-2011 annotation parsing and feature directory loading.
//!
//! Expected layout under the dataset root:
//!
//! ```text
//! images.txt               <image_id> <relative_path>
//! image_class_labels.txt   <image_id> <class_id, 1-based>
//! bounding_boxes.txt       <image_id> <x> <y> <width> <height>
//! train_test_split.txt     <image_id> <is_training_image>
//! parts/part_locs.txt      <image_id> <part_id> <x> <y> <visible>
//! ```
//!
//! Every file must list the same image ids, and every image must have
//! exactly [`CUB_PARTS`] part rows.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metrics::{EvalRecord, PartLocation};
use crate::tensor::{read_tensor, Matrix2, Tensor3};

pub const CUB_PARTS: usize = 15;
pub const WEIGHTS_FILE: &str = "weights.npy";

const IMAGES: &str = "images.txt";
const LABELS: &str = "image_class_labels.txt";
const BOXES: &str = "bounding_boxes.txt";
const SPLIT: &str = "train_test_split.txt";
const PARTS: &str = "parts/part_locs.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: u64,
    pub path: String,
    /// Zero-based class index (file value minus one).
    pub class_index: usize,
    pub is_train: bool,
    pub gt_box: BBox,
    pub parts: Vec<PartLocation>,
}

impl ImageEntry {
    pub fn eval_record(&self, predicted_class: usize, predicted_box: Option<BBox>) -> EvalRecord {
        EvalRecord {
            image_id: self.image_id,
            true_class: self.class_index,
            predicted_class,
            predicted_box,
            gt_box: Some(self.gt_box),
            parts: self.parts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    entries: BTreeMap<u64, ImageEntry>,
}

impl DatasetIndex {
    pub fn from_entries(entries: impl IntoIterator<Item = ImageEntry>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in entries {
            let id = e.image_id;
            if map.insert(id, e).is_some() {
                return Err(Error::InconsistentIndex(format!("duplicate image id {id}")));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: u64) -> Option<&ImageEntry> {
        self.entries.get(&image_id)
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &ImageEntry> {
        self.entries.values()
    }

    pub fn train_count(&self) -> usize {
        self.iter().filter(|e| e.is_train).count()
    }

    pub fn test_count(&self) -> usize {
        self.len() - self.train_count()
    }

    pub fn num_classes(&self) -> usize {
        self.iter().map(|e| e.class_index + 1).max().unwrap_or(0)
    }

    /// One JSON object per line, ascending id.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.iter() {
            out.push_str(&serde_json::to_string(e).expect("index entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                file: "index.jsonl".into(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Self::from_entries(entries)
    }
}

/// `(x, y, w, h)` to the inclusive box `(x, y, x + w - 1, y + h - 1)`.
pub fn xywh_to_box(x: f64, y: f64, w: f64, h: f64) -> Result<BBox> {
    BBox::new(x, y, x + w - 1.0, y + h - 1.0)
}

pub fn box_to_xywh(b: &BBox) -> [f64; 4] {
    [b.x1, b.y1, b.width(), b.height()]
}

struct Table<'a> {
    name: &'static str,
    rows: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Table<'a> {
    fn parse(name: &'static str, text: &'a str, columns: usize) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != columns {
                return Err(Error::Parse {
                    file: name.into(),
                    line: i + 1,
                    message: format!("expected {columns} columns, found {}", fields.len()),
                });
            }
            rows.push((i + 1, fields));
        }
        Ok(Self { name, rows })
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.name.into(),
            line,
            message: message.into(),
        }
    }

    fn field<T: FromStr>(&self, line: usize, value: &str, what: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| self.err(line, format!("invalid {what} {value:?}")))
    }

    fn real(&self, line: usize, value: &str, what: &str) -> Result<f64> {
        let v: f64 = self.field(line, value, what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(line, format!("non-finite {what} {value:?}")))
        }
    }

    fn flag(&self, line: usize, value: &str, what: &str) -> Result<bool> {
        match value {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(self.err(line, format!("{what} must be 0 or 1, found {value:?}"))),
        }
    }

    /// Maps each id in the first column to a parsed value, rejecting repeats.
    fn keyed<T>(&self, mut f: impl FnMut(usize, &[&'a str]) -> Result<T>) -> Result<BTreeMap<u64, T>> {
        let mut out = BTreeMap::new();
        for (line, fields) in &self.rows {
            let id: u64 = self.field(*line, fields[0], "image id")?;
            let value = f(*line, &fields[1..])?;
            if out.insert(id, value).is_some() {
                return Err(Error::InconsistentIndex(format!(
                    "{}:{line}: image id {id} listed twice",
                    self.name
                )));
            }
        }
        Ok(out)
    }
}

fn read_annotation(root: &Path, name: &str) -> Result<String> {
    let path = root.join(name);
    if !path.is_file() {
        return Err(Error::MissingAnnotation(path));
    }
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn check_same_ids<A, B>(base: &BTreeMap<u64, A>, other: &BTreeMap<u64, B>, name: &str) -> Result<()> {
    if let Some(id) = base.keys().find(|id| !other.contains_key(id)) {
        return Err(Error::InconsistentIndex(format!(
            "image id {id} from {IMAGES} is missing in {name}"
        )));
    }
    if let Some(id) = other.keys().find(|id| !base.contains_key(id)) {
        return Err(Error::InconsistentIndex(format!(
            "image id {id} in {name} is not listed in {IMAGES}"
        )));
    }
    Ok(())
}

/// Parses and joins the CUB annotation files under `root`.
pub fn load_index(root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let texts = [IMAGES, LABELS, BOXES, SPLIT, PARTS].map(|name| read_annotation(root, name));
    let [images, labels, boxes, split, parts] = texts;
    let (images, labels, boxes, split, parts) = (images?, labels?, boxes?, split?, parts?);

    let t = Table::parse(IMAGES, &images, 2)?;
    let paths = t.keyed(|_, f| Ok(f[0].to_string()))?;

    let t = Table::parse(LABELS, &labels, 2)?;
    let classes = t.keyed(|line, f| {
        let c: usize = t.field(line, f[0], "class id")?;
        if c == 0 {
            return Err(t.err(line, "class ids are 1-based"));
        }
        Ok(c - 1)
    })?;

    let t = Table::parse(BOXES, &boxes, 5)?;
    let gt = t.keyed(|line, f| {
        let v = [
            t.real(line, f[0], "x")?,
            t.real(line, f[1], "y")?,
            t.real(line, f[2], "width")?,
            t.real(line, f[3], "height")?,
        ];
        if v[2] < 1.0 || v[3] < 1.0 {
            return Err(t.err(line, format!("box size {}x{} is below one pixel", v[2], v[3])));
        }
        xywh_to_box(v[0], v[1], v[2], v[3]).map_err(|e| t.err(line, e.to_string()))
    })?;

    let t = Table::parse(SPLIT, &split, 2)?;
    let train = t.keyed(|line, f| t.flag(line, f[0], "is_training_image"))?;

    check_same_ids(&paths, &classes, LABELS)?;
    check_same_ids(&paths, &gt, BOXES)?;
    check_same_ids(&paths, &train, SPLIT)?;

    let t = Table::parse(PARTS, &parts, 5)?;
    let mut part_rows: BTreeMap<u64, Vec<PartLocation>> = BTreeMap::new();
    for (line, f) in &t.rows {
        let line = *line;
        let id: u64 = t.field(line, f[0], "image id")?;
        let part_id: u32 = t.field(line, f[1], "part id")?;
        if part_id == 0 || part_id as usize > CUB_PARTS {
            return Err(t.err(line, format!("part id {part_id} outside 1..={CUB_PARTS}")));
        }
        if !paths.contains_key(&id) {
            return Err(Error::InconsistentIndex(format!(
                "{PARTS}:{line}: image id {id} is not listed in {IMAGES}"
            )));
        }
        let loc = PartLocation {
            part_id,
            x: t.real(line, f[2], "x")?,
            y: t.real(line, f[3], "y")?,
            visible: t.flag(line, f[4], "visible")?,
        };
        let rows = part_rows.entry(id).or_default();
        if rows.iter().any(|p| p.part_id == part_id) {
            return Err(Error::InconsistentIndex(format!(
                "{PARTS}:{line}: part {part_id} of image {id} listed twice"
            )));
        }
        rows.push(loc);
    }

    let mut entries = Vec::with_capacity(paths.len());
    for (id, path) in paths {
        let mut parts = part_rows.remove(&id).unwrap_or_default();
        if parts.len() != CUB_PARTS {
            return Err(Error::InconsistentIndex(format!(
                "image {id} has {} part rows, expected {CUB_PARTS}",
                parts.len()
            )));
        }
        parts.sort_by_key(|p| p.part_id);
        entries.push(ImageEntry {
            image_id: id,
            path,
            class_index: classes[&id],
            is_train: train[&id],
            gt_box: gt[&id],
            parts,
        });
    }
    DatasetIndex::from_entries(entries)
}

/// Shared classifier weights, `<dir>/weights.npy`.
pub fn load_weights(dir: impl AsRef<Path>) -> Result<Matrix2> {
    read_tensor(dir.as_ref().join(WEIGHTS_FILE))?.into_matrix()
}

/// Feature volume `<dir>/<image_id>.npy`.
pub fn load_feature(dir: impl AsRef<Path>, image_id: u64) -> Result<Tensor3> {
    read_tensor(dir.as_ref().join(format!("{image_id}.npy")))?.into_volume()
}

/// Loads one image's features with the shared weights and checks that the
/// weight columns match the feature channels.
pub fn load_features(dir: impl AsRef<Path>, image_id: u64) -> Result<(Tensor3, Matrix2)> {
    let dir = dir.as_ref();
    let weights = load_weights(dir)?;
    let features = load_feature(dir, image_id)?;
    if weights.cols() != features.channels() {
        return Err(Error::Shape(format!(
            "image {image_id}: {} feature channels but weights have {} columns",
            features.channels(),
            weights.cols()
        )));
    }
    Ok((features, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xywh_round_trip() {
        let b = xywh_to_box(60.0, 27.0, 325.0, 304.0).unwrap();
        assert_eq!(b.to_array(), [60.0, 27.0, 384.0, 330.0]);
        assert_eq!(box_to_xywh(&b), [60.0, 27.0, 325.0, 304.0]);
    }

    #[test]
    fn table_rejects_wrong_column_count() {
        let err = Table::parse("x.txt", "1 a\n\n2 b c\n", 2).err().unwrap();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
