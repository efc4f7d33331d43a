//! The committed three-image CUB fixture and its hand-written index.

use std::fs;
use std::path::{Path, PathBuf};

use sgloc::dataset::{DatasetIndex, ImageEntry};
use sgloc::geometry::BBox;
use sgloc::metrics::PartLocation;

pub fn cub_mini_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/cub_mini")
}

type PartRow = (u32, f64, f64, bool);

const PARTS_1: [PartRow; 15] = [
    (1, 11.5, 22.0, true),
    (2, 12.0, 24.0, true),
    (3, 13.5, 26.0, true),
    (4, 0.0, 0.0, false),
    (5, 15.5, 30.0, true),
    (6, 16.0, 32.0, true),
    (7, 17.5, 34.0, true),
    (8, 0.0, 0.0, false),
    (9, 19.5, 38.0, true),
    (10, 20.0, 40.0, true),
    (11, 21.5, 42.0, true),
    (12, 0.0, 0.0, false),
    (13, 23.5, 46.0, true),
    (14, 24.0, 48.0, true),
    (15, 25.5, 50.0, true),
];
const PARTS_2: [PartRow; 15] = [
    (1, 21.5, 42.0, true),
    (2, 0.0, 0.0, false),
    (3, 23.5, 46.0, true),
    (4, 0.0, 0.0, false),
    (5, 25.5, 50.0, true),
    (6, 0.0, 0.0, false),
    (7, 27.5, 54.0, true),
    (8, 0.0, 0.0, false),
    (9, 29.5, 58.0, true),
    (10, 0.0, 0.0, false),
    (11, 31.5, 62.0, true),
    (12, 0.0, 0.0, false),
    (13, 33.5, 66.0, true),
    (14, 0.0, 0.0, false),
    (15, 35.5, 70.0, true),
];
const PARTS_3: [PartRow; 15] = [
    (1, 31.5, 62.0, true),
    (2, 32.0, 64.0, true),
    (3, 33.5, 66.0, true),
    (4, 0.0, 0.0, false),
    (5, 35.5, 70.0, true),
    (6, 36.0, 72.0, true),
    (7, 37.5, 74.0, true),
    (8, 0.0, 0.0, false),
    (9, 39.5, 78.0, true),
    (10, 40.0, 80.0, true),
    (11, 41.5, 82.0, true),
    (12, 0.0, 0.0, false),
    (13, 43.5, 86.0, true),
    (14, 44.0, 88.0, true),
    (15, 45.5, 90.0, true),
];

fn entry(id: u64, path: &str, class: usize, train: bool, corners: [f64; 4], parts: &[PartRow]) -> ImageEntry {
    ImageEntry {
        image_id: id,
        path: path.to_string(),
        class_index: class,
        is_train: train,
        gt_box: BBox {
            x1: corners[0],
            y1: corners[1],
            x2: corners[2],
            y2: corners[3],
        },
        parts: parts
            .iter()
            .map(|&(part_id, x, y, visible)| PartLocation { part_id, x, y, visible })
            .collect(),
    }
}

/// The index `cub_mini` must parse to, written out by hand.
pub fn cub_mini_expected() -> Vec<ImageEntry> {
    vec![
        entry(
            1,
            "001.Black_footed_Albatross/Black_Footed_Albatross_0046_18.jpg",
            0,
            false,
            [27.0, 41.0, 479.0, 276.0],
            &PARTS_1,
        ),
        entry(
            2,
            "001.Black_footed_Albatross/Black_Footed_Albatross_0009_34.jpg",
            0,
            true,
            [60.5, 27.0, 384.5, 330.0],
            &PARTS_2,
        ),
        entry(
            3,
            "003.Sooty_Albatross/Sooty_Albatross_0031_1066.jpg",
            2,
            false,
            [0.0, 0.0, 0.0, 0.0],
            &PARTS_3,
        ),
    ]
}

pub fn cub_mini_index() -> DatasetIndex {
    DatasetIndex::from_entries(cub_mini_expected()).expect("hand-written index is consistent")
}

/// Copies `cub_mini` into `dst` and replaces 1-based `line` of `file` with
/// `replacement`.
pub fn corrupt_copy(dst: &Path, file: &str, line: usize, replacement: &str) -> PathBuf {
    let src = cub_mini_dir();
    for name in [
        "images.txt",
        "image_class_labels.txt",
        "bounding_boxes.txt",
        "train_test_split.txt",
        "parts/part_locs.txt",
    ] {
        let target = dst.join(name);
        fs::create_dir_all(target.parent().expect("has parent")).expect("create fixture dir");
        let text = fs::read_to_string(src.join(name)).expect("read fixture");
        let text = if name == file {
            let mut lines: Vec<&str> = text.lines().collect();
            lines[line - 1] = replacement;
            lines.join("\n") + "\n"
        } else {
            text
        };
        fs::write(target, text).expect("write fixture");
    }
    dst.to_path_buf()
}
