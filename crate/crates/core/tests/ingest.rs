use std::path::PathBuf;

use sgloc::dataset::{load_feature, load_features, load_index, DatasetIndex, CUB_PARTS, WEIGHTS_FILE};
use sgloc::tensor::{write_tensor, Matrix2, Tensor3};
use sgloc::Error;
use sgloc_oracles::fixtures::{corrupt_copy, cub_mini_dir, cub_mini_expected, cub_mini_index};
use sgloc_oracles::gen;

#[test]
fn mini_fixture_parses_to_hand_written_index() {
    let index = load_index(cub_mini_dir()).unwrap();
    let got: Vec<_> = index.iter().cloned().collect();
    assert_eq!(got, cub_mini_expected());
    assert_eq!(index.train_count(), 1);
    assert_eq!(index.test_count(), 2);
    assert_eq!(index.num_classes(), 3);
}

#[test]
fn index_survives_jsonl_cache() {
    let index = cub_mini_index();
    let text = index.to_jsonl();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(DatasetIndex::from_jsonl(&text).unwrap(), index);
}

fn parse_error_line(root: PathBuf) -> (String, usize) {
    match load_index(root) {
        Err(Error::Parse { file, line, .. }) => (file, line),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn corrupt_lines_report_their_line_numbers() {
    let cases: [(&str, usize, &str); 6] = [
        ("bounding_boxes.txt", 2, "2 60.5 abc 325.0 304.0"),
        ("bounding_boxes.txt", 3, "3 0.0 0.0 1.0"),
        ("image_class_labels.txt", 1, "1 x"),
        ("train_test_split.txt", 3, "3 2"),
        ("parts/part_locs.txt", 17, "2 2 0.0 zero 0"),
        ("parts/part_locs.txt", 45, "3 15 45.5 90.0 yes"),
    ];
    for (file, line, text) in cases {
        let dir = tempfile::tempdir().unwrap();
        let root = corrupt_copy(dir.path(), file, line, text);
        assert_eq!(parse_error_line(root), (file.to_string(), line), "{file}:{line}");
    }
}

#[test]
fn missing_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let root = corrupt_copy(dir.path(), "images.txt", 1, "1 a.jpg");
    std::fs::remove_file(root.join("train_test_split.txt")).unwrap();
    assert!(matches!(load_index(&root), Err(Error::MissingAnnotation(p)) if p.ends_with("train_test_split.txt")));
}

#[test]
fn ids_missing_from_one_file_are_inconsistent() {
    let dir = tempfile::tempdir().unwrap();
    let root = corrupt_copy(dir.path(), "image_class_labels.txt", 3, "4 3");
    assert!(matches!(load_index(root), Err(Error::InconsistentIndex(_))));

    let dir = tempfile::tempdir().unwrap();
    let root = corrupt_copy(dir.path(), "parts/part_locs.txt", 1, "1 2 11.5 22.0 1");
    assert!(matches!(load_index(root), Err(Error::InconsistentIndex(_))));
}

#[test]
fn real_cub_counts_when_available() {
    let Some(root) = std::env::var_os("CUB_ROOT") else {
        eprintln!("CUB_ROOT not set; skipping");
        return;
    };
    let index = load_index(root).unwrap();
    assert_eq!(index.len(), 11788);
    assert_eq!(index.train_count(), 5994);
    assert_eq!(index.test_count(), 5794);
    assert_eq!(index.num_classes(), 200);
    assert!(index.iter().all(|e| e.parts.len() == CUB_PARTS));
}

#[test]
fn exporter_shaped_features_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = gen::rng(3);
    let f = gen::volume(&mut rng, 1024, 14, 14, 4.0);
    let w = gen::weights(&mut rng, 200, 1024);
    write_tensor(&f, dir.path().join("42.npy")).unwrap();
    write_tensor(&w, dir.path().join(WEIGHTS_FILE)).unwrap();
    let (f2, w2) = load_features(dir.path(), 42).unwrap();
    assert_eq!(f2.shape(), [1024, 14, 14]);
    assert_eq!((w2.rows(), w2.cols()), (200, 1024));
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(f2.data()), bits(f.data()));
    assert_eq!(bits(w2.data()), bits(w.data()));
}

#[test]
fn channel_mismatch_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    write_tensor(&Tensor3::zeros(512, 14, 14).unwrap(), dir.path().join("7.npy")).unwrap();
    write_tensor(
        &Matrix2::new(2, 1024, vec![0.0; 2048]).unwrap(),
        dir.path().join(WEIGHTS_FILE),
    )
    .unwrap();
    assert!(matches!(load_features(dir.path(), 7), Err(Error::Shape(_))));
}

#[test]
fn missing_feature_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_feature(dir.path(), 9), Err(Error::Io { .. })));
}
