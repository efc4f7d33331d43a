//! Synthetic dataset, feature directory and helpers shared by the CLI tests
//! and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use rand::Rng;
use sgloc::dataset::WEIGHTS_FILE;
use sgloc::tensor::{write_tensor, Tensor3};
use sgloc_oracles::gen;

pub const CLASSES: usize = 5;
pub const CHANNELS: usize = 8;

pub fn sgloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgloc"))
        .args(args)
        .output()
        .expect("run sgloc")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Image of a fixed diagonal colour ramp.
pub fn ramp_image(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        Rgb([(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) * 3 % 256) as u8])
    })
}

pub struct Fixture {
    pub root: tempfile::TempDir,
    pub dataset: PathBuf,
    pub features: PathBuf,
    pub predictions: PathBuf,
    pub proposals: PathBuf,
    pub sizes: BTreeMap<u64, (usize, usize)>,
}

/// `n` images with CUB-style annotations, PNG files, one feature volume per
/// image with a bright blob, shared weights, RPN predictions and a
/// proposal CSV.
pub fn pipeline_fixture(n: u64, seed: u64) -> Fixture {
    let root = tempfile::tempdir().expect("tempdir");
    let dataset = root.path().join("cub");
    let features = root.path().join("features");
    let predictions = root.path().join("rpn_pred");
    for d in [
        &dataset,
        &features,
        &predictions,
        &dataset.join("images/001.Synthetic"),
        &dataset.join("parts"),
    ] {
        fs::create_dir_all(d).expect("mkdir");
    }
    let mut rng = gen::rng(seed);
    let mut images = String::new();
    let mut labels = String::new();
    let mut boxes = String::new();
    let mut split = String::new();
    let mut parts = String::new();
    let mut proposals = String::from("image_id,x1,y1,x2,y2,score\n");
    let mut sizes = BTreeMap::new();

    write_tensor(&gen::weights(&mut rng, CLASSES, CHANNELS), features.join(WEIGHTS_FILE)).expect("weights");
    for id in 1..=n {
        let (h, w) = [(224, 224), (192, 256), (160, 224)][(id as usize) % 3];
        sizes.insert(id, (h, w));
        let rel = format!("001.Synthetic/img_{id:04}.png");
        ramp_image(w as u32, h as u32)
            .save(dataset.join("images").join(&rel))
            .expect("save png");
        let _ = writeln!(images, "{id} {rel}");
        let _ = writeln!(labels, "{id} {}", 1 + (id as usize % CLASSES));
        let bx = rng.gen_range(0..w / 2);
        let by = rng.gen_range(0..h / 2);
        let _ = writeln!(boxes, "{id} {bx}.0 {by}.0 {}.0 {}.0", w / 3, h / 3);
        let _ = writeln!(split, "{id} {}", id % 2);
        for p in 1..=15 {
            let visible = rng.gen_bool(0.8);
            let (x, y) = if visible {
                (rng.gen_range(0..w), rng.gen_range(0..h))
            } else {
                (0, 0)
            };
            let _ = writeln!(parts, "{id} {p} {x}.0 {y}.0 {}", visible as u8);
        }

        let (fh, fw) = (h / 16, w / 16);
        let (cy, cx) = (rng.gen_range(0..fh) as f32, rng.gen_range(0..fw) as f32);
        let noise = gen::volume(&mut rng, CHANNELS, fh, fw, 0.2);
        let f = Tensor3::from_fn(CHANNELS, fh, fw, |c, y, x| {
            let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
            noise.get(c, y, x) + (c as f32 + 1.0) * (-d2 / 6.0).exp()
        })
        .expect("feature");
        write_tensor(&f, features.join(format!("{id}.npy"))).expect("write feature");

        let anchors = fh * fw * 9;
        let pred = sgloc::tensor::Matrix2::from_fn(anchors, 5, |_, c| {
            if c == 0 {
                rng.gen_range(0.01..0.99)
            } else {
                rng.gen_range(-0.5..0.5)
            }
        })
        .expect("predictions");
        write_tensor(&pred, predictions.join(format!("{id}.npy"))).expect("write predictions");

        for (b, score) in gen::candidates(&mut rng, 30, (w.min(h) - 40) as f64) {
            let _ = writeln!(proposals, "{id},{},{},{},{},{}", b.x1, b.y1, b.x2, b.y2, score);
        }
    }
    fs::write(dataset.join("images.txt"), images).expect("write");
    fs::write(dataset.join("image_class_labels.txt"), labels).expect("write");
    fs::write(dataset.join("bounding_boxes.txt"), boxes).expect("write");
    fs::write(dataset.join("train_test_split.txt"), split).expect("write");
    fs::write(dataset.join("parts/part_locs.txt"), parts).expect("write");
    let proposals_path = root.path().join("proposals.csv");
    fs::write(&proposals_path, proposals).expect("write");

    Fixture {
        root,
        dataset,
        features,
        predictions,
        proposals: proposals_path,
        sizes,
    }
}

impl Fixture {
    /// Base arguments pointing at the fixture and the given output dir.
    pub fn args<'a>(&'a self, out: &'a Path, rest: &[&'a str]) -> Vec<&'a str> {
        self.args_with_jobs(out, "3", rest)
    }

    pub fn args_with_jobs<'a>(&'a self, out: &'a Path, jobs: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
        let mut v = vec![
            "--dataset-root",
            s(&self.dataset),
            "--feature-dir",
            s(&self.features),
            "--output-dir",
            s(out),
            "--jobs",
            jobs,
        ];
        v.extend_from_slice(rest);
        v
    }

    pub fn run(&self, out: &Path, rest: &[&str]) -> Output {
        sgloc(&self.args(out, rest))
    }

    pub fn run_with_jobs(&self, out: &Path, jobs: &str, rest: &[&str]) -> Output {
        sgloc(&self.args_with_jobs(out, jobs, rest))
    }

    /// Every pipeline stage in order; panics on the first non-zero exit.
    pub fn run_pipeline(&self, out: &Path) {
        let pred = s(&self.predictions);
        let proposals = s(&self.proposals);
        let nms_csv = out.join("nms.csv");
        let stages: Vec<Vec<&str>> = vec![
            vec!["index"],
            vec!["cam", "--all"],
            vec!["pseudo-box", "--all"],
            vec!["rpn-targets", "--all", "--sample", "--predictions", pred],
            vec!["nms", "--input", proposals, "--max-keep", "10"],
            vec!["roipool", "--rois", s(&nms_csv)],
            vec!["eval"],
            vec!["confusion", "--top-k", "5"],
            vec!["render", "--all"],
        ];
        for stage in stages {
            let o = self.run(out, &stage);
            assert!(o.status.success(), "stage {stage:?} failed: {}", stderr(&o));
        }
    }
}

/// Relative path to file bytes for every file under `dir`.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("read dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).expect("prefix").to_path_buf(),
                    fs::read(&p).expect("read"),
                );
            }
        }
    }
    out
}
