//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Result};
use rand::Rng;
use sgloc::dataset::load_index;
use sgloc::geometry::{generate_anchors, iou, nms_indices, AnchorConfig, BBox, ScoredBox};
use sgloc::metrics::{accuracy, confusion, localization_accuracy, pcl, EvalRecord, IouHistogram};
use sgloc::rpn::{
    decode_box, encode_box, label_anchors, rpn_loss, smooth_l1, AnchorLabel, AnchorTarget, AnchorTargets, RpnPrediction,
};
use sgloc::saliency::{compute_cam, label_components, largest_component_box, otsu, BinaryMask, CamSource, SaliencyMap};
use sgloc::Error;
use sgloc_oracles as oracle;
use sgloc_oracles::fixtures::{corrupt_copy, cub_mini_dir, cub_mini_expected};
use sgloc_oracles::gen;

const IOU_PAIRS: usize = 1000;
const IOU_BUDGET: Duration = Duration::from_secs(5);
const OTSU_MAPS: usize = 200;
const OTSU_BUDGET: Duration = Duration::from_secs(10);
const CAM_INSTANCES: usize = 100;
const CAM_MAX_CHANNELS: usize = 64;
const CAM_TOL: f64 = 1e-5;
const CAM_ALGEBRA_TOL: f64 = 1e-4;
const MASKS: usize = 200;
const NMS_INSTANCES: usize = 100;
const NMS_BOXES: usize = 200;
const ROUND_TRIP_PAIRS: usize = 1000;
const ROUND_TRIP_TOL: f64 = 1e-4;
const LOSS_EPS: f64 = 1e-7;
const PERFECT_LOSS_MAX: f64 = 1e-5;
const LN2_TOL: f64 = 1e-9;
const LOSS_INSTANCES: usize = 100;
const LOSS_TOL: f64 = 1e-6;
const SYNTHETIC_RECORDS: usize = 500;

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn iou_suite() -> Result<String> {
    let mut rng = gen::rng(101);
    let start = Instant::now();
    let to_box = |v: [i64; 4]| BBox::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64);
    for i in 0..IOU_PAIRS {
        let (a, b) = (gen::int_box(&mut rng, 64), gen::int_box(&mut rng, 64));
        let got = iou(&to_box(a)?, &to_box(b)?);
        let want = oracle::raster_iou(a, b, 64);
        ensure!(got == want, "pair {i}: {a:?} {b:?} gave {got}, rasterized {want}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < IOU_BUDGET, "took {elapsed:?}");
    Ok(format!("{IOU_PAIRS} pairs exact"))
}

fn otsu_suite() -> Result<String> {
    let mut rng = gen::rng(102);
    let start = Instant::now();
    for i in 0..OTSU_MAPS {
        let (h, w) = (rng.gen_range(2..48), rng.gen_range(2..48));
        let values = gen::saliency_values(&mut rng, h, w);
        let map = SaliencyMap::new(h, w, values.clone(), 0, CamSource::CallerForced)?;
        match (oracle::otsu(&values, 256), otsu(&map, 256)) {
            (Some((t, k)), Ok(split)) => {
                ensure!(
                    (split.threshold, split.edge_index) == (t, k),
                    "map {i}: got {split:?}, exhaustive ({t}, {k})"
                )
            }
            (None, Err(Error::DegenerateMap)) => {}
            (want, got) => bail!("map {i}: exhaustive {want:?}, library {got:?}"),
        }
    }
    for (h, w, v) in [(1, 1, 0.0f32), (5, 7, 3.25), (16, 16, -1.0)] {
        let map = SaliencyMap::new(h, w, vec![v; h * w], 0, CamSource::CallerForced)?;
        ensure!(
            matches!(otsu(&map, 256), Err(Error::DegenerateMap)),
            "constant {h}x{w} map was split"
        );
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < OTSU_BUDGET, "took {elapsed:?}");
    Ok(format!("{OTSU_MAPS} maps, constant maps degenerate"))
}

fn cam_suite() -> Result<String> {
    let mut rng = gen::rng(103);
    let mut worst = 0.0f64;
    for i in 0..CAM_INSTANCES {
        let c = rng.gen_range(1..=CAM_MAX_CHANNELS);
        let (h, w) = (rng.gen_range(1..16), rng.gen_range(1..16));
        let f = gen::volume(&mut rng, c, h, w, 4.0);
        let w1 = gen::weights(&mut rng, 4, c);
        let w2 = gen::weights(&mut rng, 4, c);
        let class = rng.gen_range(0..4);

        let want = oracle::cam(&f, &w1, class);
        let a = compute_cam(&f, &w1, class)?;
        let scale = max_abs(want.iter().copied()).max(1e-12);
        let err = max_abs(a.values().iter().zip(&want).map(|(g, e)| *g as f64 - e)) / scale;
        worst = worst.max(err);
        ensure!(err <= CAM_TOL, "instance {i}: relative error {err:e}");

        let b = compute_cam(&f, &w2, class)?;
        let sum = compute_cam(&f, &w1.add(&w2)?, class)?;
        let scale = max_abs(
            sum.values()
                .iter()
                .chain(a.values())
                .chain(b.values())
                .map(|v| *v as f64),
        )
        .max(1e-12);
        let err = max_abs(
            (0..a.values().len()).map(|k| sum.values()[k] as f64 - a.values()[k] as f64 - b.values()[k] as f64),
        ) / scale;
        ensure!(err <= CAM_ALGEBRA_TOL, "instance {i}: linearity error {err:e}");

        let alpha = rng.gen_range(0.01f32..100.0);
        let scaled = compute_cam(&f, &w1.scaled(alpha)?, class)?;
        let scale = max_abs(scaled.values().iter().map(|v| *v as f64)).max(1e-12);
        let err = max_abs(
            scaled
                .values()
                .iter()
                .zip(a.values())
                .map(|(s, v)| *s as f64 - alpha as f64 * *v as f64),
        ) / scale;
        ensure!(
            err <= CAM_ALGEBRA_TOL,
            "instance {i}: scale error {err:e} at alpha {alpha}"
        );
    }
    Ok(format!("{CAM_INSTANCES} instances, worst relative error {worst:.2e}"))
}

fn components_suite() -> Result<String> {
    let mut rng = gen::rng(104);
    let mut multi = 0;
    for i in 0..MASKS {
        let (h, w) = (rng.gen_range(4..48), rng.gen_range(4..48));
        let bits = gen::blob_mask(&mut rng, h, w);
        let mask = BinaryMask::from_bits(h, w, bits.clone(), 0.5)?;
        let (labels, blobs) = oracle::flood_fill(&bits, h, w);
        multi += (blobs.len() > 1) as usize;
        let comps = label_components(&mask);
        ensure!(comps.labels == labels, "mask {i}: labels differ from flood fill");
        let Some(best) = oracle::largest_blob(&blobs) else {
            ensure!(
                largest_component_box(&mask).is_none(),
                "mask {i}: box from an empty mask"
            );
            continue;
        };
        let Some((b, area)) = largest_component_box(&mask) else {
            bail!("mask {i}: no box")
        };
        let want = [best.x_min, best.y_min, best.x_max, best.y_max].map(|v| v as f64);
        ensure!(
            b.to_array() == want && area == best.area,
            "mask {i}: box {b:?}/{area}, flood fill {best:?}"
        );

        let id = blobs.iter().position(|x| *x == best).expect("largest is listed") as u32 + 1;
        let [x1, y1, x2, y2] = b.to_array().map(|v| v as usize);
        let mut touch = [false; 4];
        for y in 0..h {
            for x in 0..w {
                if labels[y * w + x] == id {
                    ensure!(
                        x1 <= x && x <= x2 && y1 <= y && y <= y2,
                        "mask {i}: pixel ({x},{y}) outside the box"
                    );
                    touch = [
                        touch[0] | (x == x1),
                        touch[1] | (y == y1),
                        touch[2] | (x == x2),
                        touch[3] | (y == y2),
                    ];
                }
            }
        }
        ensure!(touch == [true; 4], "mask {i}: box edges touched {touch:?}");
    }
    Ok(format!("{MASKS} masks, {multi} with several blobs"))
}

fn nms_suite() -> Result<String> {
    let mut rng = gen::rng(105);
    for i in 0..NMS_INSTANCES {
        let cands = gen::candidates(&mut rng, NMS_BOXES, 500.0);
        let scored = cands
            .iter()
            .map(|(b, s)| ScoredBox::new(*b, *s))
            .collect::<Result<Vec<_>, _>>()?;
        for thr in [0.3, 0.5, 0.7] {
            let got = nms_indices(&scored, thr, usize::MAX)?;
            ensure!(
                got == oracle::nms(&cands, thr, usize::MAX),
                "instance {i} at {thr}: keep-sets differ"
            );
        }
    }
    Ok(format!("{NMS_INSTANCES} instances of {NMS_BOXES} boxes at 0.3/0.5/0.7"))
}

fn round_trip_suite() -> Result<String> {
    let mut rng = gen::rng(106);
    let mut worst = 0.0f64;
    for i in 0..ROUND_TRIP_PAIRS {
        let anchor = gen::real_box(&mut rng, 512.0);
        let target = gen::real_box(&mut rng, 512.0);
        let back = decode_box(&anchor, encode_box(&anchor, &target), None)?;
        let err = max_abs(back.to_array().iter().zip(target.to_array()).map(|(a, b)| a - b));
        worst = worst.max(err);
        ensure!(err < ROUND_TRIP_TOL, "pair {i}: error {err:e}");
    }
    Ok(format!("{ROUND_TRIP_PAIRS} pairs, worst error {worst:.2e}"))
}

fn loss_suite() -> Result<String> {
    // perfect prediction over a real labeling
    let grid = generate_anchors(14, 14, &AnchorConfig::default())?;
    let gt = BBox::new(40.0, 52.5, 170.0, 190.0)?;
    let targets = label_anchors(&grid, &[gt], 224, 224, 0.7, 0.3)?;
    let probs = targets
        .targets
        .iter()
        .map(|t| {
            if t.label == AnchorLabel::Positive {
                1.0 - LOSS_EPS
            } else {
                LOSS_EPS
            }
        })
        .collect();
    let deltas = targets.targets.iter().map(|t| t.deltas.unwrap_or([0.0; 4])).collect();
    let labeled = targets.positives() + targets.negatives();
    let perfect = rpn_loss(&RpnPrediction::new(probs, deltas)?, &targets, 10.0, labeled, 14 * 14)?;
    ensure!(
        perfect.total < PERFECT_LOSS_MAX,
        "perfect prediction total {}",
        perfect.total
    );

    // one positive anchor at p = 0.5 with exact regression
    let single = AnchorTargets {
        targets: vec![AnchorTarget {
            label: AnchorLabel::Positive,
            deltas: Some([0.1, -0.2, 0.3, 0.0]),
            matched: Some(0),
            max_iou: 1.0,
        }],
    };
    let half = rpn_loss(
        &RpnPrediction::new(vec![0.5], vec![[0.1, -0.2, 0.3, 0.0]])?,
        &single,
        10.0,
        1,
        1,
    )?;
    ensure!(
        (half.cls_term - std::f64::consts::LN_2).abs() <= LN2_TOL,
        "cls_term {}",
        half.cls_term
    );
    ensure!(half.reg_term == 0.0, "reg_term {}", half.reg_term);

    let mut rng = gen::rng(107);
    for i in 0..LOSS_INSTANCES {
        let n = rng.gen_range(1..200);
        let mut targets = AnchorTargets::default();
        let (mut labels, mut stars) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let code = rng.gen_range(-1i8..=1);
            let star = [0; 4].map(|_| rng.gen_range(-3.0..3.0));
            let label = [AnchorLabel::Ignore, AnchorLabel::Negative, AnchorLabel::Positive][(code + 1) as usize];
            targets.targets.push(AnchorTarget {
                label,
                deltas: (code == 1).then_some(star),
                matched: None,
                max_iou: 0.0,
            });
            labels.push(code);
            stars.push(star);
        }
        let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-4..1.0 - 1e-4)).collect();
        let deltas: Vec<[f64; 4]> = (0..n).map(|_| [0; 4].map(|_| rng.gen_range(-4.0..4.0))).collect();
        let (n_cls, n_reg, lambda) = (rng.gen_range(1..512), rng.gen_range(1..2400), rng.gen_range(0.0..20.0));
        let got = rpn_loss(
            &RpnPrediction::new(probs.clone(), deltas.clone())?,
            &targets,
            lambda,
            n_cls,
            n_reg,
        )?;
        let (c, r, t) = oracle::rpn_loss(&probs, &deltas, &labels, &stars, lambda, n_cls, n_reg);
        for (name, g, e) in [
            ("cls", got.cls_term, c),
            ("reg", got.reg_term, r),
            ("total", got.total, t),
        ] {
            ensure!(
                (g - e).abs() <= LOSS_TOL * e.abs().max(1.0),
                "instance {i}: {name} {g} vs {e}"
            );
        }
    }

    for x in [1.0, -1.0] {
        ensure!(
            smooth_l1(x) == 0.5 && 0.5 * x * x == x.abs() - 0.5,
            "branches disagree at {x}"
        );
    }
    Ok(format!(
        "perfect total {:.2e}, ln 2 exact, {LOSS_INSTANCES} random instances",
        perfect.total
    ))
}

fn metrics_suite() -> Result<String> {
    let (records, truth) = gen::synthetic_records(SYNTHETIC_RECORDS);
    let n = records.len() as f64;
    ensure!(accuracy(&records)? == truth.class_correct as f64 / n, "accuracy");
    let loc = localization_accuracy(&records, 0.5)?;
    ensure!(
        loc.correct == truth.loc_correct as u64,
        "localization {} vs {}",
        loc.correct,
        truth.loc_correct
    );
    ensure!(
        loc.histogram
            == IouHistogram {
                counts: truth.histogram
            },
        "histogram {:?}",
        loc.histogram.counts
    );
    let report = pcl(&records)?;
    ensure!(report.per_part.len() == truth.part_visible.len(), "part count");
    for (p, part) in &report.per_part {
        let i = *p as usize - 1;
        ensure!(
            part.visible == truth.part_visible[i] && part.inside == truth.part_inside[i],
            "part {p}: {}/{} vs {}/{}",
            part.inside,
            part.visible,
            truth.part_inside[i],
            truth.part_visible[i]
        );
    }
    let m = confusion(&records, truth.classes)?;
    ensure!(m.counts == truth.confusion, "confusion matrix");

    let mut rng = gen::rng(108);
    for round in 0..50 {
        let classes = rng.gen_range(1..40);
        let records: Vec<EvalRecord> = (0..rng.gen_range(1..400))
            .map(|i| EvalRecord {
                image_id: i,
                true_class: rng.gen_range(0..classes),
                predicted_class: rng.gen_range(0..classes),
                predicted_box: None,
                gt_box: None,
                parts: vec![],
            })
            .collect();
        let m = confusion(&records, classes)?;
        ensure!(
            m.trace() as f64 / m.total() as f64 == accuracy(&records)?,
            "round {round}: trace/total"
        );
    }
    Ok(format!(
        "{SYNTHETIC_RECORDS} records exact, trace/total on 50 random sets"
    ))
}

fn ingest_suite() -> Result<String> {
    let index = load_index(cub_mini_dir())?;
    ensure!(
        index.iter().cloned().collect::<Vec<_>>() == cub_mini_expected(),
        "fixture index differs"
    );
    for (file, line, text) in [
        ("images.txt", 2, "2"),
        ("bounding_boxes.txt", 3, "3 0.0 0.0 1.0"),
        ("image_class_labels.txt", 1, "1 x"),
        ("train_test_split.txt", 3, "3 2"),
        ("parts/part_locs.txt", 17, "2 2 0.0 zero 0"),
    ] {
        let dir = tempfile::tempdir()?;
        match load_index(corrupt_copy(dir.path(), file, line, text)) {
            Err(Error::Parse { file: f, line: l, .. }) if f == file && l == line => {}
            other => bail!("{file}:{line}: got {other:?}"),
        }
    }
    let real = match std::env::var_os("CUB_ROOT") {
        None => "CUB_ROOT not set".to_string(),
        Some(root) => {
            let idx = load_index(root)?;
            let counts = (idx.len(), idx.train_count(), idx.test_count());
            ensure!(counts == (11788, 5994, 5794), "real dataset counts {counts:?}");
            "real dataset 11788/5994/5794".to_string()
        }
    };
    Ok(format!("fixture exact, 5 corrupt lines located, {real}"))
}

fn determinism_suite() -> Result<String> {
    let fx = common::pipeline_fixture(6, 109);
    let (a, b) = (fx.root.path().join("run_a"), fx.root.path().join("run_b"));
    fx.run_pipeline(&a);
    fx.run_pipeline(&b);
    let (ta, tb) = (common::tree(&a), common::tree(&b));
    ensure!(ta.len() > 6 * 5, "only {} files written", ta.len());
    if ta != tb {
        let differing: Vec<_> = ta
            .keys()
            .chain(tb.keys())
            .filter(|k| ta.get(*k) != tb.get(*k))
            .collect();
        bail!("trees differ at {differing:?}");
    }
    Ok(format!("{} files byte-identical", ta.len()))
}

type Check = fn() -> Result<String>;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("iou-oracle", iou_suite),
        ("otsu-oracle", otsu_suite),
        ("cam-correctness", cam_suite),
        ("components-pseudo-box", components_suite),
        ("nms-equivalence", nms_suite),
        ("encode-decode-round-trip", round_trip_suite),
        ("rpn-loss", loss_suite),
        ("metrics-protocol", metrics_suite),
        ("ingest", ingest_suite),
        ("cli-determinism", determinism_suite),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err(anyhow::anyhow!("panicked")));
        let ms = start.elapsed().as_millis();
        match result {
            Ok(detail) => println!("PASS {name} ({ms} ms): {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name} ({ms} ms): {e:#}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
