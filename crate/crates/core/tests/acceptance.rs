//! Acceptance suite. Prints one PASS, FAIL or SKIP line per criterion and
//! exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use platehog::cli::{cmd_detect, cmd_eval, cmd_synth, cmd_train, sweep_point, DetectInput, RunConfig, SweepAxis, SweepSpec};
use platehog::data::synth::{synthetic_images, SceneSpec};
use platehog::data::{load_manifest, manifest_plate_statistics, split, DatasetManifest};
use platehog::detector::{write_detections_csv, BoundingBox, Detection, DetectionRecord};
use platehog::eval::{evaluate, match_pair, ImageDetections, ImageTruth, MatchMode, MatchThreshold};
use platehog::hog::{build_integral_histogram, compute_gradients, descriptor_length, BlockNorm, DescriptorLayout, HogConfig};
use platehog::imaging::{GrayImage, WindowSize};
use platehog::svm::{load_model, train_with_report, ModelFile, SvmTrainConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn(&mut Log) -> Outcome;

/// Solver reports collected from every training run of the suite.
#[derive(Default)]
struct Log {
    dual_checks: Vec<(String, bool)>,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn c1_descriptor_length(_: &mut Log) -> Outcome {
    let hog = HogConfig::default();
    let window = WindowSize::new(108, 36);
    let n = descriptor_length(window, &hog).unwrap();
    let layout = DescriptorLayout::new(window, hog).unwrap();
    verdict(n == 7488 && layout.len() == 7488, format!("length {n}, layout {}", layout.len()))
}

/// Per-pixel voting straight from the raw intensities.
fn naive_descriptor(img: &[f64], w: usize, h: usize, cfg: &HogConfig) -> Vec<f64> {
    let px = |x: usize, y: usize| img[y * w + x];
    let nb = cfg.num_bins;
    let cs = cfg.cell_size;
    let (ncx, ncy) = (w / cs, h / cs);
    let mut cells = vec![0.0; ncx * ncy * nb];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x.clamp(1, w - 2), y.clamp(1, h - 2));
            let gx = px(sx + 1, sy) - px(sx - 1, sy);
            let gy = px(sx, sy + 1) - px(sx, sy - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += PI;
            }
            if theta >= PI {
                theta -= PI;
            }
            let bin = ((theta / PI * nb as f64).floor() as usize).min(nb - 1);
            cells[((y / cs) * ncx + x / cs) * nb + bin] += mag;
        }
    }
    let bs = cfg.block_size;
    let mut out = Vec::new();
    let mut by = 0;
    while by + bs <= ncy {
        let mut bx = 0;
        while bx + bs <= ncx {
            let mut block = Vec::new();
            for j in 0..bs {
                for i in 0..bs {
                    let c = ((by + j) * ncx + bx + i) * nb;
                    block.extend_from_slice(&cells[c..c + nb]);
                }
            }
            let denom = match cfg.norm {
                BlockNorm::L1 => block.iter().map(|v: &f64| v.abs()).sum::<f64>() + cfg.epsilon,
                BlockNorm::L2 => (block.iter().map(|v| v * v).sum::<f64>() + cfg.epsilon * cfg.epsilon).sqrt(),
            };
            out.extend(block.iter().map(|v| v / denom));
            bx += cfg.block_stride;
        }
        by += cfg.block_stride;
    }
    out
}

fn c2_integral_oracle(_: &mut Log) -> Outcome {
    let cfg = HogConfig::default();
    let window = WindowSize::new(64, 64);
    let layout = DescriptorLayout::new(window, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let data: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(0.0..255.0)).collect();
        let img = GrayImage::from_fn(64, 64, |x, y| data[y * 64 + x]).unwrap();
        let ih = build_integral_histogram(&compute_gradients(&img).unwrap(), cfg.num_bins);
        let mut fast = vec![0.0; layout.len()];
        layout.extract_into(&ih, 0, 0, &mut layout.new_scratch(), &mut fast);
        let slow = naive_descriptor(&data, 64, 64, &cfg);
        if slow.len() != fast.len() {
            return Outcome::Fail(format!("length {} vs {}", fast.len(), slow.len()));
        }
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-9, format!("100 images, max deviation {worst:.3e}"))
}

fn pixel_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inside = |r: &BoundingBox, x: f64, y: f64| x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..120 {
        for x in 0..120 {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    inter as f64 / union as f64
}

fn c3_metric_oracle(_: &mut Log) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rect = |rng: &mut ChaCha8Rng| {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        BoundingBox::new(rng.random_range(0..60) as f64, rng.random_range(0..60) as f64, w as f64, h as f64)
    };
    let mut failures = 0;
    for _ in 0..1000 {
        let (a, b) = (rect(&mut rng), rect(&mut rng));
        let tol = 1.0 / a.area().min(b.area());
        if (match_pair(&a, &b) - pixel_iou(&a, &b)).abs() > tol {
            failures += 1;
        }
    }

    // Image a: one exact hit, one shifted duplicate with IoU 1/3, and a hit
    // with IoU 180/220. Image b: a missed plate. Image c: no plates, one
    // false positive. Hand count: 2 of 3 plates found, 2 of 4 detections
    // correct, 2 false positives over 3 images.
    let d = |x, y, w, h, score| Detection {
        bbox: BoundingBox::new(x, y, w, h),
        score,
        level_index: 0,
    };
    let truth = vec![
        ImageTruth {
            image_id: "a".into(),
            boxes: vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0), BoundingBox::new(50.0, 50.0, 20.0, 10.0)],
        },
        ImageTruth {
            image_id: "b".into(),
            boxes: vec![BoundingBox::new(10.0, 10.0, 40.0, 20.0)],
        },
        ImageTruth {
            image_id: "c".into(),
            boxes: vec![],
        },
    ];
    let dets = vec![
        ImageDetections {
            image_id: "a".into(),
            detections: vec![d(0.0, 0.0, 10.0, 10.0, 0.9), d(5.0, 0.0, 10.0, 10.0, 0.8), d(52.0, 50.0, 20.0, 10.0, 0.7)],
        },
        ImageDetections {
            image_id: "b".into(),
            detections: vec![],
        },
        ImageDetections {
            image_id: "c".into(),
            detections: vec![d(0.0, 0.0, 5.0, 5.0, 0.6)],
        },
    ];
    let r = evaluate(&dets, &truth, MatchThreshold::new(0.5).unwrap(), MatchMode::ManyToOne).unwrap();
    let fixture_ok = r.recall == Some(2.0 / 3.0) && r.precision == 0.5 && r.fppi == 2.0 / 3.0;
    verdict(
        failures == 0 && fixture_ok,
        format!(
            "{} of 1000 pairs off the pixel oracle; fixture recall {:?} precision {} fppi {}",
            failures, r.recall, r.precision, r.fppi
        ),
    )
}

fn write_csv(records: &[DetectionRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_detections_csv(&mut buf, records).unwrap();
    buf
}

/// FPPI of `model` at threshold 0 on `test`.
fn fppi_at_zero(cfg: &RunConfig, model: &ModelFile, test: &DatasetManifest) -> f64 {
    let report = cmd_detect(cfg, model, &DetectInput::from_manifest(test), Some(0.0)).unwrap();
    cmd_eval(cfg, &report.records, test, None).unwrap().metrics.fppi
}

fn c4_end_to_end(log: &mut Log) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let all = cmd_synth(dir.path(), &SceneSpec::default(), 250, 2024).unwrap();
    let (train, test) = split(&all, 0.8, 2024).unwrap();
    let cfg = RunConfig::default();
    let model_path = dir.path().join("model.txt");
    let trained = cmd_train(&cfg, &train, &model_path).unwrap();
    log.dual_checks.push(("end-to-end initial".into(), trained.summary.initial_report.dual_is_monotone()));
    log.dual_checks.push(("end-to-end retrained".into(), trained.summary.final_report.dual_is_monotone()));
    let model = load_model(&model_path).unwrap();

    let floor = cfg.calibration_floor.min(model.model.threshold);
    let scan = cmd_detect(&cfg, &model, &DetectInput::from_manifest(&test), Some(floor)).unwrap();
    let report = cmd_eval(&cfg, &scan.records, &test, None).unwrap();
    let at_tau = cmd_eval(&cfg, &scan.records, &test, Some(model.model.threshold)).unwrap().metrics;
    let recall = report.recall_at_target.unwrap_or(0.0);

    let as_file = |m: &platehog::svm::LinearModel| ModelFile {
        model: m.clone(),
        ..model.clone()
    };
    let fppi_initial = fppi_at_zero(&cfg, &as_file(&trained.initial), &test);
    let fppi_boot = fppi_at_zero(&cfg, &as_file(&trained.retrained), &test);
    verdict(
        recall >= 0.95 && fppi_boot <= fppi_initial,
        format!(
            "{} train / {} test scenes, C {}, {} hard negatives; recall {recall:.4} at FPPI <= 1; at calibrated threshold {:.4}: recall {:.4} fppi {:.4}; FPPI at score 0: initial {fppi_initial:.4}, bootstrapped {fppi_boot:.4}",
            train.entries.len(),
            test.entries.len(),
            trained.summary.c,
            trained.summary.hard_negatives,
            model.model.threshold,
            at_tau.recall.unwrap_or(0.0),
            at_tau.fppi
        ),
    )
}

fn c5_trends(log: &mut Log) -> Outcome {
    let spec = SceneSpec {
        width: 320,
        height: 240,
        ..SceneSpec::default()
    };
    let images = synthetic_images(&spec, 30, 5).unwrap();
    let mut base = RunConfig::default();
    base.set("c", "1").unwrap();
    let mut run = |axis: SweepAxis, grid: &[&str]| -> Vec<f64> {
        let s = SweepSpec::new(axis, grid.iter().map(|v| v.to_string()).collect(), base.clone()).unwrap();
        grid.iter()
            .map(|v| {
                let row = sweep_point(&s, v, &images);
                let m = row.outcome.expect("sweep point runs");
                log.dual_checks.push((format!("{axis} {v}"), m.dual_monotone));
                m.recall_at_target.unwrap_or(0.0)
            })
            .collect()
    };
    let pad = run(SweepAxis::Padding, &["-6x-3", "0x0"]);
    let stride = run(SweepAxis::Stride, &["9", "18", "36"]);
    // the 11-scale point is the stride-9 baseline
    let mut scales = run(SweepAxis::Scales, &["1", "5"]);
    scales.push(stride[0]);
    let a = pad[0] < pad[1];
    let b = stride.windows(2).all(|w| w[1] <= w[0]);
    let c = scales.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        a && b && c,
        format!(
            "recall at FPPI <= 1: padding -6x-3 {:.4} vs 0x0 {:.4} [{}]; stride 9/18/36 {:.4}/{:.4}/{:.4} [{}]; scales 1/5/11 {:.4}/{:.4}/{:.4} [{}]",
            pad[0], pad[1], if a { "ok" } else { "violated" },
            stride[0], stride[1], stride[2], if b { "ok" } else { "violated" },
            scales[0], scales[1], scales[2], if c { "ok" } else { "violated" },
        ),
    )
}

fn within(value: f64, reference: f64) -> bool {
    (value - reference).abs() <= 0.02 * reference
}

fn c6_database(log: &mut Log) -> Outcome {
    let Ok(path) = std::env::var("UFOP_MANIFEST") else {
        return Outcome::Skip("set UFOP_MANIFEST to the database manifest to run".into());
    };
    let all = match load_manifest(Path::new(&path)) {
        Ok(m) => m,
        Err(e) => return Outcome::Fail(format!("cannot load {path}: {e}")),
    };
    let s = manifest_plate_statistics(&all).unwrap();
    let stats_ok = within(s.width_mean, 99.5)
        && within(s.width_std, 12.64)
        && within(s.height_mean, 32.5)
        && within(s.height_std, 4.68)
        && within(s.aspect_mean, 3.1)
        && within(s.aspect_std, 0.19);
    let cfg = RunConfig::default();
    let (train, test) = split(&all, cfg.train_fraction, cfg.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.txt");
    let trained = cmd_train(&cfg, &train, &model_path).unwrap();
    log.dual_checks.push(("database retrained".into(), trained.summary.final_report.dual_is_monotone()));
    let model = load_model(&model_path).unwrap();
    let floor = cfg.calibration_floor.min(model.model.threshold);
    let scan = cmd_detect(&cfg, &model, &DetectInput::from_manifest(&test), Some(floor)).unwrap();
    let recall = cmd_eval(&cfg, &scan.records, &test, None).unwrap().recall_at_target.unwrap_or(0.0);
    verdict(
        stats_ok && recall >= 0.95,
        format!(
            "width {:.2} +- {:.2}, height {:.2} +- {:.2}, aspect {:.3} +- {:.3}; {} test images, recall {recall:.4} at FPPI <= 1",
            s.width_mean, s.width_std, s.height_mean, s.height_std, s.aspect_mean, s.aspect_std,
            test.entries.len()
        ),
    )
}

fn c7_determinism(log: &mut Log) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        width: 320,
        height: 240,
        ..SceneSpec::default()
    };
    let m = cmd_synth(&dir.path().join("scenes"), &spec, 16, 77).unwrap();
    let mut cfg = RunConfig::default();
    cfg.set("seed", "9").unwrap();
    let (pa, pb) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    let ta = cmd_train(&cfg, &m, &pa).unwrap();
    cmd_train(&cfg, &m, &pb).unwrap();
    log.dual_checks.push(("determinism".into(), ta.summary.final_report.dual_is_monotone()));
    let (a, b) = (std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    let model = load_model(&pa).unwrap();
    let inputs = DetectInput::from_manifest(&m);
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get().max(4));
    let csv_with = |n: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| write_csv(&cmd_detect(&cfg, &model, &inputs, Some(-0.5)).unwrap().records))
    };
    let (one, many) = (csv_with(1), csv_with(threads));
    let rows = one.iter().filter(|&&c| c == b'\n').count() - 1;
    verdict(
        a == b && one == many,
        format!(
            "model files {} ({} bytes); detection CSV with 1 and {threads} threads {} ({rows} rows)",
            if a == b { "identical" } else { "differ" },
            a.len(),
            if one == many { "identical" } else { "differ" }
        ),
    )
}

fn c8_svm(log: &mut Log) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cluster = |cx: f64, cy: f64| -> Vec<Vec<f64>> {
        (0..100)
            .map(|_| {
                let r = rng.random_range(0.0..1.5f64);
                let a = rng.random_range(0.0..2.0 * PI);
                vec![cx + r * a.cos(), cy + r * a.sin()]
            })
            .collect()
    };
    let (pos, neg) = (cluster(2.5, 2.0), cluster(-2.0, -2.5));
    let cfg = SvmTrainConfig {
        c: 10.0,
        max_epochs: 1000,
        tolerance: 1e-4,
        seed: 8,
    };
    let (model, report) = train_with_report(&pos, &neg, &cfg).unwrap();
    let wrong = pos.iter().filter(|x| model.score(x).unwrap() <= 0.0).count()
        + neg.iter().filter(|x| model.score(x).unwrap() >= 0.0).count();
    log.dual_checks.push(("separable fixture".into(), report.dual_is_monotone()));
    let broken: Vec<&str> = log.dual_checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    verdict(
        wrong == 0 && broken.is_empty(),
        format!(
            "{wrong} misclassified of 200 after {} epochs; dual objective monotone on {} of {} runs{}",
            report.epochs,
            log.dual_checks.len() - broken.len(),
            log.dual_checks.len(),
            if broken.is_empty() { String::new() } else { format!(" (not: {})", broken.join(", ")) }
        ),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, &str, Check); 8] = [
        ("1", "descriptor dimension", c1_descriptor_length),
        ("2", "integral histogram equals naive voting", c2_integral_oracle),
        ("3", "matching degree and metric oracles", c3_metric_oracle),
        ("4", "end-to-end synthetic detection", c4_end_to_end),
        ("5", "calibration trends", c5_trends),
        ("6", "database reproduction", c6_database),
        ("7", "determinism", c7_determinism),
        ("8", "solver properties", c8_svm),
    ];
    let mut log = Log::default();
    let mut failed = 0;
    for (id, name, check) in checks {
        // criterion 8 audits the solver runs of the others, so it always runs
        if !filter.is_empty() && id != "8" && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check(&mut log);
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} criterion {id} ({name}): {detail} [{secs:.1}s]");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
