//! Subcommand implementations. [`run`] is the argument-parsing front end;
//! the `cmd_*` functions are usable directly from library code.

mod app;
mod config;
mod sweep;

pub use app::run;
pub use config::{match_mode_name, parse_match_mode, RunConfig, KEYS};
pub use sweep::{cmd_sweep, sweep_point, write_sweep_csv, SweepAxis, SweepMetrics, SweepRow, SweepSpec, SWEEP_CSV_HEADER};

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::{write_synthetic_set, DatasetManifest, SceneSpec};
use crate::detector::{detect_at, DetectionRecord};
use crate::error::{Error, Result, StageExt};
use crate::eval::{det_curve, evaluate, matching_degree_sweep, threshold_detections, Curve, EvalResult, ImageDetections};
use crate::imaging::load_gray;
use crate::pipeline::{check_model_geometry, train_detector, TrainSummary, TrainedDetector};
use crate::svm::{save_model, ModelFile};

/// Trains a detector on every image of `manifest` and writes the model
/// file to `out`.
pub fn cmd_train(cfg: &RunConfig, manifest: &DatasetManifest, out: &Path) -> Result<TrainedDetector> {
    let plan = cfg.plan()?;
    let images = manifest.load_images().stage("loading images")?;
    let trained = train_detector(&images, &plan)?;
    save_model(out, &trained.model_file(&plan)).stage("writing model")?;
    Ok(trained)
}

pub fn write_train_summary<W: Write>(mut w: W, s: &TrainSummary) -> std::io::Result<()> {
    writeln!(w, "images: {}", s.images)?;
    writeln!(w, "positives: {}", s.positives)?;
    writeln!(w, "negatives: {}", s.negatives)?;
    writeln!(w, "hard negatives: {}", s.hard_negatives)?;
    writeln!(w, "descriptor length: {}", s.descriptor_length)?;
    writeln!(w, "C: {}", s.c)?;
    writeln!(w, "threshold: {}", s.threshold)?;
    writeln!(w, "training FPPI at threshold: {}", s.calibration_fppi)?;
    writeln!(
        w,
        "solver epochs: {} initial, {} retrained",
        s.initial_report.epochs, s.final_report.epochs
    )?;
    for (stage, secs) in &s.stage_seconds {
        writeln!(w, "time {stage}: {secs:.2}s")?;
    }
    for warning in &s.warnings {
        writeln!(w, "warning: {warning}")?;
    }
    Ok(())
}

/// An image to run the detector on; `id` is the value written to the
/// `image_id` column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectInput {
    pub id: String,
    pub path: PathBuf,
}

impl DetectInput {
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        Self {
            id: path.to_string_lossy().into_owned(),
            path,
        }
    }

    pub fn from_manifest(manifest: &DatasetManifest) -> Vec<Self> {
        manifest
            .entries
            .iter()
            .map(|e| Self {
                id: e.id(),
                path: manifest.resolve(e),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectReport {
    /// Detections in input order, then score order within an image.
    pub records: Vec<DetectionRecord>,
    /// Inputs that could not be processed, with the reason.
    pub failures: Vec<(String, String)>,
}

/// Runs the detector over each input. The configuration's geometry must
/// already agree with the model (see [`RunConfig::adopt_model_geometry`]).
/// `threshold` overrides the model's calibrated threshold.
pub fn cmd_detect(cfg: &RunConfig, model: &ModelFile, inputs: &[DetectInput], threshold: Option<f64>) -> Result<DetectReport> {
    let plan = cfg.plan()?;
    check_model_geometry(model, &plan.hog, plan.scan.window, plan.scan.pad)?;
    let tau = threshold.unwrap_or(model.model.threshold);
    let results: Vec<Result<Vec<DetectionRecord>>> = inputs
        .par_iter()
        .map(|input| {
            let img = load_gray(&input.path)?;
            let dets = detect_at(&img, &model.model, &plan.hog, &plan.scan, tau)?;
            Ok(dets
                .into_iter()
                .map(|detection| DetectionRecord {
                    image_id: input.id.clone(),
                    detection,
                })
                .collect())
        })
        .collect();
    let mut report = DetectReport {
        records: Vec::new(),
        failures: Vec::new(),
    };
    for (input, r) in inputs.iter().zip(results) {
        match r {
            Ok(rows) => report.records.extend(rows),
            Err(e) => report.failures.push((input.id.clone(), e.to_string())),
        }
    }
    if !inputs.is_empty() && report.failures.len() == inputs.len() {
        return Err(Error::Input(format!("all {} inputs failed; first: {}", inputs.len(), report.failures[0].1)));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub match_threshold: f64,
    pub metrics: EvalResult,
    /// Best DET recall at FPPI <= the configured target.
    pub recall_at_target: Option<f64>,
    pub det: Curve,
    /// `(t, precision, recall)` over the configured t grid.
    pub matching_degree: Vec<(f64, f64, f64)>,
}

/// Groups detection records by ground-truth image, in manifest order.
/// Records naming an image absent from the manifest are an error.
pub fn align_detections(records: &[DetectionRecord], truth: &DatasetManifest) -> Result<Vec<ImageDetections>> {
    let ids: Vec<String> = truth.entries.iter().map(|e| e.id()).collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut grouped: Vec<ImageDetections> = ids
        .iter()
        .map(|id| ImageDetections {
            image_id: id.clone(),
            detections: Vec::new(),
        })
        .collect();
    let mut unmatched = BTreeSet::new();
    for r in records {
        match index.get(r.image_id.as_str()) {
            Some(&i) => grouped[i].detections.push(r.detection),
            None => {
                unmatched.insert(r.image_id.as_str());
            }
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::Eval(format!(
            "detections name images missing from the ground truth: {}",
            unmatched.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(grouped)
}

/// Scores detections against ground truth. `score_threshold` drops
/// detections below it before the point metrics; the DET curve always
/// uses every detection.
pub fn cmd_eval(
    cfg: &RunConfig,
    records: &[DetectionRecord],
    truth: &DatasetManifest,
    score_threshold: Option<f64>,
) -> Result<EvalReport> {
    let dets = align_detections(records, truth)?;
    let gt = truth.truth();
    let t = cfg.match_threshold;
    let at = match score_threshold {
        Some(tau) => threshold_detections(&dets, tau),
        None => dets.clone(),
    };
    let metrics = evaluate(&at, &gt, t, cfg.match_mode)?;
    let det = det_curve(&dets, &gt, t, cfg.match_mode)?;
    let (precision, recall) = matching_degree_sweep(&at, &gt, &cfg.t_grid, cfg.match_mode)?;
    let matching_degree = precision
        .points()
        .iter()
        .zip(recall.points())
        .map(|(&(t, p), &(_, r))| (t, p, r))
        .collect();
    Ok(EvalReport {
        match_threshold: t.value(),
        metrics,
        recall_at_target: det.max_y_at_or_below(cfg.fppi_target),
        det,
        matching_degree,
    })
}

pub const METRICS_CSV_HEADER: &str = "t,num_images,total_truth,matched_truth,total_detections,matched_detections,false_positives,recall,precision,fppi,recall_at_fppi_target";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `metrics.csv`, `per_image.csv`, `det_curve.csv` and
/// `matching_degree.csv` into `dir`.
pub fn write_eval_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| -> Result<(PathBuf, std::io::BufWriter<std::fs::File>)> {
        let p = dir.join(name);
        let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, std::io::BufWriter::new(f)))
    };
    let m = &report.metrics;

    let (p, mut w) = create("metrics.csv")?;
    (|| -> std::io::Result<()> {
        writeln!(w, "{METRICS_CSV_HEADER}")?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            report.match_threshold,
            m.num_images,
            m.total_truth,
            m.matched_truth,
            m.total_detections,
            m.matched_detections,
            m.false_positives,
            opt(m.recall),
            m.precision,
            m.fppi,
            opt(report.recall_at_target)
        )?;
        w.flush()
    })()
    .map_err(|e| Error::io(&p, e))?;

    let (p, mut w) = create("per_image.csv")?;
    (|| -> std::io::Result<()> {
        let mut csv = csv::Writer::from_writer(&mut w);
        csv.write_record(["image_id", "truth", "matched_truth", "detections", "matched_detections", "false_positives"])?;
        for r in &m.per_image {
            csv.write_record([
                r.image_id.clone(),
                r.truth.to_string(),
                r.matched_truth.to_string(),
                r.detections.to_string(),
                r.matched_detections.to_string(),
                r.false_positives.to_string(),
            ])?;
        }
        csv.flush()?;
        drop(csv);
        w.flush()
    })()
    .map_err(|e| Error::io(&p, e))?;

    let (p, mut w) = create("det_curve.csv")?;
    report
        .det
        .write_csv(&mut w, "fppi", "recall")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&p, e))?;

    let (p, mut w) = create("matching_degree.csv")?;
    (|| -> std::io::Result<()> {
        writeln!(w, "t,precision,recall")?;
        for (t, pr, rc) in &report.matching_degree {
            writeln!(w, "{t},{pr},{rc}")?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// Writes `count` synthetic scenes and `manifest.tsv` into `dir`.
pub fn cmd_synth(dir: &Path, spec: &SceneSpec, count: usize, seed: u64) -> Result<DatasetManifest> {
    write_synthetic_set(dir, spec, count, seed)
}
