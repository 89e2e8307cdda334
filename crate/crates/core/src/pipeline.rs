//! End-to-end training and cross-validated evaluation over in-memory
//! labeled images.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{bootstrap_round, entry_seed, extract_positive, negative_descriptors, sample_negatives, LabeledImage};
use crate::detector::{detect_at, level_histogram, Padding, ScanConfig};
use crate::error::{Error, Result, StageExt};
use crate::eval::{det_curve, evaluate, threshold_detections, EvalResult, ImageDetections, ImageTruth, MatchMode, MatchThreshold};
use crate::hog::{descriptor_length, DescriptorLayout, HogConfig};
use crate::svm::{
    calibrate_threshold, cross_validate, train_with_report, CrossValidation, LinearModel, ModelFile, SvmTrainConfig,
    TrainReport, DEFAULT_C_GRID,
};

#[derive(Debug, Clone, PartialEq)]
pub enum CSelection {
    Fixed(f64),
    CrossValidated { grid: Vec<f64>, folds: usize },
}

impl Default for CSelection {
    fn default() -> Self {
        CSelection::CrossValidated {
            grid: DEFAULT_C_GRID.to_vec(),
            folds: 5,
        }
    }
}

/// Every knob of detector training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub hog: HogConfig,
    pub scan: ScanConfig,
    /// Solver settings; `c` is ignored unless [`CSelection::Fixed`].
    pub svm: SvmTrainConfig,
    pub c: CSelection,
    pub negatives_per_image: usize,
    pub bootstrap_budget: usize,
    pub fppi_target: f64,
    pub match_threshold: MatchThreshold,
    pub match_mode: MatchMode,
    /// Score cutoff of the calibration scan. Windows below it are never
    /// candidates for the threshold.
    pub calibration_floor: f64,
    pub seed: u64,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            hog: HogConfig::default(),
            scan: ScanConfig::default(),
            svm: SvmTrainConfig::default(),
            c: CSelection::default(),
            negatives_per_image: 20,
            bootstrap_budget: 1000,
            fppi_target: 1.0,
            match_threshold: MatchThreshold::default(),
            match_mode: MatchMode::default(),
            calibration_floor: -1.0,
            seed: 0,
        }
    }
}

impl TrainingPlan {
    pub fn validate(&self) -> Result<()> {
        self.hog.validate()?;
        self.scan.validate(&self.hog)?;
        self.svm.validate()?;
        if let CSelection::CrossValidated { grid, folds } = &self.c {
            if grid.is_empty() || grid.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
                return Err(Error::Config("C grid must hold positive values".into()));
            }
            if *folds < 2 {
                return Err(Error::Config(format!("C selection needs >= 2 folds, got {folds}")));
            }
        }
        if !(self.fppi_target >= 0.0) {
            return Err(Error::Config(format!("FPPI target must be >= 0, got {}", self.fppi_target)));
        }
        Ok(())
    }

    pub fn descriptor_length(&self) -> Result<usize> {
        descriptor_length(self.scan.window, &self.hog)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub images: usize,
    pub positives: usize,
    pub negatives: usize,
    pub hard_negatives: usize,
    pub descriptor_length: usize,
    pub c: f64,
    pub cross_validation: Option<CrossValidation>,
    pub threshold: f64,
    /// Training-set FPPI at `threshold`.
    pub calibration_fppi: f64,
    pub initial_report: TrainReport,
    pub final_report: TrainReport,
    pub warnings: Vec<String>,
    /// Wall-clock seconds per stage, for information only.
    pub stage_seconds: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDetector {
    /// Trained on sampled negatives only, threshold 0.
    pub initial: LinearModel,
    /// Retrained with the hard negatives, threshold 0.
    pub retrained: LinearModel,
    /// `retrained` with the calibrated threshold.
    pub model: LinearModel,
    pub summary: TrainSummary,
}

impl TrainedDetector {
    pub fn model_file(&self, plan: &TrainingPlan) -> ModelFile {
        ModelFile {
            model: self.model.clone(),
            hog: plan.hog,
            window: plan.scan.window,
            pad: plan.scan.pad,
        }
    }
}

struct Stopwatch {
    laps: Vec<(&'static str, f64)>,
    last: Instant,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            laps: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        let secs = (now - self.last).as_secs_f64();
        log::info!("{stage}: {secs:.2}s");
        self.laps.push((stage, secs));
        self.last = now;
    }
}

/// One descriptor per ground-truth plate.
pub fn positive_descriptors(images: &[LabeledImage], hog: &HogConfig, scan: &ScanConfig) -> Result<Vec<Vec<f64>>> {
    let per_image: Vec<Vec<Vec<f64>>> = images
        .par_iter()
        .map(|li| li.plates.iter().map(|p| extract_positive(&li.image, p, hog, scan)).collect())
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// `per_image` random plate-free windows per image at full resolution.
pub fn sampled_negative_descriptors(
    images: &[LabeledImage],
    hog: &HogConfig,
    scan: &ScanConfig,
    per_image: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let layout = DescriptorLayout::new(scan.window, *hog)?;
    let per: Vec<(Vec<Vec<f64>>, Option<String>)> = images
        .par_iter()
        .enumerate()
        .map(|(i, li)| {
            let (w, h) = (li.image.width(), li.image.height());
            if w < scan.window.width || h < scan.window.height {
                return Ok((Vec::new(), Some(format!("{}: smaller than the {} window, no negatives", li.id, scan.window))));
            }
            let sample = sample_negatives(w, h, &li.plates, scan.window, per_image, entry_seed(seed, i as u64))?;
            let ih = level_histogram(&li.image, hog.num_bins)?;
            let warning = sample.warning.map(|m| format!("{}: {m}", li.id));
            Ok((negative_descriptors(&ih, &layout, &sample.boxes), warning))
        })
        .collect::<Result<_>>()?;
    let mut descriptors = Vec::new();
    let mut warnings = Vec::new();
    for (d, w) in per {
        descriptors.extend(d);
        warnings.extend(w);
    }
    Ok((descriptors, warnings))
}

/// Detections for every image with scores `>= threshold`.
pub fn detect_images(
    images: &[LabeledImage],
    model: &LinearModel,
    hog: &HogConfig,
    scan: &ScanConfig,
    threshold: f64,
) -> Result<Vec<ImageDetections>> {
    images
        .par_iter()
        .map(|li| {
            Ok(ImageDetections {
                image_id: li.id.clone(),
                detections: detect_at(&li.image, model, hog, scan, threshold)?,
            })
        })
        .collect()
}

pub fn truths(images: &[LabeledImage]) -> Vec<ImageTruth> {
    images.iter().map(LabeledImage::truth).collect()
}

/// Positives, sampled negatives, C selection, initial training, one
/// bootstrap round, retraining and threshold calibration.
pub fn train_detector(images: &[LabeledImage], plan: &TrainingPlan) -> Result<TrainedDetector> {
    plan.validate()?;
    let mut clock = Stopwatch::new();
    let hog = &plan.hog;
    let scan = &plan.scan;
    let descriptor_length = plan.descriptor_length()?;

    let positives = positive_descriptors(images, hog, scan).stage("positives")?;
    if positives.is_empty() {
        return Err(Error::Training("no positive examples".into()).in_stage("positives"));
    }
    let (negatives, mut warnings) =
        sampled_negative_descriptors(images, hog, scan, plan.negatives_per_image, plan.seed).stage("negatives")?;
    if negatives.is_empty() {
        return Err(Error::Training("no negative examples".into()).in_stage("negatives"));
    }
    clock.lap("sampling");

    let (c, cross_validation) = match &plan.c {
        CSelection::Fixed(c) => (*c, None),
        CSelection::CrossValidated { grid, folds } => {
            let cv = cross_validate(*folds, &positives, &negatives, grid, &plan.svm).stage("C selection")?;
            (cv.best_c, Some(cv))
        }
    };
    let svm = SvmTrainConfig { c, ..plan.svm };
    clock.lap("C selection");

    let (initial, initial_report) = train_with_report(&positives, &negatives, &svm).stage("initial training")?;
    clock.lap("initial training");

    let hard = bootstrap_round(&initial, images, hog, scan, plan.match_threshold, plan.bootstrap_budget)
        .stage("bootstrap")?;
    clock.lap("bootstrap");

    let mut all_negatives: Vec<&[f64]> = negatives.iter().map(Vec::as_slice).collect();
    all_negatives.extend(hard.iter().map(|h| h.descriptor.as_slice()));
    let (retrained, final_report) = train_with_report(&positives, &all_negatives, &svm).stage("retraining")?;
    clock.lap("retraining");

    let scored = detect_images(images, &retrained, hog, scan, plan.calibration_floor).stage("calibration")?;
    let calibration =
        calibrate_threshold(&scored, &truths(images), plan.fppi_target, plan.match_threshold).stage("calibration")?;
    warnings.extend(calibration.warning.clone());
    let floor_hit = scored
        .iter()
        .flat_map(|i| i.detections.iter().map(|d| d.score))
        .reduce(f64::min)
        .is_some_and(|lowest| lowest == calibration.threshold);
    if floor_hit {
        warnings.push(format!(
            "calibration reached the {} score floor before the FPPI target",
            plan.calibration_floor
        ));
    }
    clock.lap("calibration");

    for w in &warnings {
        log::warn!("{w}");
    }
    let model = retrained.clone().with_threshold(calibration.threshold);
    Ok(TrainedDetector {
        summary: TrainSummary {
            images: images.len(),
            positives: positives.len(),
            negatives: negatives.len(),
            hard_negatives: hard.len(),
            descriptor_length,
            c,
            cross_validation,
            threshold: calibration.threshold,
            calibration_fppi: calibration.fppi,
            initial_report,
            final_report,
            warnings,
            stage_seconds: clock.laps,
        },
        initial,
        retrained,
        model,
    })
}

/// Pooled held-out results of a k-fold train/test protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidatedEval {
    /// Pooled metrics at each fold's calibrated threshold.
    pub at_threshold: EvalResult,
    /// Best recall on the pooled DET curve at FPPI <= the plan's target,
    /// with scores measured relative to each fold's threshold.
    pub recall_at_target: Option<f64>,
    pub fold_thresholds: Vec<f64>,
    pub dual_monotone: bool,
}

/// Deals image indices into `folds` groups after a seeded shuffle.
pub fn image_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        fold[i] = k % folds;
    }
    fold
}

/// Trains on all but one fold and detects on the held-out fold, for every
/// fold, then evaluates the pooled detections.
pub fn cross_validated_eval(images: &[LabeledImage], plan: &TrainingPlan, folds: usize) -> Result<CrossValidatedEval> {
    if folds < 2 || images.len() < folds {
        return Err(Error::Config(format!(
            "{folds}-fold evaluation needs at least {folds} images, have {}",
            images.len()
        )));
    }
    let assignment = image_folds(images.len(), folds, plan.seed);
    let mut pooled_at_threshold = Vec::with_capacity(images.len());
    let mut pooled_relative = Vec::with_capacity(images.len());
    let mut truth = Vec::with_capacity(images.len());
    let mut fold_thresholds = Vec::with_capacity(folds);
    let mut dual_monotone = true;
    for f in 0..folds {
        let pick = |held_out: bool| -> Vec<LabeledImage> {
            images
                .iter()
                .zip(&assignment)
                .filter(|(_, &k)| (k == f) == held_out)
                .map(|(li, _)| li.clone())
                .collect()
        };
        let (train, test) = (pick(false), pick(true));
        let trained = train_detector(&train, plan)?;
        dual_monotone &= trained.summary.initial_report.dual_is_monotone() && trained.summary.final_report.dual_is_monotone();
        let tau = trained.model.threshold;
        fold_thresholds.push(tau);
        let floor = plan.calibration_floor.min(tau);
        let raw = detect_images(&test, &trained.model, &plan.hog, &plan.scan, floor)?;
        pooled_at_threshold.extend(threshold_detections(&raw, tau));
        pooled_relative.extend(raw.into_iter().map(|mut d| {
            for det in &mut d.detections {
                det.score -= tau;
            }
            d
        }));
        truth.extend(truths(&test));
    }
    let at_threshold = evaluate(&pooled_at_threshold, &truth, plan.match_threshold, plan.match_mode)?;
    let curve = det_curve(&pooled_relative, &truth, plan.match_threshold, plan.match_mode)?;
    Ok(CrossValidatedEval {
        at_threshold,
        recall_at_target: curve.max_y_at_or_below(plan.fppi_target),
        fold_thresholds,
        dual_monotone,
    })
}

/// Model file geometry check: the file's feature layout must match the
/// configuration it is used with.
pub fn check_model_geometry(file: &ModelFile, hog: &HogConfig, window: crate::imaging::WindowSize, pad: Padding) -> Result<()> {
    if file.hog != *hog || file.window != window || file.pad != pad {
        return Err(Error::Config(format!(
            "model was trained for window {} pad {} cell {} block {} bins {} norm {}, configuration asks for window {} pad {} cell {} block {} bins {} norm {}",
            file.window, file.pad, file.hog.cell_size, file.hog.block_size, file.hog.num_bins, file.hog.norm,
            window, pad, hog.cell_size, hog.block_size, hog.num_bins, hog.norm
        )));
    }
    Ok(())
}
