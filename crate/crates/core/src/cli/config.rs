use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::detector::{Padding, ScanConfig};
use crate::error::{Error, Result};
use crate::eval::{uniform_grid, MatchMode, MatchThreshold};
use crate::hog::{BlockNorm, HogConfig};
use crate::imaging::{PyramidConfig, WindowSize};
use crate::pipeline::{CSelection, TrainingPlan};
use crate::svm::{ModelFile, SvmTrainConfig, DEFAULT_C_GRID};

/// Every configuration key, in the order `to_text` writes them.
pub const KEYS: [&str; 30] = [
    "cell",
    "block",
    "block_stride",
    "bins",
    "norm",
    "epsilon",
    "core_width",
    "core_height",
    "pad_x",
    "pad_y",
    "stride",
    "scales",
    "scale_step",
    "anchor_level",
    "nms_overlap",
    "c",
    "c_grid",
    "cv_folds",
    "max_epochs",
    "tolerance",
    "seed",
    "fppi_target",
    "match_threshold",
    "match_mode",
    "t_grid",
    "negatives_per_image",
    "bootstrap_budget",
    "calibration_floor",
    "sweep_folds",
    "train_fraction",
];

/// Keys that fix the feature geometry a model is tied to.
const GEOMETRY_KEYS: [&str; 10] = [
    "cell",
    "block",
    "block_stride",
    "bins",
    "norm",
    "epsilon",
    "core_width",
    "core_height",
    "pad_x",
    "pad_y",
];

/// Flat run configuration. Built-in defaults reproduce the reference
/// detector setup; a `key = value` file and then command-line flags
/// override them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hog: HogConfig,
    pub core: WindowSize,
    pub pad: Padding,
    pub stride: usize,
    pub pyramid: PyramidConfig,
    pub nms_overlap: f64,
    /// `None` selects C by cross-validation over `c_grid`.
    pub c: Option<f64>,
    pub c_grid: Vec<f64>,
    pub cv_folds: usize,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub fppi_target: f64,
    pub match_threshold: MatchThreshold,
    pub match_mode: MatchMode,
    pub t_grid: Vec<f64>,
    pub negatives_per_image: usize,
    pub bootstrap_budget: usize,
    pub calibration_floor: f64,
    pub sweep_folds: usize,
    pub train_fraction: f64,
    explicit: BTreeSet<&'static str>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let svm = SvmTrainConfig::default();
        Self {
            hog: HogConfig::default(),
            core: WindowSize::new(90, 30),
            pad: Padding::new(9, 3),
            stride: 9,
            pyramid: PyramidConfig::default(),
            nms_overlap: 0.3,
            c: None,
            c_grid: DEFAULT_C_GRID.to_vec(),
            cv_folds: 5,
            max_epochs: svm.max_epochs,
            tolerance: svm.tolerance,
            seed: 0,
            fppi_target: 1.0,
            match_threshold: MatchThreshold::default(),
            match_mode: MatchMode::ManyToOne,
            t_grid: uniform_grid(20),
            negatives_per_image: 20,
            bootstrap_budget: 1000,
            calibration_floor: -1.0,
            sweep_folds: 5,
            train_fraction: 77.0 / 377.0,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse::<f64>(key, s))
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_match_mode(s: &str) -> Result<MatchMode> {
    match s.trim() {
        "many_to_one" => Ok(MatchMode::ManyToOne),
        "one_to_one" => Ok(MatchMode::OneToOne),
        other => Err(Error::Config(format!("match_mode must be many_to_one or one_to_one, got {other:?}"))),
    }
}

pub fn match_mode_name(m: MatchMode) -> &'static str {
    match m {
        MatchMode::ManyToOne => "many_to_one",
        MatchMode::OneToOne => "one_to_one",
    }
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let canonical = KEYS
            .iter()
            .copied()
            .find(|k| *k == key)
            .ok_or_else(|| Error::Config(format!("unknown configuration key {key:?}")))?;
        let v = value.trim();
        match canonical {
            "cell" => self.hog.cell_size = parse(key, v)?,
            "block" => self.hog.block_size = parse(key, v)?,
            "block_stride" => self.hog.block_stride = parse(key, v)?,
            "bins" => self.hog.num_bins = parse(key, v)?,
            "norm" => self.hog.norm = v.parse::<BlockNorm>().map_err(|e| Error::Config(e.to_string()))?,
            "epsilon" => self.hog.epsilon = parse(key, v)?,
            "core_width" => self.core.width = parse(key, v)?,
            "core_height" => self.core.height = parse(key, v)?,
            "pad_x" => self.pad.x = parse(key, v)?,
            "pad_y" => self.pad.y = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "scales" => self.pyramid.num_levels = parse(key, v)?,
            "scale_step" => self.pyramid.step = parse(key, v)?,
            "anchor_level" => {
                self.pyramid.anchor = if v == "auto" { None } else { Some(parse(key, v)?) };
            }
            "nms_overlap" => self.nms_overlap = parse(key, v)?,
            "c" => self.c = if v == "auto" { None } else { Some(parse(key, v)?) },
            "c_grid" => self.c_grid = parse_list(key, v)?,
            "cv_folds" => self.cv_folds = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "tolerance" => self.tolerance = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "fppi_target" => self.fppi_target = parse(key, v)?,
            "match_threshold" => self.match_threshold = MatchThreshold::new(parse(key, v)?)?,
            "match_mode" => self.match_mode = parse_match_mode(v)?,
            "t_grid" => {
                self.t_grid = match v.strip_prefix("uniform:") {
                    Some(steps) => uniform_grid(parse::<usize>(key, steps)?.max(1)),
                    None => parse_list(key, v)?,
                };
            }
            "negatives_per_image" => self.negatives_per_image = parse(key, v)?,
            "bootstrap_budget" => self.bootstrap_budget = parse(key, v)?,
            "calibration_floor" => self.calibration_floor = parse(key, v)?,
            "sweep_folds" => self.sweep_folds = parse(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            _ => unreachable!("every key in KEYS is handled"),
        }
        self.explicit.insert(canonical);
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are
    /// ignored.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", origin.display(), i + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text, path)
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// The configuration as a `key = value` file that reproduces it.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let anchor = self.pyramid.anchor.map_or("auto".to_string(), |a| a.to_string());
        let c = self.c.map_or("auto".to_string(), |c| c.to_string());
        let values: [(&str, String); 30] = [
            ("cell", self.hog.cell_size.to_string()),
            ("block", self.hog.block_size.to_string()),
            ("block_stride", self.hog.block_stride.to_string()),
            ("bins", self.hog.num_bins.to_string()),
            ("norm", self.hog.norm.to_string()),
            ("epsilon", self.hog.epsilon.to_string()),
            ("core_width", self.core.width.to_string()),
            ("core_height", self.core.height.to_string()),
            ("pad_x", self.pad.x.to_string()),
            ("pad_y", self.pad.y.to_string()),
            ("stride", self.stride.to_string()),
            ("scales", self.pyramid.num_levels.to_string()),
            ("scale_step", self.pyramid.step.to_string()),
            ("anchor_level", anchor),
            ("nms_overlap", self.nms_overlap.to_string()),
            ("c", c),
            ("c_grid", join(&self.c_grid)),
            ("cv_folds", self.cv_folds.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("seed", self.seed.to_string()),
            ("fppi_target", self.fppi_target.to_string()),
            ("match_threshold", self.match_threshold.value().to_string()),
            ("match_mode", match_mode_name(self.match_mode).to_string()),
            ("t_grid", join(&self.t_grid)),
            ("negatives_per_image", self.negatives_per_image.to_string()),
            ("bootstrap_budget", self.bootstrap_budget.to_string()),
            ("calibration_floor", self.calibration_floor.to_string()),
            ("sweep_folds", self.sweep_folds.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
        ];
        for (k, v) in values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn scan_config(&self) -> Result<ScanConfig> {
        let mut scan = ScanConfig::with_core(self.core, self.pad)?;
        scan.stride = self.stride;
        scan.pyramid = self.pyramid;
        scan.nms_overlap = self.nms_overlap;
        Ok(scan)
    }

    pub fn svm_config(&self) -> SvmTrainConfig {
        SvmTrainConfig {
            c: self.c.unwrap_or(1.0),
            max_epochs: self.max_epochs,
            tolerance: self.tolerance,
            seed: self.seed,
        }
    }

    /// Checks cross-field consistency and builds the training plan.
    pub fn plan(&self) -> Result<TrainingPlan> {
        let scan = self.scan_config()?;
        let plan = TrainingPlan {
            hog: self.hog,
            scan,
            svm: self.svm_config(),
            c: match self.c {
                Some(c) => CSelection::Fixed(c),
                None => CSelection::CrossValidated {
                    grid: self.c_grid.clone(),
                    folds: self.cv_folds,
                },
            },
            negatives_per_image: self.negatives_per_image,
            bootstrap_budget: self.bootstrap_budget,
            fppi_target: self.fppi_target,
            match_threshold: self.match_threshold,
            match_mode: self.match_mode,
            calibration_floor: self.calibration_floor,
            seed: self.seed,
        };
        plan.validate()?;
        if !(self.nms_overlap >= 0.0 && self.nms_overlap <= 1.0) {
            return Err(Error::Config(format!("nms_overlap must be in [0, 1], got {}", self.nms_overlap)));
        }
        Ok(plan)
    }

    /// Adopts the geometry stored in a model file for every geometry key
    /// not set explicitly, and rejects explicit settings that disagree.
    pub fn adopt_model_geometry(&mut self, file: &ModelFile) -> Result<()> {
        let core = WindowSize::new(
            (file.window.width as i64 - 2 * i64::from(file.pad.x)) as usize,
            (file.window.height as i64 - 2 * i64::from(file.pad.y)) as usize,
        );
        let mut conflicts = Vec::new();
        for key in GEOMETRY_KEYS {
            let (mine, theirs) = match key {
                "cell" => (self.hog.cell_size.to_string(), file.hog.cell_size.to_string()),
                "block" => (self.hog.block_size.to_string(), file.hog.block_size.to_string()),
                "block_stride" => (self.hog.block_stride.to_string(), file.hog.block_stride.to_string()),
                "bins" => (self.hog.num_bins.to_string(), file.hog.num_bins.to_string()),
                "norm" => (self.hog.norm.to_string(), file.hog.norm.to_string()),
                "epsilon" => (self.hog.epsilon.to_string(), file.hog.epsilon.to_string()),
                "core_width" => (self.core.width.to_string(), core.width.to_string()),
                "core_height" => (self.core.height.to_string(), core.height.to_string()),
                "pad_x" => (self.pad.x.to_string(), file.pad.x.to_string()),
                "pad_y" => (self.pad.y.to_string(), file.pad.y.to_string()),
                _ => unreachable!(),
            };
            if self.is_explicit(key) && mine != theirs {
                conflicts.push(format!("{key} = {mine} (model has {theirs})"));
            }
        }
        if !conflicts.is_empty() {
            return Err(Error::Config(format!(
                "configuration disagrees with the model geometry: {}",
                conflicts.join(", ")
            )));
        }
        self.hog = file.hog;
        self.core = core;
        self.pad = file.pad;
        Ok(())
    }
}
