use std::fmt;
use std::io::Write;
use std::str::FromStr;

use super::config::RunConfig;
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::pipeline::cross_validated_eval;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Values `CxB`: cell side C px, blocks of BxB cells.
    CellBlock,
    /// Values `XxY`: background pixels added per side; negative crops.
    Padding,
    /// Values: pyramid level count.
    Scales,
    /// Values: window stride in px.
    Stride,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::CellBlock => "cell_block",
            SweepAxis::Padding => "padding",
            SweepAxis::Scales => "scales",
            SweepAxis::Stride => "stride",
        }
    }

    pub fn default_grid(self) -> Vec<String> {
        let v: Vec<String> = match self {
            SweepAxis::CellBlock => [4, 6, 9, 12]
                .iter()
                .flat_map(|c| [1, 2, 3].iter().map(move |b| format!("{c}x{b}")))
                .collect(),
            SweepAxis::Padding => ["-6x-3", "0x0", "3x3", "6x3", "9x3", "12x6"].map(String::from).to_vec(),
            SweepAxis::Scales => ["1", "3", "5", "7", "9", "11"].map(String::from).to_vec(),
            SweepAxis::Stride => ["9", "18", "27", "36"].map(String::from).to_vec(),
        };
        v
    }

    /// Configuration keys a grid value sets.
    fn assignments(self, value: &str) -> Result<Vec<(&'static str, String)>> {
        let bad = || Error::Config(format!("{} value {value:?} is malformed", self.name()));
        let pair = || -> Result<(String, String)> {
            let (a, b) = value.split_once('x').ok_or_else(bad)?;
            Ok((a.trim().to_string(), b.trim().to_string()))
        };
        Ok(match self {
            SweepAxis::CellBlock => {
                let (c, b) = pair()?;
                c.parse::<usize>().map_err(|_| bad())?;
                b.parse::<usize>().map_err(|_| bad())?;
                vec![("cell", c), ("block", b)]
            }
            SweepAxis::Padding => {
                let (x, y) = pair()?;
                x.parse::<i32>().map_err(|_| bad())?;
                y.parse::<i32>().map_err(|_| bad())?;
                vec![("pad_x", x), ("pad_y", y)]
            }
            SweepAxis::Scales => {
                value.trim().parse::<usize>().map_err(|_| bad())?;
                vec![("scales", value.trim().to_string())]
            }
            SweepAxis::Stride => {
                value.trim().parse::<usize>().map_err(|_| bad())?;
                vec![("stride", value.trim().to_string())]
            }
        })
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell_block" => Ok(SweepAxis::CellBlock),
            "padding" => Ok(SweepAxis::Padding),
            "scales" => Ok(SweepAxis::Scales),
            "stride" => Ok(SweepAxis::Stride),
            _ => Err(Error::Config(format!(
                "unknown sweep axis {s:?}; expected cell_block, padding, scales or stride"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub grid: Vec<String>,
    pub baseline: RunConfig,
}

impl SweepSpec {
    /// Validates the grid syntax. The padding axis runs with 6 px cells
    /// unless the baseline sets `cell` explicitly, since 4 px cells do not
    /// tile most padded windows.
    pub fn new(axis: SweepAxis, grid: Vec<String>, baseline: RunConfig) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Config(format!("{axis} sweep grid is empty")));
        }
        for v in &grid {
            axis.assignments(v)?;
        }
        let mut baseline = baseline;
        if axis == SweepAxis::Padding && !baseline.is_explicit("cell") {
            baseline.set("cell", "6")?;
        }
        Ok(Self { axis, grid, baseline })
    }

    /// The full configuration of one grid point.
    pub fn point_config(&self, value: &str) -> Result<RunConfig> {
        let mut cfg = self.baseline.clone();
        for (k, v) in self.axis.assignments(value)? {
            cfg.set(k, &v)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    /// `Err` holds the reason a grid point could not be evaluated.
    pub outcome: std::result::Result<SweepMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMetrics {
    pub descriptor_length: usize,
    /// Best pooled recall with FPPI at or below the target.
    pub recall_at_target: Option<f64>,
    /// Pooled metrics at each fold's calibrated threshold.
    pub recall: Option<f64>,
    pub precision: f64,
    pub fppi: f64,
    pub dual_monotone: bool,
}

pub const SWEEP_CSV_HEADER: &str =
    "axis,value,status,descriptor_length,recall_at_target,recall,precision,fppi,error";

/// Evaluates one grid point with k-fold cross-validation.
pub fn sweep_point(spec: &SweepSpec, value: &str, images: &[LabeledImage]) -> SweepRow {
    let outcome = (|| -> Result<SweepMetrics> {
        let cfg = spec.point_config(value)?;
        let plan = cfg.plan()?;
        let descriptor_length = plan.descriptor_length()?;
        let cv = cross_validated_eval(images, &plan, cfg.sweep_folds)?;
        Ok(SweepMetrics {
            descriptor_length,
            recall_at_target: cv.recall_at_target,
            recall: cv.at_threshold.recall,
            precision: cv.at_threshold.precision,
            fppi: cv.at_threshold.fppi,
            dual_monotone: cv.dual_monotone,
        })
    })()
    .map_err(|e| e.to_string());
    if let Err(e) = &outcome {
        log::warn!("{} = {value} failed: {e}", spec.axis);
    }
    SweepRow {
        axis: spec.axis,
        value: value.to_string(),
        outcome,
    }
}

/// Runs every grid point in order. Failed points become failed rows.
pub fn cmd_sweep(spec: &SweepSpec, images: &[LabeledImage]) -> Vec<SweepRow> {
    spec.grid
        .iter()
        .map(|v| {
            let row = sweep_point(spec, v, images);
            log::info!("{} = {v}: {:?}", spec.axis, row.outcome);
            row
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        match &r.outcome {
            Ok(m) => writeln!(
                out,
                "{},{},ok,{},{},{},{},{},",
                r.axis,
                r.value,
                m.descriptor_length,
                opt(m.recall_at_target),
                opt(m.recall),
                m.precision,
                m.fppi
            )?,
            Err(e) => writeln!(out, "{},{},failed,,,,,,\"{}\"", r.axis, r.value, e.replace('"', "'"))?,
        }
    }
    Ok(())
}
