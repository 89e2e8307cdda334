//! Multiscale sliding-window scan, coordinate mapping, and duplicate
//! suppression.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::match_pair;
use crate::hog::{build_integral_histogram, compute_gradients, DescriptorLayout, HogConfig, IntegralOrientationHistogram};
use crate::imaging::{build_pyramid, GrayImage, PyramidConfig, PyramidLevel, WindowSize};
use crate::svm::{dot, LinearModel};

/// Axis-aligned rectangle in pixels, treated as the half-open real region
/// `[x, x + w) x [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn inside(&self, width: f64, height: f64) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.right() <= width && self.bottom() <= height
    }

    /// Intersection with `[0, width) x [0, height)`; `None` if empty.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoundingBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > x0 && y1 > y0).then(|| BoundingBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub level_index: usize,
}

/// Descending score, then `(level, y, x)` ascending.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.level_index.cmp(&b.level_index))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
}

/// Background context added on each side of the plate core. Negative
/// values crop into the plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Padding {
    pub x: i32,
    pub y: i32,
}

impl Padding {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

impl std::fmt::Display for Padding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanConfig {
    pub window: WindowSize,
    /// Pixels between adjacent window placements at every level.
    pub stride: usize,
    pub pad: Padding,
    pub pyramid: PyramidConfig,
    /// Suppression threshold on the pairwise match m_p.
    pub nms_overlap: f64,
}

pub const DEFAULT_CORE: WindowSize = WindowSize::new(90, 30);

impl Default for ScanConfig {
    fn default() -> Self {
        Self::with_core(DEFAULT_CORE, Padding::new(9, 3)).expect("default geometry is valid")
    }
}

impl ScanConfig {
    /// Window = core plate box grown by `pad` on every side.
    pub fn with_core(core: WindowSize, pad: Padding) -> Result<Self> {
        let w = core.width as i64 + 2 * pad.x as i64;
        let h = core.height as i64 + 2 * pad.y as i64;
        if w <= 0 || h <= 0 {
            return Err(Error::Config(format!(
                "padding {pad} leaves no window around a {core} core"
            )));
        }
        Ok(Self {
            window: WindowSize::new(w as usize, h as usize),
            stride: 9,
            pad,
            pyramid: PyramidConfig::default(),
            nms_overlap: 0.3,
        })
    }

    pub fn core(&self) -> WindowSize {
        WindowSize::new(
            (self.window.width as i64 - 2 * self.pad.x as i64).max(0) as usize,
            (self.window.height as i64 - 2 * self.pad.y as i64).max(0) as usize,
        )
    }

    pub fn validate(&self, hog: &HogConfig) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        let core = self.core();
        if core.width == 0 || core.height == 0 {
            return Err(Error::Config(format!(
                "padding {} consumes the whole {} window",
                self.pad, self.window
            )));
        }
        if !(0.0..=1.0).contains(&self.nms_overlap) {
            return Err(Error::Config(format!(
                "nms overlap must lie in [0, 1], got {}",
                self.nms_overlap
            )));
        }
        self.pyramid.validate()?;
        hog.validate()?;
        hog.cell_grid(self.window)?;
        hog.block_grid(self.window)?;
        Ok(())
    }
}

/// Number of stride-aligned placements of `window` in a `width x height` raster.
pub fn window_count(width: usize, height: usize, window: WindowSize, stride: usize) -> usize {
    if width < window.width || height < window.height {
        return 0;
    }
    ((width - window.width) / stride + 1) * ((height - window.height) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredWindow {
    /// Top-left corner in the level's own pixel frame.
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

pub fn level_histogram(image: &GrayImage, num_bins: usize) -> Result<IntegralOrientationHistogram> {
    Ok(build_integral_histogram(&compute_gradients(image)?, num_bins))
}

/// Scores every stride-aligned window of one raster, keeping those with
/// `score >= threshold`. Also returns the number of windows scored.
pub fn score_windows(
    ih: &IntegralOrientationHistogram,
    layout: &DescriptorLayout,
    model: &LinearModel,
    stride: usize,
    threshold: f64,
) -> (Vec<ScoredWindow>, usize) {
    let window = layout.window();
    if ih.width() < window.width || ih.height() < window.height {
        return (Vec::new(), 0);
    }
    let ys: Vec<usize> = (0..=ih.height() - window.height).step_by(stride).collect();
    let per_row: Vec<(Vec<ScoredWindow>, usize)> = ys
        .par_iter()
        .map_init(
            || (layout.new_scratch(), vec![0.0; layout.len()]),
            |(scratch, desc), &y| {
                let mut hits = Vec::new();
                let mut n = 0;
                for x in (0..=ih.width() - window.width).step_by(stride) {
                    layout.extract_into(ih, x, y, scratch, desc);
                    let score = dot(&model.weights, desc) + model.bias;
                    n += 1;
                    if score >= threshold {
                        hits.push(ScoredWindow { x, y, score });
                    }
                }
                (hits, n)
            },
        )
        .collect();
    let total = per_row.iter().map(|(_, n)| n).sum();
    (per_row.into_iter().flat_map(|(h, _)| h).collect(), total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelScan {
    pub level_index: usize,
    pub scale: f64,
    pub width: usize,
    pub height: usize,
    pub windows_evaluated: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanResult {
    pub detections: Vec<Detection>,
    pub levels: Vec<LevelScan>,
    pub warnings: Vec<String>,
}

impl ScanResult {
    pub fn windows_evaluated(&self) -> usize {
        self.levels.iter().map(|l| l.windows_evaluated).sum()
    }
}

fn check_model(model: &LinearModel, layout: &DescriptorLayout) -> Result<()> {
    if model.weights.len() != layout.len() {
        return Err(Error::LengthMismatch {
            expected: layout.len(),
            actual: model.weights.len(),
        });
    }
    Ok(())
}

/// Full multiscale scan using the model's own threshold.
pub fn scan(img: &GrayImage, model: &LinearModel, hog: &HogConfig, cfg: &ScanConfig) -> Result<ScanResult> {
    scan_at(img, model, hog, cfg, model.threshold)
}

/// Full multiscale scan keeping windows with `score >= threshold`. Output
/// boxes are padded windows in original-image coordinates, sorted by
/// [`detection_order`].
pub fn scan_at(
    img: &GrayImage,
    model: &LinearModel,
    hog: &HogConfig,
    cfg: &ScanConfig,
    threshold: f64,
) -> Result<ScanResult> {
    cfg.validate(hog)?;
    let layout = DescriptorLayout::new(cfg.window, *hog)?;
    check_model(model, &layout)?;
    let pyramid = match build_pyramid(img, &cfg.pyramid, cfg.window) {
        Ok(p) => p,
        Err(Error::Dimension(msg)) => {
            log::warn!("{msg}");
            return Ok(ScanResult {
                warnings: vec![msg],
                ..ScanResult::default()
            });
        }
        Err(e) => return Err(e),
    };
    let (iw, ih) = (img.width() as f64, img.height() as f64);
    let per_level: Vec<(LevelScan, Vec<Detection>)> = pyramid
        .levels
        .par_iter()
        .map(|level| {
            let hist = level_histogram(&level.image, hog.num_bins)?;
            let (hits, n) = score_windows(&hist, &layout, model, cfg.stride, threshold);
            let dets = hits
                .into_iter()
                .filter_map(|w| {
                    let b = BoundingBox::new(
                        w.x as f64,
                        w.y as f64,
                        cfg.window.width as f64,
                        cfg.window.height as f64,
                    );
                    map_to_original(b, level).clip(iw, ih).map(|bbox| Detection {
                        bbox,
                        score: w.score,
                        level_index: level.level_index,
                    })
                })
                .collect();
            Ok((
                LevelScan {
                    level_index: level.level_index,
                    scale: level.scale,
                    width: level.image.width(),
                    height: level.image.height(),
                    windows_evaluated: n,
                },
                dets,
            ))
        })
        .collect::<Result<_>>()?;
    let mut levels = Vec::with_capacity(per_level.len());
    let mut detections = Vec::new();
    for (l, d) in per_level {
        levels.push(l);
        detections.extend(d);
    }
    detections.sort_by(detection_order);
    let warnings = pyramid
        .dropped
        .iter()
        .map(|d| format!("level {} ({}x{}) dropped: smaller than the window", d.level_index, d.width, d.height))
        .collect();
    Ok(ScanResult {
        detections,
        levels,
        warnings,
    })
}

/// Greedy suppression over detections sorted by descending score: each
/// accepted detection removes every later one overlapping it by more than
/// `overlap`.
pub fn non_max_suppression(dets: &[Detection], overlap: f64) -> Vec<Detection> {
    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for i in 0..dets.len() {
        if suppressed[i] {
            continue;
        }
        kept.push(dets[i]);
        for j in i + 1..dets.len() {
            if !suppressed[j] && match_pair(&dets[i].bbox, &dets[j].bbox) > overlap {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Scales a level-frame box into original-image coordinates.
pub fn map_to_original(b: BoundingBox, level: &PyramidLevel) -> BoundingBox {
    scale_box(b, level.scale)
}

pub fn scale_box(b: BoundingBox, scale: f64) -> BoundingBox {
    BoundingBox::new(
        (b.x * scale).round(),
        (b.y * scale).round(),
        (b.w * scale).round(),
        (b.h * scale).round(),
    )
}

/// Removes the scale-adjusted background padding so the box covers the
/// plate core only. Negative padding grows the box.
pub fn strip_padding(b: BoundingBox, pad: Padding, scale: f64) -> Result<BoundingBox> {
    let px = (f64::from(pad.x) * scale).round();
    let py = (f64::from(pad.y) * scale).round();
    let (w, h) = (b.w - 2.0 * px, b.h - 2.0 * py);
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::Dimension(format!(
            "{}x{} box cannot lose {px}x{py} px of padding per side",
            b.w, b.h
        )));
    }
    Ok(BoundingBox::new(b.x + px, b.y + py, w, h))
}

/// Scan, suppress duplicates, strip padding, clip to the image. This is the
/// list reported to users and evaluation.
pub fn detect(img: &GrayImage, model: &LinearModel, hog: &HogConfig, cfg: &ScanConfig) -> Result<Vec<Detection>> {
    detect_at(img, model, hog, cfg, model.threshold)
}

pub fn detect_at(
    img: &GrayImage,
    model: &LinearModel,
    hog: &HogConfig,
    cfg: &ScanConfig,
    threshold: f64,
) -> Result<Vec<Detection>> {
    let raw = scan_at(img, model, hog, cfg, threshold)?;
    let kept = non_max_suppression(&raw.detections, cfg.nms_overlap);
    finalize(&kept, img, cfg)
}

fn finalize(dets: &[Detection], img: &GrayImage, cfg: &ScanConfig) -> Result<Vec<Detection>> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut out = Vec::with_capacity(dets.len());
    for d in dets {
        let scale = cfg.pyramid.scale_of(d.level_index);
        let core = strip_padding(d.bbox, cfg.pad, scale)?;
        if let Some(bbox) = core.clip(w, h) {
            out.push(Detection { bbox, ..*d });
        }
    }
    Ok(out)
}

/// One row of the detection CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub detection: Detection,
}

pub const DETECTION_CSV_HEADER: [&str; 7] = ["image_id", "x", "y", "w", "h", "score", "level"];

pub fn write_detections_csv<W: Write>(out: W, records: &[DetectionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::Csv {
        path: "<output>".into(),
        message: e.to_string(),
    };
    w.write_record(DETECTION_CSV_HEADER).map_err(wrap)?;
    for r in records {
        let d = &r.detection;
        w.write_record([
            r.image_id.clone(),
            d.bbox.x.to_string(),
            d.bbox.y.to_string(),
            d.bbox.w.to_string(),
            d.bbox.h.to_string(),
            d.score.to_string(),
            d.level_index.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn read_detections_csv<R: Read>(input: R, origin: &Path) -> Result<Vec<DetectionRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let err = |line: u64, message: String| Error::Csv {
        path: origin.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.iter().map(str::trim).ne(DETECTION_CSV_HEADER) {
        return Err(err(1, format!("expected header {}", DETECTION_CSV_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| err(line, format!("{}: {e}", DETECTION_CSV_HEADER[k])))
        };
        let bbox = BoundingBox::new(num(1)?, num(2)?, num(3)?, num(4)?);
        if !bbox.is_valid() {
            return Err(err(line, "box must have positive extent".into()));
        }
        let level_index = rec[6]
            .trim()
            .parse::<usize>()
            .map_err(|e| err(line, format!("level: {e}")))?;
        out.push(DetectionRecord {
            image_id: rec[0].to_string(),
            detection: Detection {
                bbox,
                score: num(5)?,
                level_index,
            },
        });
    }
    Ok(out)
}

pub fn read_detections_file(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_detections_csv(std::io::BufReader::new(f), path)
}
