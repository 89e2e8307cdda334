use std::cmp::Ordering;

use rayon::prelude::*;

use super::LabeledImage;
use crate::detector::{level_histogram, scale_box, score_windows, strip_padding, BoundingBox, ScanConfig};
use crate::error::Result;
use crate::eval::{best_match, MatchThreshold};
use crate::hog::{DescriptorLayout, HogConfig};
use crate::hog::IntegralOrientationHistogram;
use crate::imaging::{resize, GrayImage};
use crate::svm::LinearModel;

/// A window scoring at or above the model threshold whose plate core
/// matches no ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalsePositive {
    pub image_index: usize,
    pub level_index: usize,
    /// Window corner in the level's pixel frame.
    pub x: usize,
    pub y: usize,
    pub score: f64,
    /// Plate core in original coordinates.
    pub core: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardNegative {
    pub source: FalsePositive,
    pub descriptor: Vec<f64>,
}

/// Descending score, then image, level, y, x.
fn hardness_order(a: &FalsePositive, b: &FalsePositive) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.image_index.cmp(&b.image_index))
        .then(a.level_index.cmp(&b.level_index))
        .then(a.y.cmp(&b.y))
        .then(a.x.cmp(&b.x))
}

fn level_raster(img: &GrayImage, cfg: &ScanConfig, k: usize) -> Result<Option<GrayImage>> {
    let (w, h) = cfg.pyramid.level_dimensions(img.width(), img.height(), k);
    if w < cfg.window.width.max(3) || h < cfg.window.height.max(3) {
        return Ok(None);
    }
    resize(img, w, h).map(Some)
}

/// Scans every image with the model's threshold and returns its false
/// positives (before duplicate suppression), hardest first. At most
/// `per_image_limit` are kept per image.
pub fn collect_false_positives(
    model: &LinearModel,
    images: &[LabeledImage],
    hog: &HogConfig,
    cfg: &ScanConfig,
    t: MatchThreshold,
    per_image_limit: usize,
) -> Result<Vec<FalsePositive>> {
    cfg.validate(hog)?;
    let layout = DescriptorLayout::new(cfg.window, *hog)?;
    let per_image: Vec<Vec<FalsePositive>> = images
        .par_iter()
        .enumerate()
        .map(|(image_index, li)| {
            let (iw, ih) = (li.image.width() as f64, li.image.height() as f64);
            let mut found = Vec::new();
            for k in 0..cfg.pyramid.num_levels {
                let Some(level) = level_raster(&li.image, cfg, k)? else {
                    continue;
                };
                let scale = cfg.pyramid.scale_of(k);
                let hist = level_histogram(&level, hog.num_bins)?;
                let (hits, _) = score_windows(&hist, &layout, model, cfg.stride, model.threshold);
                for w in hits {
                    let padded = scale_box(
                        BoundingBox::new(w.x as f64, w.y as f64, cfg.window.width as f64, cfg.window.height as f64),
                        scale,
                    );
                    let Some(core) = strip_padding(padded, cfg.pad, scale)?.clip(iw, ih) else {
                        continue;
                    };
                    if !t.accepts(best_match(&core, &li.plates)) {
                        found.push(FalsePositive {
                            image_index,
                            level_index: k,
                            x: w.x,
                            y: w.y,
                            score: w.score,
                            core,
                        });
                    }
                }
                if found.len() > per_image_limit.max(1).saturating_mul(4) {
                    found.sort_by(hardness_order);
                    found.truncate(per_image_limit);
                }
            }
            found.sort_by(hardness_order);
            found.truncate(per_image_limit);
            Ok(found)
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<FalsePositive> = per_image.into_iter().flatten().collect();
    all.sort_by(hardness_order);
    Ok(all)
}

/// One round of hard-negative mining: the `budget` highest-scoring false
/// positives over the whole set, with their descriptors.
pub fn bootstrap_round(
    model: &LinearModel,
    images: &[LabeledImage],
    hog: &HogConfig,
    cfg: &ScanConfig,
    t: MatchThreshold,
    budget: usize,
) -> Result<Vec<HardNegative>> {
    if budget == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = collect_false_positives(model, images, hog, cfg, t, budget)?;
    chosen.truncate(budget);

    // Second pass: rebuild only the levels that contributed, so memory
    // stays bounded by the budget rather than by the number of candidates.
    let layout = DescriptorLayout::new(cfg.window, *hog)?;
    let mut by_image: Vec<Vec<(usize, FalsePositive)>> = vec![Vec::new(); images.len()];
    for (rank, fp) in chosen.iter().enumerate() {
        by_image[fp.image_index].push((rank, *fp));
    }
    let extracted: Vec<Vec<(usize, HardNegative)>> = by_image
        .into_par_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(i, mut v)| {
            v.sort_by_key(|(_, fp)| fp.level_index);
            let mut out = Vec::with_capacity(v.len());
            let mut scratch = layout.new_scratch();
            let mut current: Option<(usize, IntegralOrientationHistogram)> = None;
            for (rank, fp) in v {
                if current.as_ref().map(|(k, _)| *k) != Some(fp.level_index) {
                    let level = level_raster(&images[i].image, cfg, fp.level_index)?
                        .expect("level held a scored window");
                    current = Some((fp.level_index, level_histogram(&level, hog.num_bins)?));
                }
                let (_, hist) = current.as_ref().expect("set above");
                let mut descriptor = vec![0.0; layout.len()];
                layout.extract_into(hist, fp.x, fp.y, &mut scratch, &mut descriptor);
                out.push((rank, HardNegative { source: fp, descriptor }));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut flat: Vec<(usize, HardNegative)> = extracted.into_iter().flatten().collect();
    flat.sort_by_key(|(rank, _)| *rank);
    Ok(flat.into_iter().map(|(_, h)| h).collect())
}
