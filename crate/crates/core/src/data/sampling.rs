use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detector::{BoundingBox, ScanConfig};
use crate::error::{Error, Result};
use crate::hog::{build_integral_histogram, compute_gradients, DescriptorLayout, HogConfig, IntegralOrientationHistogram};
use crate::imaging::{resample_region, GrayImage, WindowSize};

/// Rejection-sampling attempts per negative before giving up on it.
pub const MAX_ATTEMPTS_PER_NEGATIVE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSample {
    pub boxes: Vec<BoundingBox>,
    /// Set when fewer than the requested count could be placed.
    pub warning: Option<String>,
}

/// Uniformly random window-sized boxes at integer positions with zero
/// intersection against every plate.
pub fn sample_negatives(
    width: usize,
    height: usize,
    plates: &[BoundingBox],
    window: WindowSize,
    count: usize,
    seed: u64,
) -> Result<NegativeSample> {
    if width < window.width || height < window.height {
        return Err(Error::Dimension(format!(
            "{width}x{height} image cannot hold a {window} negative window"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (max_x, max_y) = (width - window.width, height - window.height);
    let mut boxes = Vec::with_capacity(count);
    'outer: for _ in 0..count {
        for _ in 0..MAX_ATTEMPTS_PER_NEGATIVE {
            let x = rng.random_range(0..=max_x);
            let y = rng.random_range(0..=max_y);
            let b = BoundingBox::new(x as f64, y as f64, window.width as f64, window.height as f64);
            if plates.iter().all(|p| p.intersection_area(&b) == 0.0) {
                boxes.push(b);
                continue 'outer;
            }
        }
        break;
    }
    let warning = (boxes.len() < count).then(|| {
        format!(
            "placed {} of {count} negatives; plates leave too little free area",
            boxes.len()
        )
    });
    Ok(NegativeSample { boxes, warning })
}

/// Descriptors of integer-positioned window boxes, read from one integral
/// histogram of the full-resolution image.
pub fn negative_descriptors(
    ih: &IntegralOrientationHistogram,
    layout: &DescriptorLayout,
    boxes: &[BoundingBox],
) -> Vec<Vec<f64>> {
    let mut scratch = layout.new_scratch();
    boxes
        .iter()
        .map(|b| {
            let mut d = vec![0.0; layout.len()];
            layout.extract_into(ih, b.x as usize, b.y as usize, &mut scratch, &mut d);
            d
        })
        .collect()
}

/// Training descriptor for one plate. The plate is scaled so its width
/// fills the window core, the padded context around its center is
/// resampled to the window size, and one extra border pixel is resampled
/// so the window's edge gradients see real neighbours.
pub fn extract_positive(img: &GrayImage, plate: &BoundingBox, hog: &HogConfig, cfg: &ScanConfig) -> Result<Vec<f64>> {
    if !(plate.w > 0.0 && plate.h > 0.0) {
        return Err(Error::Dimension(format!("degenerate plate {}x{}", plate.w, plate.h)));
    }
    let layout = DescriptorLayout::new(cfg.window, *hog)?;
    let scale = cfg.core().width as f64 / plate.w;
    let (ww, wh) = (cfg.window.width as f64, cfg.window.height as f64);
    let (cx, cy) = (plate.x + plate.w / 2.0, plate.y + plate.h / 2.0);
    let (rw, rh) = ((ww + 2.0) / scale, (wh + 2.0) / scale);
    let patch = resample_region(
        img,
        cx - rw / 2.0,
        cy - rh / 2.0,
        rw,
        rh,
        cfg.window.width + 2,
        cfg.window.height + 2,
    )?;
    let ih = build_integral_histogram(&compute_gradients(&patch)?, hog.num_bins);
    let mut out = vec![0.0; layout.len()];
    layout.extract_into(&ih, 1, 1, &mut layout.new_scratch(), &mut out);
    Ok(out)
}
