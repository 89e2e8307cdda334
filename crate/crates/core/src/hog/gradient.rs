use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imaging::{GrayImage, MIN_GRADIENT_SIDE};

/// Per-pixel central differences with magnitude and unsigned orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Radians in [0, pi).
    pub orientation: Vec<f64>,
}

impl GradientField {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Orientation of `(dx, dy)` folded into [0, pi).
///
/// The vector is canonicalized into the upper half plane before `atan2`, so
/// `(dx, dy)` and `(-dx, -dy)` give bit-identical angles.
#[inline]
pub fn unsigned_orientation(dx: f64, dy: f64) -> f64 {
    let (dx, dy) = if dy < 0.0 || (dy == 0.0 && dx < 0.0) {
        (-dx, -dy)
    } else {
        (dx, dy)
    };
    // +0.0 turns a possible -0.0 from atan2 into +0.0.
    let theta = dy.atan2(dx) + 0.0;
    if theta >= PI {
        0.0
    } else {
        theta
    }
}

/// Hard assignment of an orientation in [0, pi) to one of `num_bins` bins.
#[inline]
pub fn bin_index(orientation: f64, num_bins: usize) -> usize {
    let b = (orientation * num_bins as f64 / PI).floor();
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(num_bins - 1)
    }
}

/// Central differences `I(x+1,y) - I(x-1,y)` and `I(x,y+1) - I(x,y-1)`.
/// Pixels on the outer border take the gradient of their nearest interior
/// neighbor.
pub fn compute_gradients(img: &GrayImage) -> Result<GradientField> {
    let (w, h) = (img.width(), img.height());
    if w < MIN_GRADIENT_SIDE || h < MIN_GRADIENT_SIDE {
        return Err(Error::Dimension(format!(
            "gradients need at least a {MIN_GRADIENT_SIDE}x{MIN_GRADIENT_SIDE} image, got {w}x{h}"
        )));
    }
    let n = w * h;
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    let px = img.data();
    for y in 1..h - 1 {
        let row = y * w;
        for x in 1..w - 1 {
            let i = row + x;
            dx[i] = px[i + 1] - px[i - 1];
            dy[i] = px[i + w] - px[i - w];
        }
    }
    for y in 0..h {
        let sy = y.clamp(1, h - 2);
        for x in 0..w {
            if y == sy && (1..w - 1).contains(&x) {
                continue;
            }
            let sx = x.clamp(1, w - 2);
            let (dst, src) = (y * w + x, sy * w + sx);
            dx[dst] = dx[src];
            dy[dst] = dy[src];
        }
    }
    let magnitude = dx
        .iter()
        .zip(&dy)
        .map(|(&gx, &gy)| (gx * gx + gy * gy).sqrt())
        .collect();
    let orientation = dx
        .iter()
        .zip(&dy)
        .map(|(&gx, &gy)| unsigned_orientation(gx, gy))
        .collect();
    Ok(GradientField {
        width: w,
        height: h,
        dx,
        dy,
        magnitude,
        orientation,
    })
}
