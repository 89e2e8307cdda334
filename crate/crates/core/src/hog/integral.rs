use super::gradient::{bin_index, GradientField};
use crate::error::{Error, Result};

/// Integer pixel rectangle `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }
}

impl std::fmt::Display for PixelRect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}x{})", self.x, self.y, self.width, self.height)
    }
}

/// Cumulative per-bin magnitude tables. Entry `(x, y)` of bin `b` holds the
/// magnitude voted into `b` over `[0, x) x [0, y)`.
///
/// Bins are interleaved: the `num_bins` values of one corner are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralOrientationHistogram {
    width: usize,
    height: usize,
    num_bins: usize,
    tables: Vec<f64>,
}

impl IntegralOrientationHistogram {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    #[inline]
    fn offset(&self, x: usize, y: usize) -> usize {
        (y * (self.width + 1) + x) * self.num_bins
    }

    /// Table value of `bin` at corner `(x, y)`, with `x <= width`, `y <= height`.
    #[inline]
    pub fn at(&self, bin: usize, x: usize, y: usize) -> f64 {
        self.tables[self.offset(x, y) + bin]
    }

    /// Accumulates the histogram of `rect` into `out` without bounds checks
    /// beyond slice indexing.
    #[inline]
    pub(crate) fn add_rect_unchecked(&self, rect: PixelRect, out: &mut [f64]) {
        let nb = self.num_bins;
        let a = self.offset(rect.x, rect.y);
        let b = self.offset(rect.right(), rect.y);
        let c = self.offset(rect.x, rect.bottom());
        let d = self.offset(rect.right(), rect.bottom());
        let t = &self.tables;
        for (bin, o) in out.iter_mut().enumerate().take(nb) {
            *o = t[d + bin] - t[c + bin] - t[b + bin] + t[a + bin];
        }
    }

    pub fn contains(&self, rect: PixelRect) -> bool {
        rect.right() <= self.width && rect.bottom() <= self.height
    }
}

pub fn build_integral_histogram(
    grad: &GradientField,
    num_bins: usize,
) -> IntegralOrientationHistogram {
    let (w, h) = (grad.width, grad.height);
    let stride = (w + 1) * num_bins;
    let mut tables = vec![0.0; stride * (h + 1)];
    let mut row_sum = vec![0.0; num_bins];
    for y in 0..h {
        row_sum.iter_mut().for_each(|v| *v = 0.0);
        let (above, below) = tables.split_at_mut((y + 1) * stride);
        let above = &above[y * stride..];
        let below = &mut below[..stride];
        for x in 0..w {
            let i = grad.index(x, y);
            let bin = bin_index(grad.orientation[i], num_bins);
            row_sum[bin] += grad.magnitude[i];
            let base = (x + 1) * num_bins;
            for b in 0..num_bins {
                below[base + b] = above[base + b] + row_sum[b];
            }
        }
    }
    IntegralOrientationHistogram {
        width: w,
        height: h,
        num_bins,
        tables,
    }
}

/// Per-bin magnitude totals over `rect` from four corner lookups per bin.
pub fn cell_histogram(ih: &IntegralOrientationHistogram, rect: PixelRect) -> Result<Vec<f64>> {
    if !ih.contains(rect) {
        return Err(Error::OutOfBounds(format!(
            "{rect} in a {}x{} histogram",
            ih.width, ih.height
        )));
    }
    let mut out = vec![0.0; ih.num_bins];
    if rect.width > 0 && rect.height > 0 {
        ih.add_rect_unchecked(rect, &mut out);
    }
    Ok(out)
}
