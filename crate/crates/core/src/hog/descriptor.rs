use super::integral::{IntegralOrientationHistogram, PixelRect};
use super::{BlockNorm, HogConfig};
use crate::error::{Error, Result};
use crate::imaging::WindowSize;

/// Block-normalized HOG feature vector of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    pub values: Vec<f64>,
    pub config: HogConfig,
    pub window: WindowSize,
}

/// Precomputed cell/block geometry for repeated extraction at a fixed
/// window size. Scanning reuses one layout and one scratch buffer per
/// thread.
#[derive(Debug, Clone)]
pub struct DescriptorLayout {
    config: HogConfig,
    window: WindowSize,
    cells_x: usize,
    cells_y: usize,
    blocks_x: usize,
    blocks_y: usize,
    len: usize,
}

impl DescriptorLayout {
    pub fn new(window: WindowSize, config: HogConfig) -> Result<Self> {
        config.validate()?;
        let (cells_x, cells_y) = config.cell_grid(window)?;
        let (blocks_x, blocks_y) = config.block_grid(window)?;
        Ok(Self {
            config,
            window,
            cells_x,
            cells_y,
            blocks_x,
            blocks_y,
            len: blocks_x * blocks_y * config.block_len(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn window(&self) -> WindowSize {
        self.window
    }

    pub fn config(&self) -> &HogConfig {
        &self.config
    }

    /// Length of the per-window cell-histogram scratch buffer.
    pub fn scratch_len(&self) -> usize {
        self.cells_x * self.cells_y * self.config.num_bins
    }

    pub fn new_scratch(&self) -> Vec<f64> {
        vec![0.0; self.scratch_len()]
    }

    /// Writes the descriptor of the window whose top-left corner is
    /// `(x0, y0)` into `out`. The window must lie inside `ih`.
    pub fn extract_into(
        &self,
        ih: &IntegralOrientationHistogram,
        x0: usize,
        y0: usize,
        scratch: &mut [f64],
        out: &mut [f64],
    ) {
        let cfg = &self.config;
        let nb = cfg.num_bins;
        let cs = cfg.cell_size;
        debug_assert_eq!(ih.num_bins(), nb);
        debug_assert_eq!(out.len(), self.len);
        debug_assert!(ih.contains(PixelRect::new(x0, y0, self.window.width, self.window.height)));

        for cy in 0..self.cells_y {
            for cx in 0..self.cells_x {
                let o = (cy * self.cells_x + cx) * nb;
                ih.add_rect_unchecked(
                    PixelRect::new(x0 + cx * cs, y0 + cy * cs, cs, cs),
                    &mut scratch[o..o + nb],
                );
            }
        }

        let bs = cfg.block_size;
        let row_len = bs * nb;
        let block_len = cfg.block_len();
        let mut k = 0;
        for by in 0..self.blocks_y {
            for bx in 0..self.blocks_x {
                let block = &mut out[k..k + block_len];
                let (c0x, c0y) = (bx * cfg.block_stride, by * cfg.block_stride);
                for j in 0..bs {
                    let src = ((c0y + j) * self.cells_x + c0x) * nb;
                    block[j * row_len..(j + 1) * row_len]
                        .copy_from_slice(&scratch[src..src + row_len]);
                }
                normalize_block(block, cfg.norm, cfg.epsilon);
                k += block_len;
            }
        }
    }
}

#[inline]
fn normalize_block(block: &mut [f64], norm: BlockNorm, epsilon: f64) {
    let denom = match norm {
        BlockNorm::L1 => block.iter().map(|v| v.abs()).sum::<f64>() + epsilon,
        BlockNorm::L2 => (block.iter().map(|v| v * v).sum::<f64>() + epsilon * epsilon).sqrt(),
    };
    for v in block.iter_mut() {
        *v /= denom;
    }
}

/// Descriptor of `window` read from the integral histogram. The window size
/// must be a whole number of cells and the window must lie in the raster.
pub fn extract_descriptor(
    ih: &IntegralOrientationHistogram,
    window: PixelRect,
    config: &HogConfig,
) -> Result<HogDescriptor> {
    let size = WindowSize::new(window.width, window.height);
    let layout = DescriptorLayout::new(size, *config)?;
    if ih.num_bins() != config.num_bins {
        return Err(Error::Config(format!(
            "histogram has {} bins, config wants {}",
            ih.num_bins(),
            config.num_bins
        )));
    }
    if !ih.contains(window) {
        return Err(Error::OutOfBounds(format!(
            "window {window} in a {}x{} histogram",
            ih.width(),
            ih.height()
        )));
    }
    let mut scratch = layout.new_scratch();
    let mut values = vec![0.0; layout.len()];
    layout.extract_into(ih, window.x, window.y, &mut scratch, &mut values);
    Ok(HogDescriptor {
        values,
        config: *config,
        window: size,
    })
}
