//! Histogram-of-oriented-gradients features computed through per-bin
//! integral tables, so every cell histogram costs four lookups per bin.

mod descriptor;
mod gradient;
mod integral;

pub use descriptor::{extract_descriptor, DescriptorLayout, HogDescriptor};
pub use gradient::{bin_index, compute_gradients, GradientField};
pub use integral::{build_integral_histogram, cell_histogram, IntegralOrientationHistogram, PixelRect};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::WindowSize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockNorm {
    /// `v / (|v|_1 + eps)`
    L1,
    /// `v / sqrt(|v|_2^2 + eps^2)`
    L2,
}

impl fmt::Display for BlockNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockNorm::L1 => "l1",
            BlockNorm::L2 => "l2",
        })
    }
}

impl FromStr for BlockNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(BlockNorm::L1),
            "l2" => Ok(BlockNorm::L2),
            other => Err(Error::Config(format!(
                "unknown block norm {other:?}, expected l1 or l2"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HogConfig {
    /// Side of a square cell, in pixels.
    pub cell_size: usize,
    /// Side of a square block, in cells.
    pub block_size: usize,
    /// Offset between adjacent blocks, in cells.
    pub block_stride: usize,
    /// Orientation bins over [0, pi).
    pub num_bins: usize,
    pub norm: BlockNorm,
    pub epsilon: f64,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_size: 4,
            block_size: 2,
            block_stride: 1,
            num_bins: 9,
            norm: BlockNorm::L1,
            epsilon: 1e-3,
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cell_size < 2 {
            return bad(format!("cell size must be >= 2, got {}", self.cell_size));
        }
        if self.block_size < 1 {
            return bad("block size must be >= 1".into());
        }
        if self.block_stride < 1 || self.block_stride > self.block_size {
            return bad(format!(
                "block stride must lie in [1, {}], got {}",
                self.block_size, self.block_stride
            ));
        }
        if self.num_bins < 2 {
            return bad(format!("need at least 2 bins, got {}", self.num_bins));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        Ok(())
    }

    /// Cells along each axis of `window`. Fails if the window is not a whole
    /// number of cells.
    pub fn cell_grid(&self, window: WindowSize) -> Result<(usize, usize)> {
        if !window.width.is_multiple_of(self.cell_size) {
            return Err(Error::Misaligned {
                axis: "width",
                size: window.width,
                cell: self.cell_size,
            });
        }
        if !window.height.is_multiple_of(self.cell_size) {
            return Err(Error::Misaligned {
                axis: "height",
                size: window.height,
                cell: self.cell_size,
            });
        }
        Ok((window.width / self.cell_size, window.height / self.cell_size))
    }

    /// Blocks along each axis of `window`.
    pub fn block_grid(&self, window: WindowSize) -> Result<(usize, usize)> {
        self.validate()?;
        let (cx, cy) = self.cell_grid(window)?;
        if cx < self.block_size || cy < self.block_size {
            return Err(Error::Dimension(format!(
                "window {window} holds {cx}x{cy} cells, fewer than one {b}x{b} block",
                b = self.block_size
            )));
        }
        Ok((
            (cx - self.block_size) / self.block_stride + 1,
            (cy - self.block_size) / self.block_stride + 1,
        ))
    }

    pub fn block_len(&self) -> usize {
        self.block_size * self.block_size * self.num_bins
    }
}

/// Number of features produced for one window.
pub fn descriptor_length(window: WindowSize, cfg: &HogConfig) -> Result<usize> {
    let (bx, by) = cfg.block_grid(window)?;
    Ok(bx * by * cfg.block_len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_window_has_7488_features() {
        let len = descriptor_length(WindowSize::new(108, 36), &HogConfig::default()).unwrap();
        assert_eq!(len, 26 * 8 * 4 * 9);
        assert_eq!(len, 7488);
    }

    #[test]
    fn six_pixel_cells_give_3060() {
        let cfg = HogConfig {
            cell_size: 6,
            ..HogConfig::default()
        };
        assert_eq!(descriptor_length(WindowSize::new(108, 36), &cfg).unwrap(), 3060);
    }

    #[test]
    fn single_block_window() {
        let cfg = HogConfig::default();
        assert_eq!(
            descriptor_length(WindowSize::new(8, 8), &cfg).unwrap(),
            cfg.block_len()
        );
    }

    #[test]
    fn misaligned_window_names_dimension() {
        let cfg = HogConfig::default();
        match descriptor_length(WindowSize::new(90, 36), &cfg) {
            Err(Error::Misaligned { axis, .. }) => assert_eq!(axis, "width"),
            other => panic!("unexpected {other:?}"),
        }
        match descriptor_length(WindowSize::new(108, 30), &cfg) {
            Err(Error::Misaligned { axis, .. }) => assert_eq!(axis, "height"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let base = HogConfig::default();
        assert!(base.validate().is_ok());
        for bad in [
            HogConfig { cell_size: 1, ..base },
            HogConfig { block_size: 0, ..base },
            HogConfig { block_stride: 3, ..base },
            HogConfig { num_bins: 1, ..base },
            HogConfig { epsilon: 0.0, ..base },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn norm_parses() {
        assert_eq!("L1".parse::<BlockNorm>().unwrap(), BlockNorm::L1);
        assert_eq!("l2".parse::<BlockNorm>().unwrap(), BlockNorm::L2);
        assert!("l3".parse::<BlockNorm>().is_err());
    }
}
