//! Grayscale rasters, resampling, and the scale ladder used by the
//! multiscale scan.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Smallest raster the central-difference gradient can handle.
pub const MIN_GRADIENT_SIDE: usize = 3;

/// Width and height of a detection window, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowSize {
    pub width: usize,
    pub height: usize,
}

impl WindowSize {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }
}

impl std::fmt::Display for WindowSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Single-channel intensity raster, row-major, values nominally in [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "image must be non-empty, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} image needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn from_luma8(img: &image::GrayImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::new(
            w as usize,
            h as usize,
            img.as_raw().iter().map(|&v| f64::from(v)).collect(),
        )
    }

    /// Quantizes to 8 bits (round to nearest, clamp to [0, 255]).
    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self
            .data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    /// Bilinear sample with coordinates clamped to the raster.
    #[inline]
    pub fn sample_bilinear(&self, sx: f64, sy: f64) -> f64 {
        let (x0, x1, fx) = interp_axis(sx, self.width);
        let (y0, y1, fy) = interp_axis(sy, self.height);
        let top = lerp(self.get(x0, y0), self.get(x1, y0), fx);
        let bottom = lerp(self.get(x0, y1), self.get(x1, y1), fx);
        lerp(top, bottom, fy)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

#[inline]
fn interp_axis(s: f64, len: usize) -> (usize, usize, f64) {
    let max = (len - 1) as f64;
    let s = s.clamp(0.0, max);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - i0 as f64)
}

/// BT.601 luma of an 8-bit RGB raster.
pub fn to_grayscale(rgb: &image::RgbImage) -> Result<GrayImage> {
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Dimension(format!(
            "cannot convert an empty {w}x{h} image"
        )));
    }
    let data = rgb
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0;
            0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)
        })
        .collect();
    GrayImage::new(w as usize, h as usize, data)
}

/// Reads a PNG or JPEG file. Single-channel 8-bit files are taken as-is,
/// anything else goes through [`to_grayscale`].
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let dynamic = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match dynamic {
        image::DynamicImage::ImageLuma8(gray) => GrayImage::from_luma8(&gray),
        other => to_grayscale(&other.to_rgb8()),
    }
}

pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.to_luma8()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Bilinear resize using pixel-center alignment.
pub fn resize(img: &GrayImage, new_width: usize, new_height: usize) -> Result<GrayImage> {
    if new_width < MIN_GRADIENT_SIDE || new_height < MIN_GRADIENT_SIDE {
        return Err(Error::Dimension(format!(
            "resize target {new_width}x{new_height} is below the {MIN_GRADIENT_SIDE}x{MIN_GRADIENT_SIDE} minimum"
        )));
    }
    if new_width == img.width && new_height == img.height {
        return Ok(img.clone());
    }
    let (sw, sh) = (img.width as f64, img.height as f64);
    let (dw, dh) = (new_width as f64, new_height as f64);
    let xs: Vec<f64> = (0..new_width)
        .map(|x| ((x as f64 + 0.5) * sw) / dw - 0.5)
        .collect();
    let mut data = Vec::with_capacity(new_width * new_height);
    for y in 0..new_height {
        let sy = ((y as f64 + 0.5) * sh) / dh - 0.5;
        data.extend(xs.iter().map(|&sx| img.sample_bilinear(sx, sy)));
    }
    GrayImage::new(new_width, new_height, data)
}

/// Resamples the source rectangle `[x0, x0 + width) x [y0, y0 + height)`
/// (real-valued, may extend past the raster) to `out_width x out_height`,
/// using the same pixel-center convention as [`resize`].
pub fn resample_region(
    img: &GrayImage,
    x0: f64,
    y0: f64,
    width: f64,
    height: f64,
    out_width: usize,
    out_height: usize,
) -> Result<GrayImage> {
    if out_width == 0 || out_height == 0 || !(width > 0.0) || !(height > 0.0) {
        return Err(Error::Dimension(format!(
            "cannot resample a {width}x{height} region into {out_width}x{out_height}"
        )));
    }
    let mut data = Vec::with_capacity(out_width * out_height);
    for j in 0..out_height {
        let sy = y0 + ((j as f64 + 0.5) * height) / out_height as f64 - 0.5;
        for i in 0..out_width {
            let sx = x0 + ((i as f64 + 0.5) * width) / out_width as f64 - 0.5;
            data.push(img.sample_bilinear(sx, sy));
        }
    }
    GrayImage::new(out_width, out_height, data)
}

/// Geometry of the scale ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidConfig {
    /// Ratio between consecutive levels, > 1.
    pub step: f64,
    pub num_levels: usize,
    /// Index of the level at scale 1.0; levels below it are upscaled.
    /// `None` uses [`PyramidConfig::default_anchor`].
    pub anchor: Option<usize>,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            step: 1.10,
            num_levels: 11,
            anchor: None,
        }
    }
}

impl PyramidConfig {
    /// Roughly 30% of the ladder sits above native resolution: 3 upscaled
    /// levels out of 11, 1 out of 5, none for a single level.
    pub fn default_anchor(num_levels: usize) -> usize {
        (num_levels.saturating_sub(1) * 3 + 5) / 10
    }

    pub fn anchor_level(&self) -> usize {
        self.anchor
            .unwrap_or_else(|| Self::default_anchor(self.num_levels))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 1.0) || !self.step.is_finite() {
            return Err(Error::Config(format!(
                "pyramid step must be > 1, got {}",
                self.step
            )));
        }
        if self.num_levels == 0 {
            return Err(Error::Config("pyramid needs at least one level".into()));
        }
        if self.anchor_level() >= self.num_levels {
            return Err(Error::Config(format!(
                "anchor level {} outside a {}-level ladder",
                self.anchor_level(),
                self.num_levels
            )));
        }
        Ok(())
    }

    /// Ratio of original size to level size for ladder position `k`.
    pub fn scale_of(&self, k: usize) -> f64 {
        self.step.powi(k as i32 - self.anchor_level() as i32)
    }

    pub fn level_dimensions(&self, width: usize, height: usize, k: usize) -> (usize, usize) {
        let s = self.scale_of(k);
        (
            (width as f64 / s).floor() as usize,
            (height as f64 / s).floor() as usize,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub image: GrayImage,
    pub scale: f64,
    pub level_index: usize,
}

impl PyramidLevel {
    pub fn to_original(&self, v: f64) -> f64 {
        v * self.scale
    }

    pub fn from_original(&self, v: f64) -> f64 {
        v / self.scale
    }
}

/// A ladder position skipped because its raster could not hold the window.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedLevel {
    pub level_index: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<PyramidLevel>,
    pub step: f64,
    pub dropped: Vec<DroppedLevel>,
}

pub fn build_pyramid(img: &GrayImage, cfg: &PyramidConfig, window: WindowSize) -> Result<Pyramid> {
    cfg.validate()?;
    let dims: Vec<(usize, (usize, usize))> = (0..cfg.num_levels)
        .map(|k| (k, cfg.level_dimensions(img.width, img.height, k)))
        .collect();
    let (fits, too_small): (Vec<_>, Vec<_>) = dims.into_iter().partition(|&(_, (w, h))| {
        w >= window.width.max(MIN_GRADIENT_SIDE) && h >= window.height.max(MIN_GRADIENT_SIDE)
    });
    if fits.is_empty() {
        let largest = (0..cfg.num_levels)
            .map(|k| cfg.level_dimensions(img.width, img.height, k))
            .max_by_key(|&(w, h)| w * h)
            .unwrap_or((0, 0));
        return Err(Error::Dimension(format!(
            "no pyramid level fits the {window} window: image {}x{}, largest level {}x{}",
            img.width, img.height, largest.0, largest.1
        )));
    }
    let dropped: Vec<DroppedLevel> = too_small
        .into_iter()
        .map(|(k, (w, h))| DroppedLevel {
            level_index: k,
            width: w,
            height: h,
        })
        .collect();
    for d in &dropped {
        log::debug!(
            "pyramid level {} ({}x{}) cannot hold the {window} window, dropped",
            d.level_index,
            d.width,
            d.height
        );
    }
    let levels = fits
        .into_par_iter()
        .map(|(k, (w, h))| {
            Ok(PyramidLevel {
                image: resize(img, w, h)?,
                scale: cfg.scale_of(k),
                level_index: k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pyramid {
        levels,
        step: cfg.step,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_weights() {
        let mut rgb = image::RgbImage::new(3, 1);
        rgb.put_pixel(0, 0, image::Rgb([255, 255, 255]));
        rgb.put_pixel(1, 0, image::Rgb([0, 0, 0]));
        rgb.put_pixel(2, 0, image::Rgb([255, 0, 0]));
        let g = to_grayscale(&rgb).unwrap();
        assert!((g.get(0, 0) - 255.0).abs() < 1e-9);
        assert_eq!(g.get(1, 0), 0.0);
        assert!((g.get(2, 0) - 76.245).abs() < 1e-9);
    }

    #[test]
    fn grayscale_rejects_empty() {
        let rgb = image::RgbImage::new(0, 4);
        assert!(matches!(to_grayscale(&rgb), Err(Error::Dimension(_))));
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 31 + y * 17) as f64 * 0.37).unwrap();
        assert_eq!(resize(&img, 7, 5).unwrap(), img);
    }

    #[test]
    fn resize_preserves_constants() {
        let img = GrayImage::filled(13, 9, 0.1).unwrap();
        for (w, h) in [(3, 3), (20, 4), (100, 77)] {
            let r = resize(&img, w, h).unwrap();
            assert!(r.data().iter().all(|&v| v == 0.1));
        }
    }

    #[test]
    fn resize_checkerboard_center() {
        let img = GrayImage::new(2, 2, vec![0.0, 255.0, 255.0, 0.0]).unwrap();
        let r = resize(&img, 3, 3).unwrap();
        assert!((r.get(1, 1) - 127.5).abs() < 1e-9);
    }

    #[test]
    fn resize_rejects_tiny_targets() {
        let img = GrayImage::filled(10, 10, 1.0).unwrap();
        assert!(resize(&img, 2, 10).is_err());
    }

    #[test]
    fn pyramid_level_dimensions() {
        let cfg = PyramidConfig {
            step: 1.1,
            num_levels: 2,
            anchor: Some(0),
        };
        assert_eq!(cfg.level_dimensions(800, 600, 1), (727, 545));
    }

    #[test]
    fn default_ladder_has_three_upscaled_levels() {
        let cfg = PyramidConfig::default();
        assert_eq!(cfg.anchor_level(), 3);
        assert_eq!(PyramidConfig::default_anchor(1), 0);
        assert_eq!(PyramidConfig::default_anchor(5), 1);
        assert!(cfg.scale_of(0) < 1.0);
        assert_eq!(cfg.scale_of(3), 1.0);
    }

    #[test]
    fn single_level_is_the_original() {
        let img = GrayImage::from_fn(200, 100, |x, y| (x ^ y) as f64).unwrap();
        let cfg = PyramidConfig {
            step: 1.1,
            num_levels: 1,
            anchor: None,
        };
        let p = build_pyramid(&img, &cfg, WindowSize::new(108, 36)).unwrap();
        assert_eq!(p.levels.len(), 1);
        assert_eq!(p.levels[0].scale, 1.0);
        assert_eq!(p.levels[0].image, img);
    }

    #[test]
    fn pyramid_errors_when_window_never_fits() {
        let img = GrayImage::filled(100, 40, 0.0).unwrap();
        let cfg = PyramidConfig {
            step: 1.1,
            num_levels: 11,
            anchor: Some(0),
        };
        let err = build_pyramid(&img, &cfg, WindowSize::new(108, 36)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("108x36") && msg.contains("100x40"), "{msg}");
    }

    #[test]
    fn pyramid_drops_small_levels_and_orders_by_scale() {
        let img = GrayImage::filled(130, 50, 3.0).unwrap();
        let p = build_pyramid(&img, &PyramidConfig::default(), WindowSize::new(108, 36)).unwrap();
        assert!(!p.dropped.is_empty());
        assert_eq!(p.levels.len() + p.dropped.len(), 11);
        for pair in p.levels.windows(2) {
            assert!(pair[0].scale < pair[1].scale);
            assert!(pair[0].image.width() > pair[1].image.width());
            assert!(pair[0].level_index < pair[1].level_index);
        }
        for level in &p.levels {
            assert!(level.image.width() >= 108 && level.image.height() >= 36);
        }
    }

    #[test]
    fn coordinate_round_trip_within_a_pixel() {
        let cfg = PyramidConfig::default();
        for k in 0..cfg.num_levels {
            let (w, _) = cfg.level_dimensions(800, 600, k);
            let s = cfg.scale_of(k);
            for x in [0usize, 17, 301, w.saturating_sub(1)] {
                let back = ((x as f64 * s).round() / s).round();
                assert!((back - x as f64).abs() <= 1.0);
            }
        }
    }
}
