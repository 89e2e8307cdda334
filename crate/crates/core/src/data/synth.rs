//! Procedural street-like scenes with plate-like targets.
//!
//! The renderer is versioned: any change to what a given seed produces
//! bumps [`SYNTH_VERSION`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{entry_seed, save_manifest, AnnotatedImage, DatasetManifest, SplitTag};
use crate::detector::BoundingBox;
use crate::error::{Error, Result};
use crate::imaging::{save_png, GrayImage};

pub const SYNTH_VERSION: u32 = 1;

/// Segment masks for digits 0-9, bits a..g = top, upper right, lower right,
/// bottom, lower left, upper left, middle.
const SEGMENTS: [u8; 10] = [
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
];
const GLYPHS_PER_PLATE: usize = 7;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub min_plates: usize,
    pub max_plates: usize,
    pub plate_width_mean: f64,
    pub plate_width_std: f64,
    /// Sampled widths are clamped to `[min, max]`.
    pub plate_width_range: (f64, f64),
    pub aspect_mean: f64,
    pub aspect_std: f64,
    /// Fixed plate boxes (integer coordinates); overrides random placement.
    pub placements: Option<Vec<BoundingBox>>,
    pub max_distractors: usize,
    /// Standard deviation of additive per-pixel noise.
    pub noise_std: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 400,
            height: 300,
            min_plates: 1,
            max_plates: 3,
            plate_width_mean: 99.5,
            plate_width_std: 12.64,
            plate_width_range: (70.0, 135.0),
            aspect_mean: 3.1,
            aspect_std: 0.19,
            placements: None,
            max_distractors: 4,
            noise_std: 6.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 16 || self.height < 16 {
            return bad(format!("scene {}x{} is too small", self.width, self.height));
        }
        if self.min_plates > self.max_plates {
            return bad(format!("min_plates {} > max_plates {}", self.min_plates, self.max_plates));
        }
        let (lo, hi) = self.plate_width_range;
        if !(lo >= 8.0 && lo <= hi) {
            return bad(format!("plate width range {lo}..{hi} is invalid"));
        }
        if hi > self.width as f64 * 0.8 || hi / (self.aspect_mean - 3.0 * self.aspect_std).max(1.0) > self.height as f64 * 0.8 {
            return bad(format!("plates up to {hi} px wide do not fit a {}x{} scene", self.width, self.height));
        }
        if !(self.aspect_mean > 1.0 && self.aspect_std >= 0.0 && self.plate_width_std >= 0.0 && self.noise_std >= 0.0) {
            return bad("plate shape and noise parameters must be positive".into());
        }
        if let Some(p) = &self.placements {
            for b in p {
                let integral = [b.x, b.y, b.w, b.h].iter().all(|v| v.fract() == 0.0);
                if !integral || b.w < 8.0 || b.h < 4.0 || !b.inside(self.width as f64, self.height as f64) {
                    return bad(format!("placement {},{},{},{} is not an integer box inside the scene", b.x, b.y, b.w, b.h));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: GrayImage,
    pub plates: Vec<BoundingBox>,
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, value: f64) {
        let (x0, x1) = (x0.clamp(0, self.w as i64) as usize, x1.clamp(0, self.w as i64) as usize);
        let (y0, y1) = (y0.clamp(0, self.h as i64) as usize, y1.clamp(0, self.h as i64) as usize);
        for y in y0..y1 {
            self.px[y * self.w + x0..y * self.w + x1].fill(value);
        }
    }

    fn shift_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, delta: f64) {
        let (x0, x1) = (x0.clamp(0, self.w as i64) as usize, x1.clamp(0, self.w as i64) as usize);
        let (y0, y1) = (y0.clamp(0, self.h as i64) as usize, y1.clamp(0, self.h as i64) as usize);
        for y in y0..y1 {
            for v in &mut self.px[y * self.w + x0..y * self.w + x1] {
                *v += delta;
            }
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Adds lattice value noise with the given cell size and amplitude.
fn value_noise(c: &mut Canvas, rng: &mut ChaCha8Rng, cell: f64, amplitude: f64) {
    let gw = (c.w as f64 / cell).ceil() as usize + 2;
    let gh = (c.h as f64 / cell).ceil() as usize + 2;
    let grid: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    for y in 0..c.h {
        let fy = y as f64 / cell;
        let (gy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
        for x in 0..c.w {
            let fx = x as f64 / cell;
            let (gx, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(gx, gy) + (g(gx + 1, gy) - g(gx, gy)) * tx;
            let bot = g(gx, gy + 1) + (g(gx + 1, gy + 1) - g(gx, gy + 1)) * tx;
            c.px[y * c.w + x] += amplitude * (top + (bot - top) * ty);
        }
    }
}

fn grown(b: &BoundingBox, fx: f64, fy: f64) -> BoundingBox {
    BoundingBox::new(b.x - b.w * fx, b.y - b.h * fy, b.w * (1.0 + 2.0 * fx), b.h * (1.0 + 2.0 * fy))
}

fn draw_plate(c: &mut Canvas, rng: &mut ChaCha8Rng, b: &BoundingBox) {
    let (x, y, w, h) = (b.x as i64, b.y as i64, b.w as i64, b.h as i64);
    let fill = rng.random_range(140.0..235.0);
    let frame = rng.random_range(15.0..80.0);
    let ink = rng.random_range(10.0..90.0);
    let t = ((h as f64 * 0.06).round() as i64).max(1);
    c.fill_rect(x, y, x + w, y + h, frame);
    c.fill_rect(x + t, y + t, x + w - t, y + h - t, fill);

    // three letters, a gap, four digits
    let inner_x0 = x as f64 + w as f64 * 0.06;
    let inner_w = w as f64 * 0.88;
    let slot = inner_w / (GLYPHS_PER_PLATE as f64 + 0.6);
    let gy0 = y as f64 + h as f64 * 0.2;
    let gh = h as f64 * 0.6;
    let stroke = ((slot * 0.16).round() as i64).max(1);
    for g in 0..GLYPHS_PER_PLATE {
        let offset = if g >= 3 { 0.6 } else { 0.0 };
        let gx0 = (inner_x0 + (g as f64 + offset) * slot + slot * 0.14).round() as i64;
        let gx1 = (inner_x0 + (g as f64 + offset + 1.0) * slot - slot * 0.14).round() as i64;
        let (ty, by) = (gy0.round() as i64, (gy0 + gh).round() as i64);
        let my = (ty + by) / 2;
        let mask = SEGMENTS[rng.random_range(0..SEGMENTS.len())];
        let seg = |i: u8| mask & (1 << i) != 0;
        if seg(0) {
            c.fill_rect(gx0, ty, gx1, ty + stroke, ink);
        }
        if seg(1) {
            c.fill_rect(gx1 - stroke, ty, gx1, my + stroke / 2 + 1, ink);
        }
        if seg(2) {
            c.fill_rect(gx1 - stroke, my - stroke / 2, gx1, by, ink);
        }
        if seg(3) {
            c.fill_rect(gx0, by - stroke, gx1, by, ink);
        }
        if seg(4) {
            c.fill_rect(gx0, my - stroke / 2, gx0 + stroke, by, ink);
        }
        if seg(5) {
            c.fill_rect(gx0, ty, gx0 + stroke, my + stroke / 2 + 1, ink);
        }
        if seg(6) {
            c.fill_rect(gx0, my - stroke / 2, gx1, my - stroke / 2 + stroke, ink);
        }
    }
}

fn draw_headlight(c: &mut Canvas, rng: &mut ChaCha8Rng, b: &BoundingBox) {
    let (cx, cy) = (b.x + b.w / 2.0, b.y + b.h / 2.0);
    let (rx, ry) = (b.w / 2.0, b.h / 2.0);
    let peak = rng.random_range(200.0..250.0);
    for y in b.y.max(0.0) as usize..(b.bottom().min(c.h as f64)) as usize {
        for x in b.x.max(0.0) as usize..(b.right().min(c.w as f64)) as usize {
            let d = ((x as f64 + 0.5 - cx) / rx).powi(2) + ((y as f64 + 0.5 - cy) / ry).powi(2);
            if d < 1.0 {
                let v = &mut c.px[y * c.w + x];
                let a = 1.0 - d * d;
                *v += (peak - *v) * a;
            }
        }
    }
}

fn draw_text_patch(c: &mut Canvas, rng: &mut ChaCha8Rng, b: &BoundingBox) {
    let (x, y, w, h) = (b.x as i64, b.y as i64, b.w as i64, b.h as i64);
    if rng.random_bool(0.5) {
        let fill = rng.random_range(140.0..210.0);
        c.fill_rect(x, y, x + w, y + h, fill);
    }
    let ink = rng.random_range(10.0..70.0);
    let n = rng.random_range(4..=9);
    let pitch = w as f64 / n as f64;
    let stroke = ((pitch * 0.25).round() as i64).max(1);
    for k in 0..n {
        let sx = x + (k as f64 * pitch + pitch * 0.3).round() as i64;
        let top = y + rng.random_range(0..=(h / 4).max(0));
        c.fill_rect(sx, top, sx + stroke, y + h, ink);
    }
}

/// Horizontal bar pattern, like a radiator grille or a fence.
fn draw_grille(c: &mut Canvas, rng: &mut ChaCha8Rng) {
    let w = rng.random_range(60..220) as i64;
    let h = rng.random_range(20..80) as i64;
    let x = rng.random_range(-20..c.w as i64);
    let y = rng.random_range(-10..c.h as i64);
    let pitch = rng.random_range(4..10) as i64;
    let bar = rng.random_range(1..=pitch / 2);
    let delta = rng.random_range(-70.0..70.0);
    let mut yy = y;
    while yy < y + h {
        c.shift_rect(x, yy, x + w, yy + bar, delta);
        yy += pitch;
    }
}

/// Tries to place a box of size `w x h` away from every entry of `taken`.
fn place(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    w: f64,
    h: f64,
    margin: (f64, f64),
    taken: &[BoundingBox],
) -> Option<BoundingBox> {
    let max_x = spec.width as f64 - w - margin.0;
    let max_y = spec.height as f64 - h - margin.1;
    if max_x < margin.0 || max_y < margin.1 {
        return None;
    }
    for _ in 0..PLACEMENT_ATTEMPTS {
        let x = rng.random_range(margin.0..=max_x).floor();
        let y = rng.random_range(margin.1..=max_y).floor();
        let b = BoundingBox::new(x, y, w, h);
        if taken.iter().all(|t| t.intersection_area(&b) == 0.0) {
            return Some(b);
        }
    }
    None
}

/// Renders one scene. The returned plates are exactly the rendered plate
/// rectangles.
pub fn generate_synthetic_scene(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = Canvas {
        w: spec.width,
        h: spec.height,
        px: vec![rng.random_range(70.0..170.0); spec.width * spec.height],
    };
    value_noise(&mut canvas, &mut rng, 48.0, 45.0);
    value_noise(&mut canvas, &mut rng, 12.0, 15.0);
    value_noise(&mut canvas, &mut rng, 3.0, 8.0);
    for _ in 0..rng.random_range(4..=12) {
        let w = rng.random_range(20..160) as i64;
        let h = rng.random_range(10..100) as i64;
        let x = rng.random_range(-20..spec.width as i64);
        let y = rng.random_range(-20..spec.height as i64);
        let delta = rng.random_range(-60.0..60.0);
        canvas.shift_rect(x, y, x + w, y + h, delta);
    }

    for _ in 0..rng.random_range(0..=2) {
        draw_grille(&mut canvas, &mut rng);
    }

    let plates: Vec<BoundingBox> = match &spec.placements {
        Some(p) => p.clone(),
        None => {
            let count = rng.random_range(spec.min_plates..=spec.max_plates);
            let width = Normal::new(spec.plate_width_mean, spec.plate_width_std).map_err(|e| Error::Config(e.to_string()))?;
            let aspect = Normal::new(spec.aspect_mean, spec.aspect_std).map_err(|e| Error::Config(e.to_string()))?;
            let mut placed = Vec::new();
            let mut keep_out = Vec::new();
            for _ in 0..count {
                let w = width.sample(&mut rng).clamp(spec.plate_width_range.0, spec.plate_width_range.1).round();
                let a = aspect.sample(&mut rng).clamp(spec.aspect_mean - 3.0 * spec.aspect_std, spec.aspect_mean + 3.0 * spec.aspect_std);
                let h = (w / a).round().max(4.0);
                let margin = ((w * 0.12).ceil() + 2.0, (h * 0.12).ceil() + 2.0);
                if let Some(b) = place(&mut rng, spec, w, h, margin, &keep_out) {
                    keep_out.push(grown(&b, 0.25, 0.5));
                    placed.push(b);
                }
            }
            placed
        }
    };

    let mut keep_out: Vec<BoundingBox> = plates.iter().map(|b| grown(b, 0.25, 0.5)).collect();
    for _ in 0..rng.random_range(0..=spec.max_distractors) {
        if rng.random_bool(0.4) {
            let r = rng.random_range(8.0..22.0f64).round();
            let ry = (r * rng.random_range(0.5..1.0)).round().max(3.0);
            if let Some(b) = place(&mut rng, spec, 2.0 * r, 2.0 * ry, (0.0, 0.0), &keep_out) {
                draw_headlight(&mut canvas, &mut rng, &b);
                keep_out.push(b);
            }
        } else {
            let w = rng.random_range(50.0..130.0f64).round();
            let h = rng.random_range(12.0..30.0f64).round();
            if let Some(b) = place(&mut rng, spec, w, h, (0.0, 0.0), &keep_out) {
                draw_text_patch(&mut canvas, &mut rng, &b);
                keep_out.push(b);
            }
        }
    }
    for b in &plates {
        draw_plate(&mut canvas, &mut rng, b);
    }

    let gain = rng.random_range(0.75..1.1);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    for v in &mut canvas.px {
        let n = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        *v = (128.0 + (*v - 128.0) * gain + n).round().clamp(0.0, 255.0);
    }
    Ok(SyntheticScene {
        image: GrayImage::new(spec.width, spec.height, canvas.px)?,
        plates,
    })
}

pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:05}.png")
}

/// Renders `count` scenes into `dir` as PNGs plus `manifest.tsv`. Scene
/// `i` uses a seed derived from `(seed, i)`.
pub fn write_synthetic_set(dir: impl AsRef<Path>, spec: &SceneSpec, count: usize, seed: u64) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = generate_synthetic_scene(spec, entry_seed(seed, i as u64))?;
            let name = scene_file_name(i);
            save_png(&scene.image, dir.join(&name))?;
            Ok(AnnotatedImage {
                image_path: name.into(),
                plates: scene.plates,
                size: (spec.width, spec.height),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        entries,
        split: SplitTag::None,
    };
    save_manifest(dir.join("manifest.tsv"), &manifest)?;
    Ok(manifest)
}

/// In-memory counterpart of [`write_synthetic_set`].
pub fn synthetic_images(spec: &SceneSpec, count: usize, seed: u64) -> Result<Vec<super::LabeledImage>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = generate_synthetic_scene(spec, entry_seed(seed, i as u64))?;
            Ok(super::LabeledImage {
                id: scene_file_name(i),
                image: scene.image,
                plates: scene.plates,
            })
        })
        .collect()
}
