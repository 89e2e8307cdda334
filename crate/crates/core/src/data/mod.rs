//! Annotated datasets: manifests, splits, plate statistics, training-window
//! sampling, and the synthetic scene generator.

mod bootstrap;
mod sampling;
pub mod synth;

pub use bootstrap::{bootstrap_round, collect_false_positives, FalsePositive, HardNegative};
pub use sampling::{extract_positive, negative_descriptors, sample_negatives, NegativeSample};
pub use synth::{generate_synthetic_scene, write_synthetic_set, SceneSpec, SyntheticScene, SYNTH_VERSION};

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::detector::BoundingBox;
use crate::error::{Error, Result};
use crate::eval::ImageTruth;
use crate::imaging::{load_gray, GrayImage};

/// Extensions picked up when building a manifest from a directory.
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    /// Path as written in the manifest, relative to the manifest directory
    /// unless absolute. Doubles as the image id in detection files.
    pub image_path: PathBuf,
    pub plates: Vec<BoundingBox>,
    /// `(width, height)` of the image on disk.
    pub size: (usize, usize),
}

impl AnnotatedImage {
    pub fn id(&self) -> String {
        self.image_path.to_string_lossy().into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitTag {
    Train,
    Test,
    #[default]
    None,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::None => "none",
        })
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            "none" => Ok(SplitTag::None),
            _ => Err(Error::Config(format!("unknown split tag {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    /// Directory relative image paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<AnnotatedImage>,
    pub split: SplitTag,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &AnnotatedImage) -> PathBuf {
        self.root.join(&entry.image_path)
    }

    pub fn truth(&self) -> Vec<ImageTruth> {
        self.entries
            .iter()
            .map(|e| ImageTruth {
                image_id: e.id(),
                boxes: e.plates.clone(),
            })
            .collect()
    }

    pub fn num_plates(&self) -> usize {
        self.entries.iter().map(|e| e.plates.len()).sum()
    }

    /// Decodes every image to grayscale, in manifest order.
    pub fn load_images(&self) -> Result<Vec<LabeledImage>> {
        self.entries
            .par_iter()
            .map(|e| {
                Ok(LabeledImage {
                    id: e.id(),
                    image: load_gray(self.resolve(e))?,
                    plates: e.plates.clone(),
                })
            })
            .collect()
    }
}

/// A decoded image with its ground-truth plates.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: GrayImage,
    pub plates: Vec<BoundingBox>,
}

impl LabeledImage {
    pub fn truth(&self) -> ImageTruth {
        ImageTruth {
            image_id: self.id.clone(),
            boxes: self.plates.clone(),
        }
    }
}

fn parse_box(field: &str, sep: impl Fn(char) -> bool) -> std::result::Result<BoundingBox, String> {
    let parts: Vec<&str> = field.split(sep).filter(|s| !s.is_empty()).collect();
    if parts.len() != 4 {
        return Err(format!("plate {field:?} must have four numbers x,y,w,h"));
    }
    let mut v = [0.0; 4];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|n| n.is_finite())
            .ok_or_else(|| format!("plate {field:?}: {p:?} is not a number"))?;
    }
    Ok(BoundingBox::new(v[0], v[1], v[2], v[3]))
}

fn check_box(b: &BoundingBox, size: (usize, usize)) -> std::result::Result<(), String> {
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(format!("plate {},{},{},{} has non-positive size", b.x, b.y, b.w, b.h));
    }
    if !b.inside(size.0 as f64, size.1 as f64) {
        return Err(format!(
            "plate {},{},{},{} exceeds the {}x{} image",
            b.x, b.y, b.w, b.h, size.0, size.1
        ));
    }
    Ok(())
}

fn image_size(path: &Path) -> std::result::Result<(usize, usize), String> {
    image::image_dimensions(path)
        .map(|(w, h)| (w as usize, h as usize))
        .map_err(|e| format!("cannot read image {}: {e}", path.display()))
}

/// Reads a tab-separated manifest: image path, then zero or more
/// `x,y,w,h` plates. Blank lines and `#` comments are skipped; a
/// `# split: train|test|none` comment sets the split tag.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let fail = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut split = SplitTag::None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.trim_start().strip_prefix('#') {
            if let Some(tag) = comment.trim().strip_prefix("split:") {
                split = tag.trim().parse().map_err(|e: Error| fail(line_no, e.to_string()))?;
            }
            continue;
        }
        let mut fields = line.split('\t');
        let image_path = PathBuf::from(fields.next().unwrap_or_default().trim());
        let plates = fields
            .filter(|f| !f.trim().is_empty())
            .map(|f| parse_box(f, |c| c == ','))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| fail(line_no, m))?;
        rows.push((line_no, image_path, plates));
    }

    let mut seen = HashSet::new();
    for (line_no, p, _) in &rows {
        if !seen.insert(p.clone()) {
            return Err(fail(*line_no, format!("duplicate image path {}", p.display())));
        }
    }

    let entries = rows
        .into_par_iter()
        .map(|(line_no, image_path, plates)| {
            let size = image_size(&root.join(&image_path)).map_err(|m| fail(line_no, m))?;
            for b in &plates {
                check_box(b, size).map_err(|m| fail(line_no, m))?;
            }
            Ok(AnnotatedImage {
                image_path,
                plates,
                size,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest { root, entries, split })
}

pub fn write_manifest<W: Write>(mut out: W, manifest: &DatasetManifest) -> std::io::Result<()> {
    if manifest.split != SplitTag::None {
        writeln!(out, "# split: {}", manifest.split)?;
    }
    for e in &manifest.entries {
        write!(out, "{}", e.image_path.display())?;
        for b in &e.plates {
            write!(out, "\t{},{},{},{}", b.x, b.y, b.w, b.h)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes `manifest` to `path`. Entry paths are written as stored, so
/// they should be relative to `path`'s directory.
pub fn save_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_manifest(&mut w, manifest)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Builds a manifest from a directory of images, each optionally paired
/// with a same-stem `.txt` sidecar holding one `x y w h` plate per line.
/// Images without a sidecar are pure negatives.
pub fn manifest_from_sidecars(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let mut images: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    images.sort();

    let mut entries = Vec::with_capacity(images.len());
    for img in images {
        let sidecar = img.with_extension("txt");
        let mut plates = Vec::new();
        if sidecar.exists() {
            let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() || line.trim_start().starts_with('#') {
                    continue;
                }
                let fail = |message| Error::Manifest {
                    path: sidecar.clone(),
                    line: i + 1,
                    message,
                };
                plates.push(parse_box(line, char::is_whitespace).map_err(fail)?);
            }
        }
        let size = image_size(&img).map_err(|message| Error::Manifest {
            path: img.clone(),
            line: 0,
            message,
        })?;
        for b in &plates {
            check_box(b, size).map_err(|message| Error::Manifest {
                path: sidecar.clone(),
                line: 0,
                message,
            })?;
        }
        let name = img.file_name().map(PathBuf::from).unwrap_or_default();
        entries.push(AnnotatedImage {
            image_path: name,
            plates,
            size,
        });
    }
    Ok(DatasetManifest {
        root: dir.to_path_buf(),
        entries,
        split: SplitTag::None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateStats {
    pub count: usize,
    pub width_mean: f64,
    pub width_std: f64,
    pub height_mean: f64,
    pub height_std: f64,
    /// Mean of the per-plate `w / h` ratios.
    pub aspect_mean: f64,
    pub aspect_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Sample mean and standard deviation (n - 1 denominator) of plate widths,
/// heights and aspect ratios.
pub fn plate_statistics<'a>(plates: impl IntoIterator<Item = &'a BoundingBox>) -> Result<PlateStats> {
    let plates: Vec<&BoundingBox> = plates.into_iter().collect();
    if plates.is_empty() {
        return Err(Error::Training("no plates to summarize".into()));
    }
    let w: Vec<f64> = plates.iter().map(|b| b.w).collect();
    let h: Vec<f64> = plates.iter().map(|b| b.h).collect();
    let a: Vec<f64> = plates.iter().map(|b| b.w / b.h).collect();
    let (width_mean, width_std) = mean_std(&w);
    let (height_mean, height_std) = mean_std(&h);
    let (aspect_mean, aspect_std) = mean_std(&a);
    Ok(PlateStats {
        count: plates.len(),
        width_mean,
        width_std,
        height_mean,
        height_std,
        aspect_mean,
        aspect_std,
    })
}

pub fn manifest_plate_statistics(manifest: &DatasetManifest) -> Result<PlateStats> {
    plate_statistics(manifest.entries.iter().flat_map(|e| &e.plates))
}

/// Number of training entries for a split of `n` at `fraction`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Seeded shuffle, then the first `round(fraction * n)` entries go to
/// training. Each part keeps manifest order.
pub fn split(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let n = manifest.entries.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; n];
    for &i in &order[..train_count(n, train_fraction)] {
        is_train[i] = true;
    }
    let part = |want: bool, split: SplitTag| DatasetManifest {
        root: manifest.root.clone(),
        entries: manifest
            .entries
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| t == want)
            .map(|(e, _)| e.clone())
            .collect(),
        split,
    };
    Ok((part(true, SplitTag::Train), part(false, SplitTag::Test)))
}

/// Independent per-entry seed, so parallel work never depends on
/// scheduling order.
pub fn entry_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}
