use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::*;
use crate::data::{load_manifest, manifest_from_sidecars, manifest_plate_statistics, save_manifest, split};
use crate::detector::{read_detections_file, write_detections_csv};
use crate::error::ErrorCategory;
use crate::svm::load_model;

macro_rules! config_flags {
    ($($key:ident),* $(,)?) => {
        /// Configuration overrides. Every key of the configuration file has
        /// a same-named flag; flags win over the file, which wins over the
        /// built-in defaults.
        #[derive(Debug, Clone, Default, Args)]
        pub struct ConfigArgs {
            /// Flat `key = value` configuration file
            #[arg(long, value_name = "FILE")]
            pub config: Option<PathBuf>,
            $(
                #[arg(long, value_name = "VALUE", allow_hyphen_values = true,
                      help = concat!("Override the `", stringify!($key), "` key"))]
                pub $key: Option<String>,
            )*
        }

        impl ConfigArgs {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $( if let Some(x) = &self.$key { v.push((stringify!($key), x.as_str())); } )*
                v
            }
        }
    };
}

config_flags!(
    cell,
    block,
    block_stride,
    bins,
    norm,
    epsilon,
    core_width,
    core_height,
    pad_x,
    pad_y,
    stride,
    scales,
    scale_step,
    anchor_level,
    nms_overlap,
    c,
    c_grid,
    cv_folds,
    max_epochs,
    tolerance,
    seed,
    fppi_target,
    match_threshold,
    match_mode,
    t_grid,
    negatives_per_image,
    bootstrap_budget,
    calibration_floor,
    sweep_folds,
    train_fraction,
);

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "platehog", version, about = "HOG + linear SVM license plate detector")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a detector and write its model file
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training manifest
        #[arg(long)]
        manifest: PathBuf,
        /// Model file to write
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect plates and write the detection CSV
    Detect {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        /// Manifest whose images to scan, in addition to any IMAGES
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output CSV; standard output when absent
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score threshold replacing the model's calibrated one
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        images: Vec<PathBuf>,
    },
    /// Score a detection CSV against a ground-truth manifest
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        detections: PathBuf,
        /// Ground-truth manifest
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the report CSVs
        #[arg(long)]
        out: PathBuf,
        /// Drop detections scoring below this before the point metrics
        #[arg(long, allow_hyphen_values = true)]
        score_threshold: Option<f64>,
    },
    /// Cross-validated sweep over one detector parameter
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// cell_block, padding, scales or stride
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values; the axis default when absent
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// Output CSV; standard output when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render synthetic plate scenes and their manifest
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        width: usize,
        #[arg(long, default_value_t = 300)]
        height: usize,
        #[arg(long, default_value_t = 1)]
        min_plates: usize,
        #[arg(long, default_value_t = 3)]
        max_plates: usize,
        #[arg(long, default_value_t = 4)]
        max_distractors: usize,
        /// Standard deviation of per-pixel noise
        #[arg(long, default_value_t = 6.0)]
        noise: f64,
    },
    /// Split a manifest into seeded train and test manifests
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Fraction of images to put in the training part
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a manifest from images with `x y w h` sidecar files
    Convert {
        /// Directory of images and same-stem .txt files
        #[arg(long)]
        dir: PathBuf,
        /// Manifest to write; `DIR/manifest.tsv` when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plate size statistics of a manifest as CSV
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn flush(mut w: Box<dyn Write>, path: Option<&Path>) -> Result<()> {
    w.flush()
        .map_err(|e| Error::io(path.unwrap_or(Path::new("<stdout>")), e))
}

fn sibling(manifest: &Path, suffix: &str) -> PathBuf {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    manifest.with_file_name(format!("{stem}.{suffix}.tsv"))
}

fn execute(cmd: Command) -> Result<()> {
    let stderr = std::io::stderr();
    match cmd {
        Command::Train { cfg, manifest, out } => {
            let cfg = cfg.resolve()?;
            let manifest = load_manifest(&manifest)?;
            let trained = cmd_train(&cfg, &manifest, &out)?;
            let _ = write_train_summary(stderr.lock(), &trained.summary);
        }
        Command::Detect {
            cfg,
            model,
            manifest,
            out,
            threshold,
            images,
        } => {
            let mut cfg = cfg.resolve()?;
            let model = load_model(&model)?;
            cfg.adopt_model_geometry(&model)?;
            let mut inputs = match manifest {
                Some(m) => DetectInput::from_manifest(&load_manifest(&m)?),
                None => Vec::new(),
            };
            inputs.extend(images.into_iter().map(DetectInput::from_path));
            let report = cmd_detect(&cfg, &model, &inputs, threshold)?;
            for (id, reason) in &report.failures {
                let _ = writeln!(stderr.lock(), "error: {id}: {reason}");
            }
            let mut w = output(out.as_deref())?;
            write_detections_csv(&mut w, &report.records)?;
            flush(w, out.as_deref())?;
        }
        Command::Eval {
            cfg,
            detections,
            manifest,
            out,
            score_threshold,
        } => {
            let cfg = cfg.resolve()?;
            let records = read_detections_file(&detections)?;
            let truth = load_manifest(&manifest)?;
            let report = cmd_eval(&cfg, &records, &truth, score_threshold)?;
            write_eval_report(&out, &report)?;
            let m = &report.metrics;
            let _ = writeln!(
                stderr.lock(),
                "recall {} precision {} fppi {} at t = {}",
                opt(m.recall),
                m.precision,
                m.fppi,
                report.match_threshold
            );
        }
        Command::Sweep {
            cfg,
            manifest,
            axis,
            grid,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let axis: SweepAxis = axis.parse()?;
            let grid = match grid {
                Some(g) => g.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                None => axis.default_grid(),
            };
            let spec = SweepSpec::new(axis, grid, cfg)?;
            let images = load_manifest(&manifest)?.load_images()?;
            let rows = cmd_sweep(&spec, &images);
            let mut w = output(out.as_deref())?;
            write_sweep_csv(&mut w, &rows).map_err(|e| Error::io("<sweep output>", e))?;
            flush(w, out.as_deref())?;
        }
        Command::Synth {
            out,
            count,
            seed,
            width,
            height,
            min_plates,
            max_plates,
            max_distractors,
            noise,
        } => {
            let spec = SceneSpec {
                width,
                height,
                min_plates,
                max_plates,
                max_distractors,
                noise_std: noise,
                ..SceneSpec::default()
            };
            let m = cmd_synth(&out, &spec, count, seed)?;
            let _ = writeln!(stderr.lock(), "wrote {} scenes, {} plates", m.entries.len(), m.num_plates());
        }
        Command::Split {
            manifest,
            train_fraction,
            seed,
        } => {
            let fraction = train_fraction.unwrap_or(RunConfig::default().train_fraction);
            let m = load_manifest(&manifest)?;
            let (train, test) = split(&m, fraction, seed)?;
            save_manifest(sibling(&manifest, "train"), &train)?;
            save_manifest(sibling(&manifest, "test"), &test)?;
            let _ = writeln!(stderr.lock(), "train {} images, test {} images", train.entries.len(), test.entries.len());
        }
        Command::Convert { dir, out } => {
            let mut m = manifest_from_sidecars(&dir)?;
            let out = out.unwrap_or_else(|| dir.join("manifest.tsv"));
            let same_dir = match (out.parent().map(std::fs::canonicalize), std::fs::canonicalize(&dir)) {
                (Some(Ok(a)), Ok(b)) => a == b,
                _ => false,
            };
            if !same_dir {
                let root = std::fs::canonicalize(&dir).map_err(|e| Error::io(&dir, e))?;
                for e in &mut m.entries {
                    e.image_path = root.join(&e.image_path);
                }
            }
            save_manifest(&out, &m)?;
        }
        Command::Stats { manifest } => {
            let s = manifest_plate_statistics(&load_manifest(&manifest)?)?;
            let mut w = std::io::stdout().lock();
            (|| -> std::io::Result<()> {
                writeln!(w, "count,width_mean,width_std,height_mean,height_std,aspect_mean,aspect_std")?;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    s.count, s.width_mean, s.width_std, s.height_mean, s.height_std, s.aspect_mean, s.aspect_std
                )
            })()
            .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns
/// the process exit code: 0 success, 1 usage, 2 data, 3 internal error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ErrorCategory::Usage.exit_code() } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.category().exit_code()
        }
    }
}
