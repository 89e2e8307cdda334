//! Linear SVM trained by dual coordinate descent on the L2-regularized
//! hinge loss, with the bias folded in as a constant-1 feature.

mod calibrate;
mod cv;
mod persist;

pub use calibrate::{calibrate_threshold, Calibration};
pub use cv::{cross_validate, CrossValidation, DEFAULT_C_GRID};
pub use persist::{load_model, read_model, save_model, write_model, ModelFile, MODEL_MAGIC};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `score(x) = weights . x + bias`; windows with `score >= threshold` fire.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
}

impl LinearModel {
    pub fn descriptor_length(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, descriptor: &[f64]) -> Result<f64> {
        if descriptor.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.weights.len(),
                actual: descriptor.len(),
            });
        }
        Ok(dot(&self.weights, descriptor) + self.bias)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

/// Dot product with a fixed four-lane summation order. Every scoring path
/// goes through this function so scores agree bit for bit.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmTrainConfig {
    /// Regularization parameter C > 0.
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the spread of projected gradients falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_epochs: 200,
            tolerance: 1e-2,
            seed: 0,
        }
    }
}

impl SvmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!("C must be > 0, got {}", self.c)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub converged: bool,
    /// Dual objective after each epoch.
    pub dual_objective: Vec<f64>,
    pub support_vectors: usize,
}

/// Relative slack allowed when checking that the dual objective never
/// decreases; covers the rounding of recomputing it from `w` each epoch.
pub const DUAL_MONOTONE_RTOL: f64 = 1e-9;

impl TrainReport {
    pub fn dual_is_monotone(&self) -> bool {
        self.dual_objective
            .windows(2)
            .all(|p| p[1] >= p[0] - DUAL_MONOTONE_RTOL * p[0].abs().max(1.0))
    }
}

pub fn train<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    positives: &[P],
    negatives: &[N],
    cfg: &SvmTrainConfig,
) -> Result<LinearModel> {
    train_with_report(positives, negatives, cfg).map(|(m, _)| m)
}

pub fn train_with_report<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    positives: &[P],
    negatives: &[N],
    cfg: &SvmTrainConfig,
) -> Result<(LinearModel, TrainReport)> {
    cfg.validate()?;
    if positives.is_empty() {
        return Err(Error::Training("no positive examples".into()));
    }
    if negatives.is_empty() {
        return Err(Error::Training("no negative examples".into()));
    }
    let dim = positives[0].as_ref().len();
    let mut xs: Vec<&[f64]> = Vec::with_capacity(positives.len() + negatives.len());
    let mut ys: Vec<f64> = Vec::with_capacity(xs.capacity());
    for p in positives {
        xs.push(p.as_ref());
        ys.push(1.0);
    }
    for n in negatives {
        xs.push(n.as_ref());
        ys.push(-1.0);
    }
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    solve_dual(&xs, &ys, cfg)
}

fn solve_dual(xs: &[&[f64]], ys: &[f64], cfg: &SvmTrainConfig) -> Result<(LinearModel, TrainReport)> {
    let n = xs.len();
    let dim = xs[0].len();
    let c = cfg.c;
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    let qd: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut converged = false;
    let mut epochs = 0;

    while epochs < cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let yi = ys[i];
            let g = yi * (dot(&w, xs[i]) + b) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / qd[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * yi;
                if delta != 0.0 {
                    axpy(delta, xs[i], &mut w);
                    b += delta;
                }
            }
        }
        let dual = alpha.iter().sum::<f64>() - 0.5 * (dot(&w, &w) + b * b);
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            if dual < prev - DUAL_MONOTONE_RTOL * prev.abs().max(1.0) {
                return Err(Error::Invariant(format!(
                    "dual objective fell from {prev} to {dual} in epoch {epochs}"
                )));
            }
        }
        history.push(dual);
        if pg_max - pg_min < cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("dual coordinate descent stopped after {epochs} epochs without converging");
    }
    let support_vectors = alpha.iter().filter(|&&a| a > 0.0).count();
    Ok((
        LinearModel {
            weights: w,
            bias: b,
            threshold: 0.0,
        },
        TrainReport {
            epochs,
            converged,
            dual_objective: history,
            support_vectors,
        },
    ))
}
