use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{dot, train, SvmTrainConfig};
use crate::error::{Error, Result};

pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub best_c: f64,
    /// `(C, mean fold accuracy)` in grid order.
    pub mean_accuracy: Vec<(f64, f64)>,
    /// Per-C fold accuracies, grid order then fold order.
    pub fold_accuracy: Vec<Vec<f64>>,
}

/// Stratified fold assignment: each class is shuffled with `seed` and dealt
/// round-robin, so every fold holds both classes when each class has at
/// least `folds` members.
pub fn stratified_folds(n_pos: usize, n_neg: usize, folds: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deal = |n: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let mut fold = vec![0; n];
        for (k, &i) in idx.iter().enumerate() {
            fold[i] = k % folds;
        }
        fold
    };
    let p = deal(n_pos);
    let n = deal(n_neg);
    (p, n)
}

/// Picks C by k-fold accuracy at the zero decision boundary. Ties go to the
/// smaller C.
pub fn cross_validate<P, N>(
    folds: usize,
    positives: &[P],
    negatives: &[N],
    c_grid: &[f64],
    cfg: &SvmTrainConfig,
) -> Result<CrossValidation>
where
    P: AsRef<[f64]> + Sync,
    N: AsRef<[f64]> + Sync,
{
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs >= 2 folds, got {folds}")));
    }
    if c_grid.is_empty() {
        return Err(Error::Config("C grid is empty".into()));
    }
    if positives.len() < folds || negatives.len() < folds {
        return Err(Error::Training(format!(
            "{folds} folds need at least {folds} examples per class, have {} positive and {} negative",
            positives.len(),
            negatives.len()
        )));
    }
    let (pf, nf) = stratified_folds(positives.len(), negatives.len(), folds, cfg.seed);
    let jobs: Vec<(usize, usize)> = (0..c_grid.len())
        .flat_map(|ci| (0..folds).map(move |f| (ci, f)))
        .collect();
    let accuracies: Vec<f64> = jobs
        .par_iter()
        .map(|&(ci, f)| {
            let pick = |fold: &[usize], want_held_out: bool| -> Vec<usize> {
                (0..fold.len()).filter(|&i| (fold[i] == f) == want_held_out).collect()
            };
            let train_pos: Vec<&[f64]> = pick(&pf, false).into_iter().map(|i| positives[i].as_ref()).collect();
            let train_neg: Vec<&[f64]> = pick(&nf, false).into_iter().map(|i| negatives[i].as_ref()).collect();
            let fold_cfg = SvmTrainConfig { c: c_grid[ci], ..*cfg };
            let model = train(&train_pos, &train_neg, &fold_cfg)?;
            let held_pos = pick(&pf, true);
            let held_neg = pick(&nf, true);
            let correct = held_pos
                .iter()
                .filter(|&&i| dot(&model.weights, positives[i].as_ref()) + model.bias >= 0.0)
                .count()
                + held_neg
                    .iter()
                    .filter(|&&i| dot(&model.weights, negatives[i].as_ref()) + model.bias < 0.0)
                    .count();
            Ok(correct as f64 / (held_pos.len() + held_neg.len()) as f64)
        })
        .collect::<Result<_>>()?;

    let fold_accuracy: Vec<Vec<f64>> = accuracies.chunks(folds).map(|c| c.to_vec()).collect();
    let mean_accuracy: Vec<(f64, f64)> = c_grid
        .iter()
        .zip(&fold_accuracy)
        .map(|(&c, accs)| (c, accs.iter().sum::<f64>() / folds as f64))
        .collect();
    let best_c = mean_accuracy
        .iter()
        .copied()
        .reduce(|best, cand| {
            if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                cand
            } else {
                best
            }
        })
        .map(|(c, _)| c)
        .expect("grid is non-empty");
    Ok(CrossValidation {
        best_c,
        mean_accuracy,
        fold_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut pt = |cx: f64| vec![cx + noise.sample(&mut rng), noise.sample(&mut rng)];
        let pos = (0..n).map(|_| pt(1.0)).collect();
        let neg = (0..n).map(|_| pt(-1.0)).collect();
        (pos, neg)
    }

    #[test]
    fn single_candidate_is_returned() {
        let (p, n) = blobs(20, 0.3, 1);
        let cv = cross_validate(5, &p, &n, &[3.0], &SvmTrainConfig::default()).unwrap();
        assert_eq!(cv.best_c, 3.0);
    }

    #[test]
    fn separable_data_prefers_smallest_c() {
        let (p, n) = blobs(25, 0.05, 2);
        let cv = cross_validate(5, &p, &n, &[100.0, 1.0, 0.1], &SvmTrainConfig::default()).unwrap();
        assert!(cv.mean_accuracy.iter().all(|&(_, a)| a == 1.0));
        assert_eq!(cv.best_c, 0.1);
    }

    #[test]
    fn best_c_matches_independent_rerun() {
        let (p, n) = blobs(40, 1.2, 3);
        let cfg = SvmTrainConfig { seed: 5, ..Default::default() };
        let grid = [0.01, 1.0, 100.0];
        let cv = cross_validate(5, &p, &n, &grid, &cfg).unwrap();

        // recompute fold accuracies directly from the same fold assignment
        let (pf, nf) = stratified_folds(p.len(), n.len(), 5, cfg.seed);
        let mut means = Vec::new();
        for &c in &grid {
            let mut total = 0.0;
            for f in 0..5 {
                let tp: Vec<&Vec<f64>> = p.iter().zip(&pf).filter(|(_, &k)| k != f).map(|(x, _)| x).collect();
                let tn: Vec<&Vec<f64>> = n.iter().zip(&nf).filter(|(_, &k)| k != f).map(|(x, _)| x).collect();
                let tp: Vec<&[f64]> = tp.into_iter().map(|v| v.as_slice()).collect();
                let tn: Vec<&[f64]> = tn.into_iter().map(|v| v.as_slice()).collect();
                let m = train(&tp, &tn, &SvmTrainConfig { c, ..cfg }).unwrap();
                let mut correct = 0;
                let mut count = 0;
                for (x, _) in p.iter().zip(&pf).filter(|(_, &k)| k == f) {
                    correct += usize::from(m.score(x).unwrap() >= 0.0);
                    count += 1;
                }
                for (x, _) in n.iter().zip(&nf).filter(|(_, &k)| k == f) {
                    correct += usize::from(m.score(x).unwrap() < 0.0);
                    count += 1;
                }
                total += correct as f64 / count as f64;
            }
            means.push(total / 5.0);
        }
        for ((_, got), want) in cv.mean_accuracy.iter().zip(&means) {
            assert_eq!(got, want);
        }
        let mut best = 0;
        for i in 1..grid.len() {
            if means[i] > means[best] {
                best = i;
            }
        }
        assert_eq!(cv.best_c, grid[best]);
    }

    #[test]
    fn too_few_examples_per_class() {
        let p = vec![vec![1.0]; 3];
        let n = vec![vec![-1.0]; 10];
        assert!(matches!(
            cross_validate(5, &p, &n, &[1.0], &SvmTrainConfig::default()),
            Err(Error::Training(_))
        ));
        assert!(cross_validate(1, &p, &n, &[1.0], &SvmTrainConfig::default()).is_err());
    }

    #[test]
    fn folds_are_stratified() {
        let (pf, nf) = stratified_folds(12, 23, 5, 0);
        for f in 0..5 {
            assert!(pf.contains(&f));
            assert!(nf.contains(&f));
        }
    }
}
