use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::metrics::{metrics_lenient, Metrics};
use super::ols::{fit_ols, predict_counts};
use crate::error::{Error, Result};

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub in_sample: Metrics,
    pub out_of_sample: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub mean_in_sample: Metrics,
    pub mean_out_of_sample: Metrics,
    /// Folds whose holdout R² was undefined and left out of the mean.
    pub r2_undefined_folds: Vec<usize>,
}

/// Fold index of every row: a seeded shuffle dealt round-robin, so fold
/// sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

fn mean_metrics(ms: impl Iterator<Item = Metrics> + Clone) -> Metrics {
    let n = ms.clone().count() as f64;
    let r2: Vec<f64> = ms.clone().filter_map(|m| m.r2).collect();
    Metrics {
        mae: ms.clone().map(|m| m.mae).sum::<f64>() / n,
        rmse: ms.map(|m| m.rmse).sum::<f64>() / n,
        r2: (!r2.is_empty()).then(|| r2.iter().sum::<f64>() / r2.len() as f64),
    }
}

/// k-fold cross-validation of the log-linear fit with count-scale metrics.
/// Folds are fitted in parallel; the report does not depend on the number of
/// threads.
pub fn cross_validate(design: &Design, k: usize, seed: u64) -> Result<CvReport> {
    let n = design.n_obs();
    if k < 2 {
        return Err(Error::InvalidConfig(format!("cross-validation needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewObservations { n, params: k });
    }
    let assignment = fold_assignment(n, k, seed);
    let folds = (0..k)
        .into_par_iter()
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignment[i] == f);
            let tr = design.subset_rows(&train);
            let te = design.subset_rows(&test);
            let model = fit_ols(&tr.x, &tr.y, &tr.names)?;
            let in_sample = metrics_lenient(&tr.observed, &predict_counts(&model, &tr.x, &tr.names)?)?;
            let out_of_sample = metrics_lenient(&te.observed, &predict_counts(&model, &te.x, &te.names)?)?;
            Ok(FoldResult {
                fold: f,
                n_train: train.len(),
                n_test: test.len(),
                in_sample,
                out_of_sample,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let r2_undefined_folds: Vec<usize> = folds.iter().filter(|f| f.out_of_sample.r2.is_none()).map(|f| f.fold).collect();
    if !r2_undefined_folds.is_empty() {
        log::warn!("holdout R² undefined for folds {r2_undefined_folds:?}; excluded from the mean");
    }
    Ok(CvReport {
        k,
        seed,
        mean_in_sample: mean_metrics(folds.iter().map(|f| f.in_sample)),
        mean_out_of_sample: mean_metrics(folds.iter().map(|f| f.out_of_sample)),
        folds,
        r2_undefined_folds,
    })
}
