use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_svm, KernelParams};
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const CV_FOLDS: usize = 5;

/// Coarse log grid: C in 2^-5, 2^-3, ..., 2^15 and gamma in 2^-15, ..., 2^3.
pub fn default_grid() -> Vec<KernelParams> {
    let mut grid = Vec::new();
    for c_exp in (-5..=15).step_by(2) {
        for g_exp in (-15..=3).step_by(2) {
            grid.push(KernelParams { c: 2f64.powi(c_exp), gamma: 2f64.powi(g_exp) });
        }
    }
    grid
}

/// Fold id per row; each class is shuffled and dealt round-robin, the
/// second class continuing where the first stopped.
pub fn stratified_folds(y: &[bool], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut folds = vec![0; y.len()];
    let mut next = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(rng);
        for i in idx {
            folds[i] = next % k;
            next += 1;
        }
    }
    folds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: KernelParams,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    pub grid: Vec<GridPoint>,
    pub best: KernelParams,
    pub best_accuracy: f64,
    pub cv_folds: usize,
}

/// Stratified k-fold cross-validation of every grid point. The
/// standardiser is refitted inside each training fold and accuracy is the
/// sign of the decision value, so no calibration is needed here. Ties go to
/// the smaller C, then the smaller gamma.
pub fn grid_search(
    rows: &[&[f64]],
    y: &[bool],
    grid: &[KernelParams],
    folds: usize,
    seed: u64,
    tol: f64,
) -> Result<GridSearchReport> {
    if grid.is_empty() {
        return Err(Error::Empty("parameter grid"));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least two folds".into()));
    }
    if rows.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", rows.len(), y.len())));
    }
    let positives = y.iter().filter(|&&p| p).count();
    let smallest = positives.min(y.len() - positives);
    if smallest < folds {
        return Err(if smallest == 0 {
            Error::SingleClass
        } else {
            Error::Insufficient { what: "grid search class".into(), needed: folds, available: smallest }
        });
    }
    let mut rng = rng_for(seed, "grid-search/folds");
    let assignment = stratified_folds(y, folds, &mut rng);

    let points = grid
        .par_iter()
        .map(|&params| {
            let fold_accuracies = (0..folds)
                .map(|held_out| {
                    let (fit_idx, eval_idx): (Vec<usize>, Vec<usize>) =
                        (0..y.len()).partition(|&i| assignment[i] != held_out);
                    let fit_rows: Vec<&[f64]> = fit_idx.iter().map(|&i| rows[i]).collect();
                    let fit_y: Vec<bool> = fit_idx.iter().map(|&i| y[i]).collect();
                    let model = fit_svm(&fit_rows, &fit_y, params, tol)?;
                    let mut correct = 0usize;
                    for &i in &eval_idx {
                        if (model.decision(rows[i])? >= 0.0) == y[i] {
                            correct += 1;
                        }
                    }
                    Ok(correct as f64 / eval_idx.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean_accuracy = fold_accuracies.iter().sum::<f64>() / folds as f64;
            Ok(GridPoint { params, fold_accuracies, mean_accuracy })
        })
        .collect::<Result<Vec<GridPoint>>>()?;

    let best = points
        .iter()
        .min_by(|a, b| {
            b.mean_accuracy
                .total_cmp(&a.mean_accuracy)
                .then(a.params.c.total_cmp(&b.params.c))
                .then(a.params.gamma.total_cmp(&b.params.gamma))
        })
        .expect("grid is non-empty");
    Ok(GridSearchReport {
        best: best.params,
        best_accuracy: best.mean_accuracy,
        grid: points,
        cv_folds: folds,
    })
}
