//! Binary RBF support vector machine: z-score standardisation, SMO
//! training, Platt calibration and grid-searched hyperparameters.
//!
//! The positive class (`true`) is malign for tumour models and relevant for
//! relevance filters.

mod grid;
pub mod platt;
pub mod smo;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub use grid::{default_grid, grid_search, stratified_folds, GridPoint, GridSearchReport, CV_FOLDS};
pub use platt::Calibration;
pub use smo::{rbf, SolverOptions};

pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Default KKT stopping tolerance.
pub const DEFAULT_TOL: f64 = 1e-3;
const CALIBRATION_FOLDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub c: f64,
    pub gamma: f64,
}

impl KernelParams {
    pub fn new(c: f64, gamma: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0 && gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel parameters must be positive and finite (C = {c}, gamma = {gamma})"
            )));
        }
        Ok(Self { c, gamma })
    }
}

/// Per-feature z-score transform. Constant features get a scale of 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub format_version: u32,
    pub params: KernelParams,
    pub standardizer: Standardizer,
    /// Support vectors in standardised coordinates.
    pub support_vectors: Vec<Vec<f64>>,
    /// Positions of the support vectors in the training set.
    pub support_indices: Vec<usize>,
    /// `alpha_i * y_i`, so each lies in `[-C, C]` and they sum to zero.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub calibration: Calibration,
    pub iterations: usize,
    pub converged: bool,
}

fn validate(rows: &[&[f64]], y: &[bool]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if rows.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", rows.len(), y.len())));
    }
    let width = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::WidthMismatch { expected: width, actual: row.len() });
        }
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, col });
        }
    }
    if y.iter().all(|&p| p) || y.iter().all(|&p| !p) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Standardiser plus SVM, without calibration (identity sigmoid).
pub(crate) fn fit_svm(rows: &[&[f64]], y: &[bool], params: KernelParams, tol: f64) -> Result<TrainedClassifier> {
    validate(rows, y)?;
    let standardizer = Standardizer::fit(rows);
    let z: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.apply(r)).collect();
    let signs: Vec<f64> = y.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let opts = SolverOptions { tol, ..SolverOptions::default() };
    let sol = smo::solve(&z, &signs, params.c, params.gamma, opts);

    let mut support_vectors = Vec::new();
    let mut support_indices = Vec::new();
    let mut dual_coefs = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_indices.push(i);
            support_vectors.push(z[i].clone());
            dual_coefs.push(a * signs[i]);
        }
    }
    Ok(TrainedClassifier {
        format_version: MODEL_FORMAT_VERSION,
        params,
        standardizer,
        support_vectors,
        support_indices,
        dual_coefs,
        bias: -sol.rho,
        calibration: Calibration { a: 1.0, b: 0.0 },
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Trains the SVM on all rows and fits the Platt sigmoid on out-of-fold
/// decision values from a stratified 3-fold split drawn from `seed`. When a
/// class has fewer than three rows the sigmoid is fitted on the in-sample
/// decision values instead.
pub fn train(rows: &[&[f64]], y: &[bool], params: KernelParams, tol: f64, seed: u64) -> Result<TrainedClassifier> {
    let mut model = fit_svm(rows, y, params, tol)?;
    let positives = y.iter().filter(|&&p| p).count();
    let decisions = if positives.min(y.len() - positives) >= CALIBRATION_FOLDS {
        let mut rng = rng_for(seed, "calibration");
        let folds = stratified_folds(y, CALIBRATION_FOLDS, &mut rng);
        let mut out = vec![0.0; y.len()];
        for held_out in 0..CALIBRATION_FOLDS {
            let (fit_idx, eval_idx): (Vec<usize>, Vec<usize>) =
                (0..y.len()).partition(|&i| folds[i] != held_out);
            let fit_rows: Vec<&[f64]> = fit_idx.iter().map(|&i| rows[i]).collect();
            let fit_y: Vec<bool> = fit_idx.iter().map(|&i| y[i]).collect();
            let inner = fit_svm(&fit_rows, &fit_y, params, tol)?;
            for i in eval_idx {
                out[i] = inner.decision(rows[i])?;
            }
        }
        out
    } else {
        rows.iter().map(|r| model.decision(r)).collect::<Result<_>>()?
    };
    model.calibration = platt::fit(&decisions, y);
    Ok(model)
}

impl TrainedClassifier {
    pub fn width(&self) -> usize {
        self.standardizer.mean.len()
    }

    /// `sum_i coef_i * exp(-gamma |z - sv_i|^2) + bias` on the standardised
    /// input; positive means the positive class.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.width() {
            return Err(Error::WidthMismatch { expected: self.width(), actual: x.len() });
        }
        let z = self.standardizer.apply(x);
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, coef)| coef * rbf(&z, sv, self.params.gamma))
            .sum::<f64>()
            + self.bias)
    }

    /// Calibrated probability of the positive class.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(self.calibration.probability(self.decision(x)?))
    }

    /// Positive iff the calibrated probability is at least 0.5.
    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.predict_proba(x)? >= 0.5)
    }

    /// Per-row violation of the soft-margin KKT conditions on the training
    /// set this model was fitted on.
    pub fn kkt_residuals(&self, rows: &[&[f64]], y: &[bool]) -> Result<Vec<f64>> {
        let mut alpha = vec![0.0; rows.len()];
        for (&i, coef) in self.support_indices.iter().zip(&self.dual_coefs) {
            *alpha.get_mut(i).ok_or_else(|| Error::Shape("support index out of range".into()))? = coef.abs();
        }
        rows.iter()
            .zip(y)
            .zip(alpha)
            .map(|((row, &positive), a)| {
                let margin = if positive { 1.0 } else { -1.0 } * self.decision(row)?;
                Ok(if a <= 0.0 {
                    (1.0 - margin).max(0.0)
                } else if a >= self.params.c {
                    (margin - 1.0).max(0.0)
                } else {
                    (1.0 - margin).abs()
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported model format version {}", model.format_version)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
