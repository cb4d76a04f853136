use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

/// Principal components of a training matrix (covariance route).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` rows, each a unit eigenvector of the training covariance.
    pub components: Vec<Vec<f64>>,
    /// Top-`k` eigenvalues, non-increasing, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Sum of all (clamped) eigenvalues.
    pub total_variance: f64,
}

/// Fits `k` components from the mean-centred sample covariance
/// (`n - 1` denominator). Each component's largest-magnitude entry is made
/// positive.
pub fn fit_pca(train: &FeatureMatrix, k: usize) -> Result<PcaModel> {
    let (n, d) = (train.len(), train.width());
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two rows".into()));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={} for a {n}x{d} matrix",
            (n - 1).min(d)
        )));
    }
    let mut mean = vec![0.0; d];
    for row in train.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centred = DMatrix::from_fn(n, d, |i, j| train.row(i)[j] - mean[j]);
    let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total_variance = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel { mean, components, eigenvalues, total_variance })
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn input_width(&self) -> usize {
        self.mean.len()
    }

    /// Share of the total variance captured by the retained components.
    /// Data without variance counts as fully explained.
    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        self.eigenvalues.iter().sum::<f64>() / self.total_variance
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_width() {
            return Err(Error::WidthMismatch { expected: self.input_width(), actual: x.len() });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.k() {
            return Err(Error::WidthMismatch { expected: self.k(), actual: z.len() });
        }
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += w * ci;
            }
        }
        Ok(out)
    }

    pub fn transform_matrix(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = FeatureMatrix::empty(FeatureKind::DeepPca(self.k()));
        for (key, row) in m.keys().iter().zip(m.rows()) {
            out.push(key.clone(), &self.transform(row)?)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::PatchKey;

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let d = rows[0].len();
        let keys = (0..rows.len()).map(|i| PatchKey::new("p", "i", i, 0)).collect();
        FeatureMatrix::from_rows(FeatureKind::DeepPca(d), keys, rows).unwrap()
    }

    #[test]
    fn line_data_is_one_dimensional() {
        let rows = (0..12).map(|i| {
            let t = i as f64 * 0.7 - 3.0;
            vec![1.0 + 2.0 * t, -0.5 * t, 3.0 + t]
        });
        let model = fit_pca(&matrix(rows.collect()), 1).unwrap();
        assert!((model.explained_variance_ratio() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mean_maps_to_zero() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64, 1.0 - i as f64]).collect();
        let model = fit_pca(&matrix(rows), 2).unwrap();
        let z = model.transform(&model.mean.clone()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        assert!(model.transform(&[1.0]).is_err());
    }

    #[test]
    fn k_bounds() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 1.0, 2.0, 3.0, 4.0]).collect();
        let m = matrix(rows);
        assert!(fit_pca(&m, 4).is_err());
        assert!(fit_pca(&m, 0).is_err());
        // Rank one but k = 3 is allowed: the extra components carry zero variance.
        let model = fit_pca(&m, 3).unwrap();
        assert_eq!(model.eigenvalues[1..], [0.0, 0.0]);
    }
}
