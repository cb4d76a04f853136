//! Python bindings: tiling geometry, Otsu, TAS/PFTAS, filter specs,
//! aggregation arithmetic, the SVM classifier and PCA.

use std::path::PathBuf;

use histotile_core::classifier::{self, default_grid, KernelParams, TrainedClassifier, CV_FOLDS, DEFAULT_TOL};
use histotile_core::dataset::{self, BinaryLabel, CorpusKind, CrcStructure};
use histotile_core::eval::{self, AggregationRule, ImageDecision, PatchPrediction};
use histotile_core::features::{self, FeatureKind, FeatureMatrix, PatchKey, PcaModel};
use histotile_core::filterbank;
use histotile_core::imaging::{self, BinaryMask, Raster, PATCH_SIDE};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: histotile_core::Error) -> PyErr {
    if e.is_usage() || matches!(e, histotile_core::Error::Shape(_) | histotile_core::Error::WidthMismatch { .. }) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn rows_ref(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    rows.iter().map(Vec::as_slice).collect()
}

/// Patch origins along one axis.
#[pyfunction]
#[pyo3(signature = (dim, side = PATCH_SIDE))]
fn axis_offsets(dim: usize, side: usize) -> PyResult<Vec<usize>> {
    imaging::axis_offsets(dim, side).map_err(to_py)
}

/// `(col, row, x, y)` for every patch, row-major.
#[pyfunction]
#[pyo3(signature = (width, height, side = PATCH_SIDE))]
fn patch_grid(width: usize, height: usize, side: usize) -> PyResult<Vec<(usize, usize, usize, usize)>> {
    Ok(imaging::patch_grid(width, height, side).map_err(to_py)?.into_iter().map(|c| (c.col, c.row, c.x, c.y)).collect())
}

#[pyfunction]
fn otsu_threshold(pixels: Vec<u8>) -> PyResult<u8> {
    imaging::otsu_threshold_samples(&pixels).map_err(to_py)
}

/// Nine-bin TAS histogram of a row-major boolean mask.
#[pyfunction]
fn tas_histogram(width: usize, height: usize, bits: Vec<bool>) -> PyResult<Vec<f64>> {
    let mask = BinaryMask::new(width, height, bits).map_err(to_py)?;
    Ok(features::tas_histogram(&mask).to_vec())
}

/// 162 PFTAS values of an interleaved RGB buffer.
#[pyfunction]
fn pftas(width: usize, height: usize, rgb: Vec<u8>) -> PyResult<Vec<f64>> {
    features::pftas(&Raster::rgb(width, height, rgb).map_err(to_py)?).map_err(to_py)
}

/// `{structure code: (images, relevant)}` for filter 1..=7.
#[pyfunction]
fn filter_spec(index: usize) -> PyResult<Vec<(String, usize, bool)>> {
    let spec = filterbank::build_filter_spec(index).map_err(to_py)?;
    Ok(spec.counts().into_iter().map(|(s, n)| (s.code().to_string(), n, spec.is_relevant(s))).collect())
}

fn rule(name: &str) -> PyResult<AggregationRule> {
    match name {
        "sum" => Ok(AggregationRule::Sum),
        "vote" => Ok(AggregationRule::Vote),
        _ => Err(PyValueError::new_err(format!("rule must be 'sum' or 'vote', got '{name}'"))),
    }
}

/// True when the image is predicted malign from its patch probabilities.
#[pyfunction]
#[pyo3(signature = (probabilities, rule_name = "sum"))]
fn aggregate_image(probabilities: Vec<f64>, rule_name: &str) -> PyResult<bool> {
    let preds: Vec<PatchPrediction> = probabilities
        .iter()
        .enumerate()
        .map(|(i, &p)| PatchPrediction::new(PatchKey::new("p", "i", i, 0), p))
        .collect();
    let d = eval::aggregate_image(&preds, rule(rule_name)?, BinaryLabel::Malign).map_err(to_py)?;
    Ok(d.predicted.is_malign())
}

/// Share of a patient's images classified correctly, given one flag per image.
#[pyfunction]
fn patient_score(correct: Vec<bool>) -> PyResult<f64> {
    let decisions: Vec<ImageDecision> = correct
        .iter()
        .enumerate()
        .map(|(i, &ok)| ImageDecision {
            image_id: i.to_string(),
            patient_id: "p".into(),
            rule: AggregationRule::Sum,
            predicted: BinaryLabel::Malign,
            truth: BinaryLabel::from_malign(ok),
            n_patches_used: 1,
        })
        .collect();
    eval::patient_score(&decisions).map_err(to_py)
}

#[pyfunction]
fn overall_accuracy(scores: Vec<f64>) -> PyResult<f64> {
    eval::overall_accuracy(&scores).map_err(to_py)
}

#[pyfunction]
fn mean_std(values: Vec<f64>) -> (f64, f64) {
    eval::mean_std(&values)
}

/// Image and patient counts of a corpus directory.
#[pyfunction]
#[pyo3(signature = (root, kind = "breakhis"))]
fn scan_corpus(root: PathBuf, kind: &str) -> PyResult<(usize, usize)> {
    let kind: CorpusKind = kind.parse().map_err(to_py)?;
    let m = dataset::scan_corpus(&root, kind).map_err(to_py)?;
    Ok((m.entries.len(), m.patients().len()))
}

#[pyfunction]
#[pyo3(signature = (root, patients_per_class = 4, images_per_patient = 3, seed = 0))]
fn generate_synthetic_corpus(root: PathBuf, patients_per_class: usize, images_per_patient: usize, seed: u64) -> PyResult<usize> {
    let spec = dataset::SynthSpec { patients_per_class, images_per_patient, ..Default::default() };
    Ok(dataset::generate_synthetic_corpus(&root, &spec, seed).map_err(to_py)?.entries.len())
}

/// Eight CRC structure codes in table order.
#[pyfunction]
fn structures() -> Vec<&'static str> {
    CrcStructure::ALL.iter().map(|s| s.code()).collect()
}

/// Best `(c, gamma, accuracy)` by stratified cross-validation.
#[pyfunction]
#[pyo3(signature = (rows, labels, grid = None, folds = CV_FOLDS, seed = 0, tol = DEFAULT_TOL))]
fn grid_search(
    rows: Vec<Vec<f64>>,
    labels: Vec<bool>,
    grid: Option<Vec<(f64, f64)>>,
    folds: usize,
    seed: u64,
    tol: f64,
) -> PyResult<(f64, f64, f64)> {
    let grid = match grid {
        Some(g) => g.into_iter().map(|(c, gamma)| KernelParams::new(c, gamma)).collect::<Result<Vec<_>, _>>().map_err(to_py)?,
        None => default_grid(),
    };
    let r = classifier::grid_search(&rows_ref(&rows), &labels, &grid, folds, seed, tol).map_err(to_py)?;
    Ok((r.best.c, r.best.gamma, r.best_accuracy))
}

/// RBF support vector machine with Platt-calibrated probabilities.
#[pyclass(name = "Classifier", module = "histotile", frozen)]
struct PyClassifier {
    inner: TrainedClassifier,
}

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    #[pyo3(signature = (rows, labels, c = 1.0, gamma = 0.5, tol = DEFAULT_TOL, seed = 0))]
    fn train(rows: Vec<Vec<f64>>, labels: Vec<bool>, c: f64, gamma: f64, tol: f64, seed: u64) -> PyResult<Self> {
        let params = KernelParams::new(c, gamma).map_err(to_py)?;
        let inner = classifier::train(&rows_ref(&rows), &labels, params, tol, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: TrainedClassifier::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn decision(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.decision(&x).map_err(to_py)
    }

    fn predict_proba(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict_proba(&x).map_err(to_py)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<bool> {
        self.inner.predict(&x).map_err(to_py)
    }

    fn kkt_residuals(&self, rows: Vec<Vec<f64>>, labels: Vec<bool>) -> PyResult<Vec<f64>> {
        self.inner.kkt_residuals(&rows_ref(&rows), &labels).map_err(to_py)
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.params.c
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.params.gamma
    }

    #[getter]
    fn n_support(&self) -> usize {
        self.inner.support_vectors.len()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias
    }

    fn __repr__(&self) -> String {
        format!("Classifier(c={}, gamma={}, n_support={})", self.c(), self.gamma(), self.n_support())
    }
}

/// Principal components of a training matrix.
#[pyclass(name = "Pca", module = "histotile", frozen)]
struct PyPca {
    inner: PcaModel,
}

#[pymethods]
impl PyPca {
    #[staticmethod]
    fn fit(rows: Vec<Vec<f64>>, k: usize) -> PyResult<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let keys = (0..rows.len()).map(|i| PatchKey::new("", i.to_string(), 0, 0)).collect();
        let m = FeatureMatrix::from_rows(FeatureKind::DeepPca(width.max(1)), keys, rows).map_err(to_py)?;
        Ok(Self { inner: features::fit_pca(&m, k).map_err(to_py)? })
    }

    fn transform(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.transform(&x).map_err(to_py)
    }

    fn reconstruct(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.reconstruct(&z).map_err(to_py)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.clone()
    }

    #[getter]
    fn components(&self) -> Vec<Vec<f64>> {
        self.inner.components.clone()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    fn explained_variance_ratio(&self) -> f64 {
        self.inner.explained_variance_ratio()
    }

    fn __repr__(&self) -> String {
        format!("Pca(k={}, width={})", self.inner.k(), self.inner.input_width())
    }
}

#[pymodule]
fn histotile(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PATCH_SIDE", PATCH_SIDE)?;
    m.add("PFTAS_LEN", features::PFTAS_LEN)?;
    m.add_function(wrap_pyfunction!(axis_offsets, m)?)?;
    m.add_function(wrap_pyfunction!(patch_grid, m)?)?;
    m.add_function(wrap_pyfunction!(otsu_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(tas_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(pftas, m)?)?;
    m.add_function(wrap_pyfunction!(filter_spec, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_image, m)?)?;
    m.add_function(wrap_pyfunction!(patient_score, m)?)?;
    m.add_function(wrap_pyfunction!(overall_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(mean_std, m)?)?;
    m.add_function(wrap_pyfunction!(scan_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(structures, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyPca>()?;
    Ok(())
}
