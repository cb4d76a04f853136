//! Per-fold protocol: filter, train on training patients, predict test
//! patches, aggregate to images and patients, and summarise over folds.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{grid_search, train, KernelParams, TrainedClassifier, CV_FOLDS, DEFAULT_TOL};
use crate::dataset::{BinaryLabel, FoldAssignment, Magnification};
use crate::error::{Error, Result};
use crate::features::{fit_pca, FeatureKind, FeatureMatrix, PatchKey, PcaModel};
use crate::filterbank::{apply_filter, assert_patient_survival, Relevance, RetentionStats, Survival};
use crate::pipeline::PatchSet;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPrediction {
    pub key: PatchKey,
    pub probability_malign: f64,
    pub hard_label: BinaryLabel,
}

impl PatchPrediction {
    pub fn new(key: PatchKey, probability_malign: f64) -> Self {
        let hard_label = BinaryLabel::from_malign(probability_malign >= 0.5);
        Self { key, probability_malign, hard_label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationRule {
    Sum,
    Vote,
}

impl AggregationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationRule::Sum => "sum",
            AggregationRule::Vote => "vote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDecision {
    pub image_id: String,
    pub patient_id: String,
    pub rule: AggregationRule,
    pub predicted: BinaryLabel,
    pub truth: BinaryLabel,
    pub n_patches_used: usize,
}

impl ImageDecision {
    pub fn is_correct(&self) -> bool {
        self.predicted == self.truth
    }
}

fn sum_rule(preds: &[PatchPrediction]) -> BinaryLabel {
    // Sorted so the floating-point sum does not depend on patch order.
    let mut p: Vec<f64> = preds.iter().map(|p| p.probability_malign).collect();
    p.sort_by(f64::total_cmp);
    BinaryLabel::from_malign(p.iter().sum::<f64>() / p.len() as f64 >= 0.5)
}

/// Sum rule: malign iff the mean malign probability is at least 0.5.
/// Vote rule: majority of hard labels, with ties decided by the sum rule.
pub fn aggregate_image(preds: &[PatchPrediction], rule: AggregationRule, truth: BinaryLabel) -> Result<ImageDecision> {
    let first = preds.first().ok_or(Error::Empty("patch predictions"))?;
    if preds.iter().any(|p| p.key.image_id != first.key.image_id || p.key.patient_id != first.key.patient_id) {
        return Err(Error::InvalidArgument("predictions span more than one image".into()));
    }
    let predicted = match rule {
        AggregationRule::Sum => sum_rule(preds),
        AggregationRule::Vote => {
            let malign = preds.iter().filter(|p| p.hard_label == BinaryLabel::Malign).count();
            let benign = preds.len() - malign;
            match malign.cmp(&benign) {
                std::cmp::Ordering::Greater => BinaryLabel::Malign,
                std::cmp::Ordering::Less => BinaryLabel::Benign,
                std::cmp::Ordering::Equal => sum_rule(preds),
            }
        }
    };
    Ok(ImageDecision {
        image_id: first.key.image_id.clone(),
        patient_id: first.key.patient_id.clone(),
        rule,
        predicted,
        truth,
        n_patches_used: preds.len(),
    })
}

/// Share of one patient's images classified correctly.
pub fn patient_score(decisions: &[ImageDecision]) -> Result<f64> {
    if decisions.is_empty() {
        return Err(Error::Empty("image decisions"));
    }
    Ok(decisions.iter().filter(|d| d.is_correct()).count() as f64 / decisions.len() as f64)
}

/// Unweighted mean of patient scores, as a percentage.
pub fn overall_accuracy(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("patient scores"));
    }
    Ok(100.0 * scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean and sample (n - 1) standard deviation; the deviation is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub magnification: Option<Magnification>,
    /// 0 = no filter.
    pub filter_index: usize,
    pub feature_kind: FeatureKind,
    pub pca_k: Option<usize>,
    pub grid: Vec<KernelParams>,
    pub seed: u64,
    pub tol: f64,
}

impl ExperimentConfig {
    pub fn new(feature_kind: FeatureKind, grid: Vec<KernelParams>, seed: u64) -> Self {
        Self { magnification: None, filter_index: 0, feature_kind, pca_k: None, grid, seed, tol: DEFAULT_TOL }
    }

    fn validate(&self, patches: &PatchSet) -> Result<()> {
        if patches.features.kind() != self.feature_kind {
            return Err(Error::Config(format!(
                "patches carry {} features but the run asks for {}",
                patches.features.kind(),
                self.feature_kind
            )));
        }
        if self.pca_k.is_some() && self.feature_kind != FeatureKind::Deep {
            return Err(Error::Config("PCA is only available for deep features".into()));
        }
        if self.filter_index > 7 {
            return Err(Error::Config(format!("filter index {} is not in 0..=7", self.filter_index)));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("empty parameter grid".into()));
        }
        Ok(())
    }
}

/// What a fold trains: optional PCA and the calibrated SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModel {
    pub pca: Option<PcaModel>,
    pub best_params: KernelParams,
    pub cv_accuracy: f64,
    pub classifier: TrainedClassifier,
}

impl FoldModel {
    fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.pca {
            Some(p) => p.transform(x),
            None => Ok(x.to_vec()),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.classifier.predict_proba(&self.project(x)?)
    }
}

/// Fits PCA (when `pca_k` is set), grid search and the final classifier on
/// the given training rows only.
pub fn train_fold(
    features: &FeatureMatrix,
    labels: &[BinaryLabel],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<FoldModel> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", features.len(), labels.len())));
    }
    let pca = cfg.pca_k.map(|k| fit_pca(features, k)).transpose()?;
    let projected = match &pca {
        Some(p) => p.transform_matrix(features)?,
        None => features.clone(),
    };
    let rows: Vec<&[f64]> = projected.rows().collect();
    let y: Vec<bool> = labels.iter().map(|l| l.is_malign()).collect();
    let report = grid_search(&rows, &y, &cfg.grid, CV_FOLDS, seed, cfg.tol)?;
    let classifier = train(&rows, &y, report.best, cfg.tol, seed)?;
    Ok(FoldModel { pca, best_params: report.best, cv_accuracy: report.best_accuracy, classifier })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold_index: usize,
    pub survival: Survival,
    pub retention: Option<RetentionStats>,
    pub train_patches: usize,
    pub test_patches: usize,
    pub best_params: Option<KernelParams>,
    /// Accuracies in percent; `None` when the fold is flagged.
    pub patch_filtered: Option<f64>,
    pub patch_unfiltered: Option<f64>,
    pub image_sum: Option<f64>,
    pub image_vote: Option<f64>,
    pub patient_sum: Option<f64>,
    pub patient_vote: Option<f64>,
    #[serde(skip)]
    pub predictions: Vec<PatchPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub level: String,
    pub rule: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub magnification: Option<Magnification>,
    pub filter_index: usize,
    pub feature_kind: FeatureKind,
    pub pca_k: Option<usize>,
    pub seed: u64,
    pub flagged: bool,
    pub folds: Vec<FoldOutcome>,
    pub summary: Vec<SummaryRow>,
}

impl RunReport {
    pub fn summary_row(&self, level: &str, rule: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.level == level && r.rule == rule)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// `magnification,level,rule,mean,std`; a flagged run has no rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["magnification", "level", "rule", "mean", "std"])?;
        let mag = self.magnification.map(|m| m.to_string()).unwrap_or_default();
        for r in &self.summary {
            w.write_record([mag.clone(), r.level.clone(), r.rule.clone(), format!("{:.4}", r.mean), format!("{:.4}", r.std)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn percent(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * correct as f64 / total as f64)
}

fn run_fold(
    cfg: &ExperimentConfig,
    patches: &PatchSet,
    fold: &FoldAssignment,
    filter: Option<&dyn Relevance>,
) -> Result<FoldOutcome> {
    let train_idx: Vec<usize> = (0..patches.len()).filter(|&i| fold.is_train(&patches.meta[i].key.patient_id)).collect();
    let test_idx: Vec<usize> = (0..patches.len()).filter(|&i| fold.is_test(&patches.meta[i].key.patient_id)).collect();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Config(format!("fold {} has no training or no test patches", fold.fold_index)));
    }

    let (retained, retention, survival) = match filter {
        Some(f) => {
            let (kept, stats) = apply_filter(f, &patches.meta, &patches.features)?;
            let test_patients: BTreeSet<String> = test_idx.iter().map(|&i| patches.meta[i].key.patient_id.clone()).collect();
            // Pooled over magnifications when the patch set holds several.
            let test_meta: Vec<_> = test_idx.iter().map(|&i| patches.meta[i].clone()).collect();
            let test_kept: Vec<bool> = test_idx.iter().map(|&i| kept[i]).collect();
            let test_stats = crate::filterbank::retention_stats(&test_meta, &test_kept, f.filter_index());
            let mut survival = Survival::Pass;
            for s in &test_stats {
                if let Survival::Flagged { lost_patients } = assert_patient_survival(s, Some(&test_patients)) {
                    survival = Survival::Flagged { lost_patients };
                    break;
                }
            }
            (kept, stats.into_iter().next(), survival)
        }
        None => (vec![true; patches.len()], None, Survival::Pass),
    };

    let fit_idx: Vec<usize> = train_idx.iter().copied().filter(|&i| retained[i]).collect();
    let mut outcome = FoldOutcome {
        fold_index: fold.fold_index,
        survival: survival.clone(),
        retention,
        train_patches: fit_idx.len(),
        test_patches: test_idx.iter().filter(|&&i| retained[i]).count(),
        best_params: None,
        patch_filtered: None,
        patch_unfiltered: None,
        image_sum: None,
        image_vote: None,
        patient_sum: None,
        patient_vote: None,
        predictions: Vec::new(),
    };
    if survival.is_flagged() {
        return Ok(outcome);
    }

    let fold_seed = derive_seed(cfg.seed, &format!("fold/{}", fold.fold_index));
    let train_x = patches.features.select(&fit_idx);
    let train_y: Vec<BinaryLabel> = fit_idx.iter().map(|&i| patches.meta[i].label).collect();
    let model = train_fold(&train_x, &train_y, cfg, fold_seed)?;
    outcome.best_params = Some(model.best_params);

    let probs: Vec<f64> = test_idx
        .par_iter()
        .map(|&i| model.predict_proba(patches.features.row(i)))
        .collect::<Result<_>>()?;
    let predictions: Vec<PatchPrediction> = test_idx
        .iter()
        .zip(&probs)
        .map(|(&i, &p)| PatchPrediction::new(patches.meta[i].key.clone(), p))
        .collect();

    let hits: Vec<bool> = test_idx.iter().zip(&predictions).map(|(&i, p)| p.hard_label == patches.meta[i].label).collect();
    let kept_hits: Vec<bool> = test_idx.iter().zip(&hits).filter(|(&i, _)| retained[i]).map(|(_, &h)| h).collect();
    outcome.patch_unfiltered = percent(hits.iter().filter(|&&h| h).count(), hits.len());
    outcome.patch_filtered = percent(kept_hits.iter().filter(|&&h| h).count(), kept_hits.len());

    // (patient, image) -> (truth, retained predictions)
    let mut images: BTreeMap<(String, String), (BinaryLabel, Vec<PatchPrediction>)> = BTreeMap::new();
    for (&i, pred) in test_idx.iter().zip(&predictions) {
        if !retained[i] {
            continue;
        }
        let m = &patches.meta[i];
        images
            .entry((m.key.patient_id.clone(), m.key.image_id.clone()))
            .or_insert_with(|| (m.label, Vec::new()))
            .1
            .push(pred.clone());
    }
    for rule in [AggregationRule::Sum, AggregationRule::Vote] {
        let mut by_patient: BTreeMap<&str, Vec<ImageDecision>> = BTreeMap::new();
        let mut correct = 0;
        for ((patient, _), (truth, preds)) in &images {
            let d = aggregate_image(preds, rule, *truth)?;
            correct += usize::from(d.is_correct());
            by_patient.entry(patient.as_str()).or_default().push(d);
        }
        let image_acc = percent(correct, images.len());
        let scores = by_patient.values().map(|d| patient_score(d)).collect::<Result<Vec<f64>>>()?;
        let patient_acc = overall_accuracy(&scores).ok();
        match rule {
            AggregationRule::Sum => (outcome.image_sum, outcome.patient_sum) = (image_acc, patient_acc),
            AggregationRule::Vote => (outcome.image_vote, outcome.patient_vote) = (image_acc, patient_acc),
        }
    }
    outcome.predictions = predictions;
    Ok(outcome)
}

/// Runs every fold and summarises the accuracies. Any flagged fold flags
/// the whole run and suppresses the summary.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    patches: &PatchSet,
    folds: &[FoldAssignment],
    filter: Option<&dyn Relevance>,
) -> Result<RunReport> {
    cfg.validate(patches)?;
    if folds.is_empty() {
        return Err(Error::Empty("fold assignments"));
    }
    let patches = match cfg.magnification {
        Some(m) => patches.at_magnification(m),
        None => patches.clone(),
    };
    if patches.is_empty() {
        return Err(Error::Empty("patches at the requested magnification"));
    }
    let outcomes = folds.iter().map(|f| run_fold(cfg, &patches, f, filter)).collect::<Result<Vec<_>>>()?;
    let flagged = outcomes.iter().any(|o| o.survival.is_flagged());

    let mut summary = Vec::new();
    if !flagged {
        type Pick = fn(&FoldOutcome) -> Option<f64>;
        let columns: [(&str, &str, Pick); 6] = [
            ("patch", "filtered", |o| o.patch_filtered),
            ("patch", "unfiltered", |o| o.patch_unfiltered),
            ("image", "sum", |o| o.image_sum),
            ("image", "vote", |o| o.image_vote),
            ("patient", "sum", |o| o.patient_sum),
            ("patient", "vote", |o| o.patient_vote),
        ];
        for (level, rule, pick) in columns {
            let values: Vec<f64> = outcomes.iter().filter_map(pick).collect();
            if values.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&values);
            summary.push(SummaryRow { level: level.into(), rule: rule.into(), mean, std });
        }
    }
    Ok(RunReport {
        magnification: cfg.magnification,
        filter_index: filter.map_or(0, |f| f.filter_index()),
        feature_kind: cfg.feature_kind,
        pca_k: cfg.pca_k,
        seed: cfg.seed,
        flagged,
        folds: outcomes,
        summary,
    })
}
