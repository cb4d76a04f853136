//! Relevance filters: two-class regroupings of the eight CRC structures,
//! an SVM per regrouping, and retention accounting when a filter is applied
//! to tumour patches.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::{grid_search, train, KernelParams, TrainedClassifier, CV_FOLDS, DEFAULT_TOL};
use crate::dataset::{CorpusManifest, CrcStructure, ImageEntry, Magnification};
use crate::error::{Error, Result};
use crate::features::{fit_pca, FeatureKind, PcaModel};
use crate::pipeline::{FeatureSource, PatchMeta};
use crate::seed::rng_for;

pub const FILTER_COUNT: usize = 7;
const VALIDATION_NUM: usize = 15;
const VALIDATION_DEN: usize = 100;

// Images per structure (T, ST, C, L, D, M, A, E) for filters 1..=7. The
// first `index` structures are relevant, the rest irrelevant.
const COUNTS: [[usize; 8]; FILTER_COUNT] = [
    [625, 89, 89, 89, 89, 89, 89, 89],
    [625, 625, 208, 208, 208, 208, 208, 208],
    [625, 625, 625, 375, 375, 375, 375, 375],
    [625, 625, 625, 625, 625, 625, 625, 625],
    [375, 375, 375, 375, 375, 625, 625, 625],
    [208, 208, 208, 208, 208, 208, 625, 625],
    [89, 89, 89, 89, 89, 89, 89, 625],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub index: usize,
    pub relevant_counts: BTreeMap<CrcStructure, usize>,
    pub irrelevant_counts: BTreeMap<CrcStructure, usize>,
}

impl FilterSpec {
    pub fn relevant_total(&self) -> usize {
        self.relevant_counts.values().sum()
    }

    pub fn irrelevant_total(&self) -> usize {
        self.irrelevant_counts.values().sum()
    }

    pub fn is_relevant(&self, s: CrcStructure) -> bool {
        self.relevant_counts.contains_key(&s)
    }

    /// Every count multiplied by `factor`, rounded half up, at least 1. For
    /// corpora smaller than the full CRC collection.
    pub fn scaled(&self, factor: f64) -> Result<FilterSpec> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::InvalidArgument(format!("scale {factor} is not in (0, 1]")));
        }
        let scale = |m: &BTreeMap<CrcStructure, usize>| {
            m.iter().map(|(&s, &n)| (s, ((n as f64 * factor + 0.5).floor() as usize).max(1))).collect()
        };
        Ok(FilterSpec {
            index: self.index,
            relevant_counts: scale(&self.relevant_counts),
            irrelevant_counts: scale(&self.irrelevant_counts),
        })
    }

    /// `(structure, count)` in table order.
    pub fn counts(&self) -> Vec<(CrcStructure, usize)> {
        CrcStructure::ALL
            .iter()
            .map(|s| (*s, self.relevant_counts.get(s).or(self.irrelevant_counts.get(s)).copied().unwrap_or(0)))
            .collect()
    }
}

/// Filter `index` in 1..=7.
///
/// Filter 1 takes 89 images of each irrelevant structure (623 in total)
/// and filter 7 mirrors it; per-structure counts are authoritative over the
/// rounded class totals.
pub fn build_filter_spec(index: usize) -> Result<FilterSpec> {
    if !(1..=FILTER_COUNT).contains(&index) {
        return Err(Error::InvalidArgument(format!("filter index {index} is not in 1..=7")));
    }
    let mut relevant_counts = BTreeMap::new();
    let mut irrelevant_counts = BTreeMap::new();
    for (pos, (&s, &n)) in CrcStructure::ALL.iter().zip(&COUNTS[index - 1]).enumerate() {
        if pos < index {
            relevant_counts.insert(s, n);
        } else {
            irrelevant_counts.insert(s, n);
        }
    }
    Ok(FilterSpec { index, relevant_counts, irrelevant_counts })
}

/// Decides whether a patch is worth keeping.
pub trait Relevance: Sync {
    /// 0 means "no filter".
    fn filter_index(&self) -> usize;
    fn is_relevant(&self, features: &[f64]) -> Result<bool>;
}

/// Keeps every patch.
#[derive(Debug, Clone, Copy)]
pub struct AcceptAll;

/// Drops every patch.
#[derive(Debug, Clone, Copy)]
pub struct RejectAll;

impl Relevance for AcceptAll {
    fn filter_index(&self) -> usize {
        0
    }

    fn is_relevant(&self, _: &[f64]) -> Result<bool> {
        Ok(true)
    }
}

impl Relevance for RejectAll {
    fn filter_index(&self) -> usize {
        0
    }

    fn is_relevant(&self, _: &[f64]) -> Result<bool> {
        Ok(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceModel {
    pub filter: FilterSpec,
    /// Kind of the vectors the classifier sees (after PCA when present).
    pub feature_kind: FeatureKind,
    pub pca: Option<PcaModel>,
    pub classifier: TrainedClassifier,
    pub best_params: KernelParams,
    pub cv_accuracy: f64,
    pub validation_accuracy: f64,
    pub train_count: usize,
    pub validation_count: usize,
}

impl RelevanceModel {
    /// Kind of the raw patch features this model consumes.
    pub fn input_kind(&self) -> FeatureKind {
        match self.feature_kind {
            FeatureKind::DeepPca(_) => FeatureKind::Deep,
            k => k,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

impl Relevance for RelevanceModel {
    fn filter_index(&self) -> usize {
        self.filter.index
    }

    fn is_relevant(&self, features: &[f64]) -> Result<bool> {
        match &self.pca {
            Some(pca) => self.classifier.predict(&pca.transform(features)?),
            None => self.classifier.predict(features),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterTrainingOptions {
    pub grid: Vec<KernelParams>,
    pub pca_k: Option<usize>,
    pub tol: f64,
    pub seed: u64,
}

impl FilterTrainingOptions {
    pub fn new(grid: Vec<KernelParams>, seed: u64) -> Self {
        Self { grid, pca_k: None, tol: DEFAULT_TOL, seed }
    }
}

fn half_up(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Subsamples the CRC corpus to the filter's per-structure counts, splits
/// it 85/15 stratified by relevance, grid-searches and trains on the 85%
/// and scores the held-out 15%.
pub fn train_relevance_model(
    crc: &CorpusManifest,
    spec: &FilterSpec,
    source: &FeatureSource,
    opts: &FilterTrainingOptions,
) -> Result<RelevanceModel> {
    let mut by_structure: BTreeMap<CrcStructure, Vec<&ImageEntry>> = BTreeMap::new();
    for e in &crc.entries {
        if let Some(s) = e.structure() {
            by_structure.entry(s).or_default().push(e);
        }
    }

    let mut chosen: Vec<(&ImageEntry, bool)> = Vec::new();
    for (s, n) in spec.counts() {
        let mut pool = by_structure.remove(&s).unwrap_or_default();
        if pool.len() < n {
            return Err(Error::Insufficient { what: format!("structure {s}"), needed: n, available: pool.len() });
        }
        pool.sort_by(|a, b| a.path.cmp(&b.path));
        pool.shuffle(&mut rng_for(opts.seed, &format!("filter/{}/subsample/{s}", spec.index)));
        chosen.extend(pool.into_iter().take(n).map(|e| (e, spec.is_relevant(s))));
    }

    let mut split_rng = rng_for(opts.seed, &format!("filter/{}/split", spec.index));
    let (mut train_idx, mut val_idx) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..chosen.len()).filter(|&i| chosen[i].1 == class).collect();
        idx.shuffle(&mut split_rng);
        let n_val = half_up(VALIDATION_NUM * idx.len(), VALIDATION_DEN);
        val_idx.extend_from_slice(&idx[..n_val]);
        train_idx.extend_from_slice(&idx[n_val..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let entries: Vec<&ImageEntry> = chosen.iter().map(|(e, _)| *e).collect();
    let features = source.tile_features(crc, &entries)?;
    let train_x = features.select(&train_idx);
    let val_x = features.select(&val_idx);

    let (pca, train_x, val_x, feature_kind) = match opts.pca_k {
        Some(k) => {
            if source.kind() != FeatureKind::Deep {
                return Err(Error::Config("PCA is only available for deep features".into()));
            }
            let pca = fit_pca(&train_x, k)?;
            let (t, v) = (pca.transform_matrix(&train_x)?, pca.transform_matrix(&val_x)?);
            (Some(pca), t, v, FeatureKind::DeepPca(k))
        }
        None => (None, train_x, val_x, source.kind()),
    };

    let train_rows: Vec<&[f64]> = train_x.rows().collect();
    let train_y: Vec<bool> = train_idx.iter().map(|&i| chosen[i].1).collect();
    let report = grid_search(&train_rows, &train_y, &opts.grid, CV_FOLDS, opts.seed, opts.tol)?;
    let classifier = train(&train_rows, &train_y, report.best, opts.tol, opts.seed)?;

    let mut correct = 0;
    for (row, &i) in val_x.rows().zip(&val_idx) {
        if classifier.predict(row)? == chosen[i].1 {
            correct += 1;
        }
    }
    Ok(RelevanceModel {
        filter: spec.clone(),
        feature_kind,
        pca,
        classifier,
        best_params: report.best,
        cv_accuracy: report.best_accuracy,
        validation_accuracy: if val_idx.is_empty() { 0.0 } else { correct as f64 / val_idx.len() as f64 },
        train_count: train_idx.len(),
        validation_count: val_idx.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub magnification: Option<Magnification>,
    pub filter: usize,
    pub total_patches: usize,
    pub retained_patches: usize,
    pub total_images: usize,
    pub retained_images: usize,
    pub total_patients: usize,
    pub pct_patches: f64,
    pub pct_images: f64,
    /// Patients keeping at least one image.
    pub pct_patients: f64,
    /// Mean over patients of the share of their images kept.
    pub pct_patients_weighted: f64,
    pub excluded_images: Vec<String>,
    pub excluded_patients: Vec<String>,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Retention accounting per magnification. An image is kept iff at least
/// one of its patches is kept; a patient is kept iff at least one of their
/// images is.
pub fn retention_stats(meta: &[PatchMeta], retained: &[bool], filter: usize) -> Vec<RetentionStats> {
    let mut by_mag: BTreeMap<Option<Magnification>, Vec<usize>> = BTreeMap::new();
    for (i, m) in meta.iter().enumerate() {
        by_mag.entry(m.magnification).or_default().push(i);
    }
    by_mag
        .into_iter()
        .map(|(magnification, idx)| {
            // (patient, image) -> kept
            let mut images: BTreeMap<(&str, &str), bool> = BTreeMap::new();
            for &i in &idx {
                let k = &meta[i].key;
                *images.entry((k.patient_id.as_str(), k.image_id.as_str())).or_insert(false) |= retained[i];
            }
            let mut patients: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for (&(p, _), &kept) in &images {
                let e = patients.entry(p).or_insert((0, 0));
                e.0 += usize::from(kept);
                e.1 += 1;
            }
            let retained_patches = idx.iter().filter(|&&i| retained[i]).count();
            let retained_images = images.values().filter(|&&k| k).count();
            let kept_patients = patients.values().filter(|(k, _)| *k > 0).count();
            let weighted = if patients.is_empty() {
                0.0
            } else {
                patients.values().map(|&(k, t)| pct(k, t)).sum::<f64>() / patients.len() as f64
            };
            RetentionStats {
                magnification,
                filter,
                total_patches: idx.len(),
                retained_patches,
                total_images: images.len(),
                retained_images,
                total_patients: patients.len(),
                pct_patches: pct(retained_patches, idx.len()),
                pct_images: pct(retained_images, images.len()),
                pct_patients: pct(kept_patients, patients.len()),
                pct_patients_weighted: weighted,
                excluded_images: images.iter().filter(|(_, &k)| !k).map(|((_, im), _)| im.to_string()).collect(),
                excluded_patients: patients.iter().filter(|(_, (k, _))| *k == 0).map(|(p, _)| p.to_string()).collect(),
            }
        })
        .collect()
}

/// Runs the filter over `features` rows (one per `meta` entry).
pub fn apply_filter(
    model: &dyn Relevance,
    meta: &[PatchMeta],
    features: &crate::features::FeatureMatrix,
) -> Result<(Vec<bool>, Vec<RetentionStats>)> {
    use rayon::prelude::*;
    if meta.len() != features.len() {
        return Err(Error::Shape(format!("{} patch records for {} feature rows", meta.len(), features.len())));
    }
    let retained = (0..features.len())
        .into_par_iter()
        .map(|i| model.is_relevant(features.row(i)))
        .collect::<Result<Vec<bool>>>()?;
    let stats = retention_stats(meta, &retained, model.filter_index());
    Ok((retained, stats))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Survival {
    Pass,
    /// The run is not considered: these patients lost every image.
    Flagged { lost_patients: Vec<String> },
}

impl Survival {
    pub fn is_flagged(&self) -> bool {
        matches!(self, Survival::Flagged { .. })
    }
}

/// Flags the run when any patient of interest (all patients if `None`)
/// lost all of their images.
pub fn assert_patient_survival(stats: &RetentionStats, of_interest: Option<&BTreeSet<String>>) -> Survival {
    let lost: Vec<String> = stats
        .excluded_patients
        .iter()
        .filter(|p| of_interest.is_none_or(|set| set.contains(*p)))
        .cloned()
        .collect();
    if lost.is_empty() {
        Survival::Pass
    } else {
        Survival::Flagged { lost_patients: lost }
    }
}

/// `magnification,filter,pct_patches,pct_images,pct_patients,flagged`
pub fn write_retention_csv(rows: &[(RetentionStats, bool)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["magnification", "filter", "pct_patches", "pct_images", "pct_patients", "flagged"])?;
    for (s, flagged) in rows {
        w.write_record([
            s.magnification.map(|m| m.to_string()).unwrap_or_default(),
            s.filter.to_string(),
            format!("{:.1}", s.pct_patches),
            format!("{:.1}", s.pct_images),
            format!("{:.1}", s.pct_patients),
            flagged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
