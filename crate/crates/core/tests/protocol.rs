mod common;

use std::fs;

use histotile_core::cache::FeatureCache;
use histotile_core::classifier::KernelParams;
use histotile_core::dataset::{
    generate_synthetic_corpus, generate_synthetic_crc, make_folds, BinaryLabel, CorpusManifest, FoldAssignment,
    SynthSpec,
};
use histotile_core::eval::{run_experiment, ExperimentConfig};
use histotile_core::features::{FeatureKind, FeatureMatrix, DEEP_LEN};
use histotile_core::filterbank::{build_filter_spec, train_relevance_model, FilterTrainingOptions, RejectAll};
use histotile_core::pipeline::{FeatureSource, PatchSet};

fn small_grid() -> Vec<KernelParams> {
    [(1.0, 2f64.powi(-7)), (8.0, 2f64.powi(-7)), (8.0, 2f64.powi(-3)), (64.0, 2f64.powi(-9))]
        .iter()
        .map(|&(c, g)| KernelParams::new(c, g).unwrap())
        .collect()
}

fn corpus(dir: &std::path::Path) -> (CorpusManifest, Vec<FoldAssignment>, PatchSet) {
    let spec = SynthSpec { patients_per_class: 5, images_per_patient: 2, width: 450, height: 300, ..SynthSpec::default() };
    let manifest = generate_synthetic_corpus(dir, &spec, 3).unwrap();
    let folds = make_folds(&manifest, None, 3).unwrap();
    let entries: Vec<_> = manifest.entries.iter().collect();
    let patches = FeatureSource::pftas(None).patch_features(&manifest, &entries).unwrap();
    (manifest, folds, patches)
}

#[test]
fn filter_training_is_accurate_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let crc = generate_synthetic_crc(dir.path(), 26, 64, 4).unwrap();
    let source = FeatureSource::pftas(None);
    let opts = FilterTrainingOptions::new(small_grid(), 4);
    for index in [4, 7] {
        let spec = build_filter_spec(index).unwrap().scaled(1.0 / 25.0).unwrap();
        let a = train_relevance_model(&crc, &spec, &source, &opts).unwrap();
        assert!(a.validation_accuracy >= 0.95, "filter {index}: {}", a.validation_accuracy);
        let total = spec.relevant_total() + spec.irrelevant_total();
        assert_eq!(a.train_count + a.validation_count, total);

        let b = train_relevance_model(&crc, &spec, &source, &opts).unwrap();
        let (pa, pb) = (dir.path().join(format!("a{index}.json")), dir.path().join(format!("b{index}.json")));
        a.save(&pa).unwrap();
        b.save(&pb).unwrap();
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
    }
}

#[test]
fn not_enough_tiles_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let crc = generate_synthetic_crc(dir.path(), 2, 32, 4).unwrap();
    let spec = build_filter_spec(1).unwrap();
    let opts = FilterTrainingOptions::new(small_grid(), 4);
    assert!(train_relevance_model(&crc, &spec, &FeatureSource::pftas(None), &opts).is_err());
}

#[test]
fn test_labels_never_reach_training() {
    let dir = tempfile::tempdir().unwrap();
    let (_, folds, patches) = corpus(dir.path());
    let fold = &folds[..1];
    let cfg = ExperimentConfig::new(FeatureKind::Pftas, small_grid(), 9);
    let base = run_experiment(&cfg, &patches, fold, None).unwrap();

    let mut swapped = patches.clone();
    for m in &mut swapped.meta {
        if fold[0].is_test(&m.key.patient_id) {
            m.label = BinaryLabel::from_malign(!m.label.is_malign());
        }
    }
    let other = run_experiment(&cfg, &swapped, fold, None).unwrap();
    assert_eq!(base.folds[0].best_params, other.folds[0].best_params);
    let pa: Vec<u64> = base.folds[0].predictions.iter().map(|p| p.probability_malign.to_bits()).collect();
    let pb: Vec<u64> = other.folds[0].predictions.iter().map(|p| p.probability_malign.to_bits()).collect();
    assert_eq!(pa, pb);
}

#[test]
fn rejecting_everything_flags_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (_, folds, patches) = corpus(dir.path());
    let cfg = ExperimentConfig::new(FeatureKind::Pftas, small_grid(), 1);
    let rep = run_experiment(&cfg, &patches, &folds, Some(&RejectAll)).unwrap();
    assert!(rep.flagged);
    assert!(rep.summary.is_empty());
    assert!(rep.folds.iter().all(|f| f.patient_sum.is_none()));

    let csv_path = dir.path().join("r.csv");
    rep.write_csv(&csv_path).unwrap();
    assert_eq!(fs::read_to_string(&csv_path).unwrap().trim(), "magnification,level,rule,mean,std");
}

#[test]
fn report_files_have_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let (_, folds, patches) = corpus(dir.path());
    let cfg = ExperimentConfig::new(FeatureKind::Pftas, small_grid(), 1);
    let rep = run_experiment(&cfg, &patches, &folds, None).unwrap();
    assert_eq!(rep.folds.len(), 5);
    for r in &rep.summary {
        assert!((0.0..=100.0).contains(&r.mean) && r.std >= 0.0);
    }
    let path = dir.path().join("r.csv");
    rep.write_csv(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "magnification,level,rule,mean,std");
    assert_eq!(lines.len(), 7);
    assert!(lines.iter().any(|l| l.contains(",patient,sum,")));
    let json = dir.path().join("r.json");
    rep.write_json(&json).unwrap();
    let back: histotile_core::eval::RunReport = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(back.summary, rep.summary);
}

#[test]
fn cached_features_equal_fresh_ones() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { patients_per_class: 1, images_per_patient: 2, width: 300, height: 300, ..SynthSpec::default() };
    let manifest = generate_synthetic_corpus(&dir.path().join("c"), &spec, 1).unwrap();
    let entries: Vec<_> = manifest.entries.iter().collect();
    let cache = FeatureCache::new(dir.path().join("cache")).unwrap();
    let fresh = FeatureSource::pftas(None).patch_features(&manifest, &entries).unwrap();
    let first = FeatureSource::pftas(Some(cache.clone())).patch_features(&manifest, &entries).unwrap();
    assert_eq!(fs::read_dir(cache.dir()).unwrap().count(), entries.len());
    let second = FeatureSource::pftas(Some(cache)).patch_features(&manifest, &entries).unwrap();
    assert_eq!(fresh, first);
    assert_eq!(fresh, second);
}

fn fake_deep(patches: &PatchSet) -> FeatureMatrix {
    use rand::Rng;
    let mut r = common::rng(77);
    let mut m = FeatureMatrix::empty(FeatureKind::Deep);
    for meta in &patches.meta {
        let shift = if meta.label.is_malign() { 0.8 } else { -0.8 };
        let row: Vec<f64> = (0..DEEP_LEN).map(|j| if j < 16 { shift } else { 0.0 } + r.random_range(-0.5..0.5)).collect();
        m.push(meta.key.clone(), &row).unwrap();
    }
    m
}

#[test]
fn deep_features_with_pca() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, folds, patches) = corpus(dir.path());
    let csv = dir.path().join("deep.csv");
    fake_deep(&patches).write_csv(&csv).unwrap();
    let table = histotile_core::features::import_deep_features(&csv).unwrap();
    let source = FeatureSource::deep(table).unwrap();
    let entries: Vec<_> = manifest.entries.iter().collect();
    let deep = source.patch_features(&manifest, &entries).unwrap();
    assert_eq!(deep.meta, patches.meta);

    let cfg = ExperimentConfig { pca_k: Some(10), ..ExperimentConfig::new(FeatureKind::Deep, small_grid(), 2) };
    let rep = run_experiment(&cfg, &deep, &folds, None).unwrap();
    assert!(rep.summary_row("patient", "sum").unwrap().mean >= 95.0);

    let pftas_cfg = ExperimentConfig { pca_k: Some(10), ..ExperimentConfig::new(FeatureKind::Pftas, small_grid(), 2) };
    assert!(run_experiment(&pftas_cfg, &patches, &folds, None).is_err());
}

#[test]
fn missing_deep_rows_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _, patches) = corpus(dir.path());
    let full = fake_deep(&patches);
    let keep: Vec<usize> = (0..full.len()).filter(|&i| full.keys()[i].image_id != manifest.entries[0].image_id).collect();
    let source = FeatureSource::deep(full.select(&keep)).unwrap();
    let entries: Vec<_> = manifest.entries.iter().collect();
    let err = source.patch_features(&manifest, &entries).unwrap_err().to_string();
    assert!(err.contains(&manifest.entries[0].image_id), "{err}");
}
