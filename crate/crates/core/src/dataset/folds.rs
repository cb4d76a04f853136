use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BinaryLabel, CorpusKind, CorpusManifest};
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const FOLD_COUNT: usize = 5;
const TEST_FRACTION_NUM: usize = 3;
const TEST_FRACTION_DEN: usize = 10;
const MIN_PATIENTS_PER_CLASS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    /// 1-based.
    pub fold_index: usize,
    pub train_patients: BTreeSet<String>,
    pub test_patients: BTreeSet<String>,
}

impl FoldAssignment {
    pub fn is_test(&self, patient_id: &str) -> bool {
        self.test_patients.contains(patient_id)
    }

    pub fn is_train(&self, patient_id: &str) -> bool {
        self.train_patients.contains(patient_id)
    }
}

/// Five patient-wise folds. A predefined fold file is reproduced verbatim;
/// otherwise each fold is an independent stratified split with roughly 30%
/// of the patients on the test side.
pub fn make_folds(
    manifest: &CorpusManifest,
    predefined: Option<&Path>,
    seed: u64,
) -> Result<Vec<FoldAssignment>> {
    if manifest.kind == CorpusKind::CrcLike {
        return Err(Error::InvalidArgument("folds need a breakhis-like or synthetic corpus".into()));
    }
    let labels = manifest.patient_labels()?;
    match predefined {
        Some(path) => {
            let folds = read_fold_file(path)?;
            validate_against(&folds, &labels, path)?;
            Ok(folds)
        }
        None => random_folds(&labels, seed),
    }
}

fn random_folds(labels: &BTreeMap<String, BinaryLabel>, seed: u64) -> Result<Vec<FoldAssignment>> {
    let mut by_class: BTreeMap<BinaryLabel, Vec<&str>> = BTreeMap::new();
    for (patient, &label) in labels {
        by_class.entry(label).or_default().push(patient);
    }
    for label in [BinaryLabel::Benign, BinaryLabel::Malign] {
        let n = by_class.get(&label).map_or(0, Vec::len);
        if n < MIN_PATIENTS_PER_CLASS {
            return Err(Error::TooFewPatients(format!(
                "{} {} patients, need at least {MIN_PATIENTS_PER_CLASS}",
                n,
                label.as_str()
            )));
        }
    }

    let total = labels.len();
    let n_test = (2 * TEST_FRACTION_NUM * total + TEST_FRACTION_DEN) / (2 * TEST_FRACTION_DEN);

    (1..=FOLD_COUNT)
        .map(|fold_index| {
            let mut rng = rng_for(seed, &format!("folds/{fold_index}"));
            let quotas = allocate(&by_class, n_test, total, &mut rng);
            let mut test_patients = BTreeSet::new();
            for (label, patients) in &by_class {
                let mut shuffled = patients.clone();
                shuffled.shuffle(&mut rng);
                test_patients.extend(shuffled.into_iter().take(quotas[label]).map(str::to_string));
            }
            let train_patients =
                labels.keys().filter(|p| !test_patients.contains(*p)).cloned().collect();
            Ok(FoldAssignment { fold_index, train_patients, test_patients })
        })
        .collect()
}

// Largest-remainder split of `n_test` across classes, proportional to class
// size; equal remainders are ordered randomly.
fn allocate(
    by_class: &BTreeMap<BinaryLabel, Vec<&str>>,
    n_test: usize,
    total: usize,
    rng: &mut impl Rng,
) -> BTreeMap<BinaryLabel, usize> {
    let mut quotas = BTreeMap::new();
    let mut remainders = Vec::new();
    for (&label, patients) in by_class {
        let exact = n_test * patients.len();
        quotas.insert(label, exact / total);
        remainders.push((exact % total, rng.random::<u32>(), label));
    }
    let assigned: usize = quotas.values().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, _, label) in remainders.iter().take(n_test - assigned) {
        *quotas.get_mut(&label).expect("label present") += 1;
    }
    quotas
}

fn validate_against(
    folds: &[FoldAssignment],
    labels: &BTreeMap<String, BinaryLabel>,
    path: &Path,
) -> Result<()> {
    let err = |reason: String| Error::FoldFile { path: path.to_path_buf(), reason };
    for fold in folds {
        for p in fold.train_patients.iter().chain(&fold.test_patients) {
            if !labels.contains_key(p) {
                return Err(err(format!("fold {} references unknown patient {p}", fold.fold_index)));
            }
        }
        for p in labels.keys() {
            if !fold.is_train(p) && !fold.is_test(p) {
                return Err(err(format!("fold {} does not place patient {p}", fold.fold_index)));
            }
        }
    }
    Ok(())
}

/// Parses `fold,patient_id,train|test` lines. A header line and blank lines
/// are allowed.
pub fn read_fold_file(path: &Path) -> Result<Vec<FoldAssignment>> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, reason: &str| Error::FoldFile {
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut folds: BTreeMap<usize, FoldAssignment> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() || (i == 0 && line.starts_with("fold")) {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let [fold, patient, side] = parts[..] else {
            return Err(err(lineno, "expected three comma-separated fields"));
        };
        let fold_index: usize = fold.parse().map_err(|_| err(lineno, "fold is not an integer"))?;
        if !(1..=FOLD_COUNT).contains(&fold_index) {
            return Err(err(lineno, "fold must be between 1 and 5"));
        }
        if patient.is_empty() {
            return Err(err(lineno, "empty patient id"));
        }
        let entry = folds.entry(fold_index).or_insert_with(|| FoldAssignment {
            fold_index,
            train_patients: BTreeSet::new(),
            test_patients: BTreeSet::new(),
        });
        if entry.is_train(patient) || entry.is_test(patient) {
            return Err(err(lineno, "patient listed twice in the same fold"));
        }
        match side {
            "train" => entry.train_patients.insert(patient.to_string()),
            "test" => entry.test_patients.insert(patient.to_string()),
            _ => return Err(err(lineno, "side must be 'train' or 'test'")),
        };
    }
    if folds.len() != FOLD_COUNT {
        return Err(Error::FoldFile {
            path: path.to_path_buf(),
            reason: format!("expected {FOLD_COUNT} folds, found {}", folds.len()),
        });
    }
    Ok(folds.into_values().collect())
}

pub fn write_fold_file(folds: &[FoldAssignment], path: &Path) -> Result<()> {
    let mut out = String::from("fold,patient_id,side\n");
    for fold in folds {
        for p in &fold.train_patients {
            writeln!(out, "{},{p},train", fold.fold_index).expect("write to string");
        }
        for p in &fold.test_patients {
            writeln!(out, "{},{p},test", fold.fold_index).expect("write to string");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ImageEntry, Label, Magnification, TumorSubtype};

    fn manifest(benign: usize, malign: usize) -> CorpusManifest {
        let mut entries = Vec::new();
        for (prefix, n, subtype) in
            [("B", benign, TumorSubtype::Adenosis), ("M", malign, TumorSubtype::DuctalCarcinoma)]
        {
            for i in 0..n {
                for j in 0..2 {
                    entries.push(ImageEntry {
                        path: format!("{prefix}{i:02}/{j}.png").into(),
                        patient_id: format!("{prefix}{i:02}"),
                        image_id: format!("{prefix}{i:02}-{j}"),
                        magnification: Some(Magnification::X40),
                        label: Label::Tumor(subtype),
                    });
                }
            }
        }
        CorpusManifest {
            kind: CorpusKind::Synthetic,
            root: "/nonexistent".into(),
            magnifications: [Magnification::X40].into_iter().collect(),
            entries,
        }
    }

    #[test]
    fn ten_patients_split_seven_three() {
        let m = manifest(5, 5);
        let folds = make_folds(&m, None, 7).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.train_patients.len(), 7);
            assert_eq!(f.test_patients.len(), 3);
            assert!(f.train_patients.is_disjoint(&f.test_patients));
            let benign_test = f.test_patients.iter().filter(|p| p.starts_with('B')).count();
            assert!(benign_test == 1 || benign_test == 2);
        }
        assert_eq!(folds, make_folds(&m, None, 7).unwrap());
    }

    #[test]
    fn breakhis_sized_split() {
        let m = manifest(24, 58);
        for f in make_folds(&m, None, 3).unwrap() {
            assert_eq!(f.train_patients.len() + f.test_patients.len(), 82);
            assert!(f.train_patients.is_disjoint(&f.test_patients));
            assert_eq!(f.test_patients.len(), 25);
            let benign_train = f.train_patients.iter().filter(|p| p.starts_with('B')).count();
            let expected = 24.0 / 82.0 * f.train_patients.len() as f64;
            assert!((benign_train as f64 - expected).abs() <= 1.0);
        }
    }

    #[test]
    fn too_few_patients() {
        assert!(matches!(make_folds(&manifest(4, 6), None, 1), Err(Error::TooFewPatients(_))));
    }

    #[test]
    fn fold_file_round_trip_and_validation() {
        let m = manifest(5, 6);
        let folds = make_folds(&m, None, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("folds.txt");
        write_fold_file(&folds, &path).unwrap();
        assert_eq!(make_folds(&m, Some(&path), 999).unwrap(), folds);

        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("1,GHOST,test\n");
        fs::write(&path, text).unwrap();
        assert!(matches!(make_folds(&m, Some(&path), 0), Err(Error::FoldFile { .. })));

        fs::write(&path, "1,B00,sideways\n").unwrap();
        assert!(matches!(read_fold_file(&path), Err(Error::FoldFile { .. })));
    }
}
