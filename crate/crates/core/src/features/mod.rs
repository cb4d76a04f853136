//! Feature vectors: PFTAS texture statistics, imported deep features and
//! their PCA reduction.

mod pca;
mod tas;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pca::{fit_pca, PcaModel};
pub use tas::{pftas, tas_histogram, PFTAS_LEN, TAS_BINS};

pub const DEEP_LEN: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureKind {
    Pftas,
    Deep,
    DeepPca(usize),
}

impl FeatureKind {
    pub fn width(self) -> usize {
        match self {
            FeatureKind::Pftas => PFTAS_LEN,
            FeatureKind::Deep => DEEP_LEN,
            FeatureKind::DeepPca(k) => k,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Pftas => write!(f, "pftas-{PFTAS_LEN}"),
            FeatureKind::Deep => write!(f, "deep-{DEEP_LEN}"),
            FeatureKind::DeepPca(k) => write!(f, "deep-pca-{k}"),
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pftas" | "pftas-162" => Ok(FeatureKind::Pftas),
            "deep" | "deep-2048" => Ok(FeatureKind::Deep),
            _ => s
                .strip_prefix("deep-pca-")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(FeatureKind::DeepPca)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown feature kind '{s}'"))),
        }
    }
}

impl TryFrom<String> for FeatureKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureKind> for String {
    fn from(k: FeatureKind) -> String {
        k.to_string()
    }
}

/// Provenance of one feature row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchKey {
    pub patient_id: String,
    pub image_id: String,
    pub col: usize,
    pub row: usize,
}

impl PatchKey {
    pub fn new(patient_id: impl Into<String>, image_id: impl Into<String>, col: usize, row: usize) -> Self {
        Self { patient_id: patient_id.into(), image_id: image_id.into(), col, row }
    }
}

/// Rectangular row-per-instance feature table with unique provenance keys.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    kind: FeatureKind,
    width: usize,
    keys: Vec<PatchKey>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn empty(kind: FeatureKind) -> Self {
        Self { kind, width: kind.width(), keys: Vec::new(), values: Vec::new() }
    }

    pub fn from_rows(kind: FeatureKind, keys: Vec<PatchKey>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if keys.len() != rows.len() {
            return Err(Error::Shape(format!("{} keys for {} rows", keys.len(), rows.len())));
        }
        let mut m = Self::empty(kind);
        m.keys.reserve(keys.len());
        for (key, row) in keys.into_iter().zip(rows) {
            m.push(key, &row)?;
        }
        m.check_unique()?;
        Ok(m)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.keys.len());
        for key in &self.keys {
            if !seen.insert(key) {
                return Err(Error::InvalidArgument(format!("duplicate provenance key {key:?}")));
            }
        }
        Ok(())
    }

    /// Appends a row. Key uniqueness is not checked here.
    pub fn push(&mut self, key: PatchKey, row: &[f64]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::WidthMismatch { expected: self.width, actual: row.len() });
        }
        self.keys.push(key);
        self.values.extend_from_slice(row);
        Ok(())
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[PatchKey] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width.max(1)).take(self.keys.len())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut out = Self::empty(self.kind);
        out.width = self.width;
        for &i in indices {
            out.keys.push(self.keys[i].clone());
            out.values.extend_from_slice(self.row(i));
        }
        out
    }

    /// Writes the `patient_id,image_id,col,row,f0,...` CSV contract.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["patient_id".to_string(), "image_id".into(), "col".into(), "row".into()];
        header.extend((0..self.width).map(|i| format!("f{i}")));
        w.write_record(&header)?;
        for (key, row) in self.keys.iter().zip(self.rows()) {
            let mut record = vec![key.patient_id.clone(), key.image_id.clone(), key.col.to_string(), key.row.to_string()];
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a feature CSV whose width must match `kind`.
    pub fn read_csv(path: &Path, kind: FeatureKind) -> Result<FeatureMatrix> {
        let width = kind.width();
        let err = |row: usize, reason: String| Error::FeatureFile { path: path.to_path_buf(), row, reason };
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        let header = reader.headers()?.clone();
        let expected_header: Vec<String> = ["patient_id", "image_id", "col", "row"]
            .iter()
            .map(|s| s.to_string())
            .chain((0..width).map(|i| format!("f{i}")))
            .collect();
        if header.iter().ne(expected_header.iter().map(String::as_str)) {
            return Err(err(
                0,
                format!("header must be patient_id,image_id,col,row,f0..f{}", width - 1),
            ));
        }
        let mut m = Self::empty(kind);
        let mut seen = HashSet::new();
        for (i, record) in reader.records().enumerate() {
            let row_no = i + 1;
            let record = record.map_err(|e| err(row_no, e.to_string()))?;
            if record.len() != width + 4 {
                return Err(err(
                    row_no,
                    format!("expected {width} feature values, found {}", record.len().saturating_sub(4)),
                ));
            }
            let parse_usize = |s: &str, what: &str| {
                s.parse::<usize>().map_err(|_| err(row_no, format!("{what} '{s}' is not an integer")))
            };
            let key = PatchKey::new(&record[0], &record[1], parse_usize(&record[2], "col")?, parse_usize(&record[3], "row")?);
            let values = record
                .iter()
                .skip(4)
                .map(|s| s.trim().parse::<f64>().map_err(|_| err(row_no, format!("value '{s}' is not a number"))))
                .collect::<Result<Vec<f64>>>()?;
            if !seen.insert(key.clone()) {
                return Err(err(row_no, format!("duplicate provenance key {key:?}")));
            }
            m.push(key, &values)?;
        }
        Ok(m)
    }
}

/// Reads an externally computed 2048-wide deep-feature CSV.
pub fn import_deep_features(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::read_csv(path, FeatureKind::Deep)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn deep_rows(n: usize) -> FeatureMatrix {
        let keys = (0..n).map(|i| PatchKey::new("P", format!("img{i}"), i % 5, i / 5)).collect();
        let rows = (0..n)
            .map(|i| (0..DEEP_LEN).map(|j| ((i * 31 + j) as f64).sin() / 3.0).collect())
            .collect();
        FeatureMatrix::from_rows(FeatureKind::Deep, keys, rows).unwrap()
    }

    #[test]
    fn deep_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.csv");
        let m = deep_rows(10);
        m.write_csv(&path).unwrap();
        let back = import_deep_features(&path).unwrap();
        assert_eq!(back.len(), 10);
        assert_eq!(back.width(), 2048);
        assert_eq!(back, m);
    }

    #[test]
    fn short_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.csv");
        deep_rows(3).write_csv(&path).unwrap();
        let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
        let short: Vec<String> = (0..2047).map(|_| "0.5".to_string()).collect();
        writeln!(f, "P,img9,0,0,{}", short.join(",")).unwrap();
        match import_deep_features(&path) {
            Err(Error::FeatureFile { row, reason, .. }) => {
                assert_eq!(row, 4);
                assert!(reason.contains("2047"), "{reason}");
            }
            other => panic!("expected a row error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_keys_and_garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pftas.csv");
        let key = PatchKey::new("P", "i", 0, 0);
        let mut m = FeatureMatrix::empty(FeatureKind::Pftas);
        m.push(key.clone(), &[0.0; PFTAS_LEN]).unwrap();
        m.push(key, &[0.0; PFTAS_LEN]).unwrap();
        m.write_csv(&path).unwrap();
        assert!(matches!(FeatureMatrix::read_csv(&path, FeatureKind::Pftas), Err(Error::FeatureFile { row: 2, .. })));

        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen("P,i,0,0,0", "P,i,0,0,abc", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(FeatureMatrix::read_csv(&path, FeatureKind::Pftas), Err(Error::FeatureFile { row: 1, .. })));
    }

    #[test]
    fn kind_names() {
        for k in [FeatureKind::Pftas, FeatureKind::Deep, FeatureKind::DeepPca(100)] {
            assert_eq!(k.to_string().parse::<FeatureKind>().unwrap(), k);
        }
        assert_eq!(FeatureKind::DeepPca(400).width(), 400);
        assert!("deep-pca-0".parse::<FeatureKind>().is_err());
    }
}
