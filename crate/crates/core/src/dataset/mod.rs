//! Corpus layouts, manifests, image codecs and patient-wise folds.
//!
//! Two on-disk layouts are understood:
//!
//! ```text
//! breakhis-like / synthetic:  root/<benign|malign>/<subtype>/<patient_id>/<mag>/<image files>
//! crc-like:                   root/<structure>/<image files>
//! ```
//!
//! Image files are PNG or TIFF; anything else is ignored.

mod folds;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Raster;

pub use folds::{make_folds, read_fold_file, write_fold_file, FoldAssignment, FOLD_COUNT};
pub use synth::{generate_synthetic_corpus, generate_synthetic_crc, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusKind {
    BreakhisLike,
    CrcLike,
    Synthetic,
}

impl FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "breakhis" | "breakhis-like" => Ok(CorpusKind::BreakhisLike),
            "crc" | "crc-like" => Ok(CorpusKind::CrcLike),
            "synthetic" | "synth" => Ok(CorpusKind::Synthetic),
            other => Err(Error::InvalidArgument(format!("unknown corpus kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Magnification {
    #[serde(rename = "40")]
    X40,
    #[serde(rename = "100")]
    X100,
    #[serde(rename = "200")]
    X200,
    #[serde(rename = "400")]
    X400,
}

impl Magnification {
    pub const ALL: [Magnification; 4] =
        [Magnification::X40, Magnification::X100, Magnification::X200, Magnification::X400];

    pub fn factor(self) -> u32 {
        match self {
            Magnification::X40 => 40,
            Magnification::X100 => 100,
            Magnification::X200 => 200,
            Magnification::X400 => 400,
        }
    }
}

impl FromStr for Magnification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_end_matches(['x', 'X']);
        match digits {
            "40" => Ok(Magnification::X40),
            "100" => Ok(Magnification::X100),
            "200" => Ok(Magnification::X200),
            "400" => Ok(Magnification::X400),
            _ => Err(Error::InvalidArgument(format!("unknown magnification '{s}'"))),
        }
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.factor())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Benign,
    Malign,
}

impl BinaryLabel {
    pub fn is_malign(self) -> bool {
        self == BinaryLabel::Malign
    }

    pub fn from_malign(malign: bool) -> Self {
        if malign {
            BinaryLabel::Malign
        } else {
            BinaryLabel::Benign
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::Benign => "benign",
            BinaryLabel::Malign => "malign",
        }
    }

    fn from_dir(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "benign" => Some(BinaryLabel::Benign),
            "malign" | "malignant" => Some(BinaryLabel::Malign),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TumorSubtype {
    Adenosis,
    Fibroadenoma,
    TubularAdenoma,
    PhyllodesTumor,
    DuctalCarcinoma,
    LobularCarcinoma,
    MucinousCarcinoma,
    PapillaryCarcinoma,
}

impl TumorSubtype {
    pub const BENIGN: [TumorSubtype; 4] = [
        TumorSubtype::Adenosis,
        TumorSubtype::Fibroadenoma,
        TumorSubtype::TubularAdenoma,
        TumorSubtype::PhyllodesTumor,
    ];
    pub const MALIGN: [TumorSubtype; 4] = [
        TumorSubtype::DuctalCarcinoma,
        TumorSubtype::LobularCarcinoma,
        TumorSubtype::MucinousCarcinoma,
        TumorSubtype::PapillaryCarcinoma,
    ];

    pub fn binary(self) -> BinaryLabel {
        if Self::BENIGN.contains(&self) {
            BinaryLabel::Benign
        } else {
            BinaryLabel::Malign
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            TumorSubtype::Adenosis => "adenosis",
            TumorSubtype::Fibroadenoma => "fibroadenoma",
            TumorSubtype::TubularAdenoma => "tubular_adenoma",
            TumorSubtype::PhyllodesTumor => "phyllodes_tumor",
            TumorSubtype::DuctalCarcinoma => "ductal_carcinoma",
            TumorSubtype::LobularCarcinoma => "lobular_carcinoma",
            TumorSubtype::MucinousCarcinoma => "mucinous_carcinoma",
            TumorSubtype::PapillaryCarcinoma => "papillary_carcinoma",
        }
    }

    fn from_dir(name: &str) -> Option<Self> {
        let norm = name.to_ascii_lowercase().replace([' ', '-'], "_");
        Self::BENIGN
            .into_iter()
            .chain(Self::MALIGN)
            .find(|s| s.dir_name() == norm)
    }
}

/// The eight tissue structures of the CRC-style tile corpus, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CrcStructure {
    #[serde(rename = "T")]
    Tumor,
    #[serde(rename = "ST")]
    Stroma,
    #[serde(rename = "C")]
    Complex,
    #[serde(rename = "L")]
    Lymphoid,
    #[serde(rename = "D")]
    Debris,
    #[serde(rename = "M")]
    Mucosa,
    #[serde(rename = "A")]
    Adipose,
    #[serde(rename = "E")]
    Empty,
}

impl CrcStructure {
    pub const ALL: [CrcStructure; 8] = [
        CrcStructure::Tumor,
        CrcStructure::Stroma,
        CrcStructure::Complex,
        CrcStructure::Lymphoid,
        CrcStructure::Debris,
        CrcStructure::Mucosa,
        CrcStructure::Adipose,
        CrcStructure::Empty,
    ];

    pub fn code(self) -> &'static str {
        match self {
            CrcStructure::Tumor => "T",
            CrcStructure::Stroma => "ST",
            CrcStructure::Complex => "C",
            CrcStructure::Lymphoid => "L",
            CrcStructure::Debris => "D",
            CrcStructure::Mucosa => "M",
            CrcStructure::Adipose => "A",
            CrcStructure::Empty => "E",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("structure listed in ALL")
    }

    /// Accepts the short codes (`T`, `ST`, ..., `AD` for adipose) and the
    /// long names, optionally prefixed by a numeric ordering like `01_`.
    pub fn from_dir(name: &str) -> Option<Self> {
        let lower = name.to_ascii_lowercase();
        let stripped = match lower.split_once('_') {
            Some((prefix, rest)) if prefix.chars().all(|c| c.is_ascii_digit()) => rest,
            _ => lower.as_str(),
        };
        let s = match stripped {
            "t" | "tumor" | "tumour" => CrcStructure::Tumor,
            "st" | "stroma" => CrcStructure::Stroma,
            "c" | "complex" | "complex_stroma" => CrcStructure::Complex,
            "l" | "lympho" | "lymphoid" | "immune" => CrcStructure::Lymphoid,
            "d" | "debris" => CrcStructure::Debris,
            "m" | "mucosa" => CrcStructure::Mucosa,
            "a" | "ad" | "adipose" => CrcStructure::Adipose,
            "e" | "empty" | "background" => CrcStructure::Empty,
            _ => return None,
        };
        Some(s)
    }
}

impl fmt::Display for CrcStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Tumor(TumorSubtype),
    Structure(CrcStructure),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    /// Path relative to the corpus root.
    pub path: PathBuf,
    pub patient_id: String,
    pub image_id: String,
    pub magnification: Option<Magnification>,
    pub label: Label,
}

impl ImageEntry {
    pub fn binary_label(&self) -> Option<BinaryLabel> {
        match self.label {
            Label::Tumor(subtype) => Some(subtype.binary()),
            Label::Structure(_) => None,
        }
    }

    pub fn structure(&self) -> Option<CrcStructure> {
        match self.label {
            Label::Structure(s) => Some(s),
            Label::Tumor(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub kind: CorpusKind,
    pub root: PathBuf,
    pub magnifications: BTreeSet<Magnification>,
    pub entries: Vec<ImageEntry>,
}

impl CorpusManifest {
    pub fn abs_path(&self, entry: &ImageEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.patient_id.as_str()).collect()
    }

    /// Binary label per patient; fails if a patient mixes labels.
    pub fn patient_labels(&self) -> Result<BTreeMap<String, BinaryLabel>> {
        let mut labels = BTreeMap::new();
        for e in &self.entries {
            let label = e.binary_label().ok_or_else(|| {
                Error::InvalidArgument("patient labels need a breakhis-like corpus".into())
            })?;
            if let Some(prev) = labels.insert(e.patient_id.clone(), label) {
                if prev != label {
                    return Err(Error::InvalidArgument(format!(
                        "patient {} has images of both classes",
                        e.patient_id
                    )));
                }
            }
        }
        Ok(labels)
    }

    /// Sub-manifest restricted to one magnification.
    pub fn at_magnification(&self, mag: Magnification) -> CorpusManifest {
        CorpusManifest {
            kind: self.kind,
            root: self.root.clone(),
            magnifications: [mag].into_iter().collect(),
            entries: self.entries.iter().filter(|e| e.magnification == Some(mag)).cloned().collect(),
        }
    }

    pub fn count_by<K: Ord>(&self, key: impl Fn(&ImageEntry) -> K) -> BTreeMap<K, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(key(e)).or_insert(0) += 1;
        }
        counts
    }
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "tif" | "tiff")
    )
}

fn sorted_children(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::UnreadableRoot { path: dir.to_path_buf(), reason: e.to_string() })?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

fn sub_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_children(dir)?.into_iter().filter(|p| p.is_dir()).collect())
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_children(dir)?.into_iter().filter(|p| p.is_file() && is_image_file(p)).collect())
}

fn ambiguous(path: &Path, reason: impl Into<String>) -> Error {
    Error::AmbiguousLabel { path: path.to_path_buf(), reason: reason.into() }
}

struct Candidate {
    path: PathBuf,
    patient_id: String,
    magnification: Option<Magnification>,
    label: Label,
}

/// Lists every decodable image under `root`, ordered by path.
pub fn scan_corpus(root: &Path, kind: CorpusKind) -> Result<CorpusManifest> {
    if !root.is_dir() {
        return Err(Error::UnreadableRoot {
            path: root.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    let candidates = match kind {
        CorpusKind::CrcLike => crc_candidates(root)?,
        CorpusKind::BreakhisLike | CorpusKind::Synthetic => breakhis_candidates(root)?,
    };

    // Decodability is checked from the image header only.
    let decodable: Vec<bool> = candidates
        .par_iter()
        .map(|c| {
            image::ImageReader::open(&c.path)
                .ok()
                .and_then(|r| r.with_guessed_format().ok())
                .and_then(|r| r.into_dimensions().ok())
                .is_some()
        })
        .collect();

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (c, ok) in candidates.into_iter().zip(decodable) {
        if !ok {
            continue;
        }
        let image_id = c
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !seen.insert((c.patient_id.clone(), image_id.clone())) {
            return Err(ambiguous(
                &c.path,
                format!("duplicate image id {image_id} for patient {}", c.patient_id),
            ));
        }
        let rel = c.path.strip_prefix(root).unwrap_or(&c.path).to_path_buf();
        entries.push(ImageEntry {
            path: rel,
            patient_id: c.patient_id,
            image_id,
            magnification: c.magnification,
            label: c.label,
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let magnifications = entries.iter().filter_map(|e| e.magnification).collect();
    Ok(CorpusManifest { kind, root: root.to_path_buf(), magnifications, entries })
}

fn crc_candidates(root: &Path) -> Result<Vec<Candidate>> {
    let mut seen: BTreeMap<CrcStructure, PathBuf> = BTreeMap::new();
    let mut out = Vec::new();
    for dir in sub_dirs(root)? {
        let name = file_name(&dir);
        let structure = CrcStructure::from_dir(&name)
            .ok_or_else(|| ambiguous(&dir, "not a known tissue structure"))?;
        if let Some(prev) = seen.insert(structure, dir.clone()) {
            return Err(ambiguous(
                &dir,
                format!("structure {structure} already provided by {}", prev.display()),
            ));
        }
        for path in image_files(&dir)? {
            out.push(Candidate {
                path,
                patient_id: structure.code().to_string(),
                magnification: None,
                label: Label::Structure(structure),
            });
        }
    }
    Ok(out)
}

fn breakhis_candidates(root: &Path) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for class_dir in sub_dirs(root)? {
        let binary = BinaryLabel::from_dir(&file_name(&class_dir))
            .ok_or_else(|| ambiguous(&class_dir, "expected 'benign' or 'malign'"))?;
        for subtype_dir in sub_dirs(&class_dir)? {
            let subtype = TumorSubtype::from_dir(&file_name(&subtype_dir))
                .ok_or_else(|| ambiguous(&subtype_dir, "not a known tumor subtype"))?;
            if subtype.binary() != binary {
                return Err(ambiguous(
                    &subtype_dir,
                    format!("subtype {} is not {}", subtype.dir_name(), binary.as_str()),
                ));
            }
            for patient_dir in sub_dirs(&subtype_dir)? {
                let patient_id = file_name(&patient_dir);
                for mag_dir in sub_dirs(&patient_dir)? {
                    let mag: Magnification = file_name(&mag_dir)
                        .parse()
                        .map_err(|_| ambiguous(&mag_dir, "not a magnification directory"))?;
                    for path in image_files(&mag_dir)? {
                        out.push(Candidate {
                            path,
                            patient_id: patient_id.clone(),
                            magnification: Some(mag),
                            label: Label::Tumor(subtype),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Decodes a PNG or TIFF file into an RGB raster.
pub fn load_raster(path: &Path) -> Result<Raster> {
    let img = image::open(path)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Raster::rgb(w as usize, h as usize, img.into_raw())
}

pub fn save_png(raster: &Raster, path: &Path) -> Result<()> {
    let color = match raster.channels() {
        1 => image::ExtendedColorType::L8,
        _ => image::ExtendedColorType::Rgb8,
    };
    image::save_buffer_with_format(
        path,
        raster.data(),
        raster.width() as u32,
        raster.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
