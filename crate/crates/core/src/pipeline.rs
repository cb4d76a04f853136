//! Feature production for whole corpora: PFTAS computed from the images
//! (optionally cached) or deep features looked up in an imported table.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::cache::{file_hash, FeatureCache, PFTAS_EXTRACTOR_VERSION};
use crate::dataset::{load_raster, BinaryLabel, CorpusManifest, ImageEntry, Magnification};
use crate::error::{Error, Result};
use crate::features::{pftas, FeatureKind, FeatureMatrix, PatchKey};
use crate::imaging::{tessellate, PATCH_SIDE};

/// Provenance of one patch row in a [`PatchSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMeta {
    pub key: PatchKey,
    pub magnification: Option<Magnification>,
    pub label: BinaryLabel,
}

/// Patches with their features; `meta[i]` describes `features.row(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub meta: Vec<PatchMeta>,
    pub features: FeatureMatrix,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PatchSet {
        PatchSet {
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
            features: self.features.select(indices),
        }
    }

    pub fn at_magnification(&self, mag: Magnification) -> PatchSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.meta[i].magnification == Some(mag)).collect();
        self.select(&idx)
    }
}

pub enum FeatureSource {
    Pftas { cache: Option<FeatureCache> },
    Deep { table: FeatureMatrix, index: HashMap<(String, String), Vec<usize>> },
}

impl FeatureSource {
    pub fn pftas(cache: Option<FeatureCache>) -> Self {
        FeatureSource::Pftas { cache }
    }

    /// Wraps an imported 2048-wide table. Rows are looked up by
    /// `(patient_id, image_id)`.
    pub fn deep(table: FeatureMatrix) -> Result<Self> {
        if table.kind() != FeatureKind::Deep {
            return Err(Error::InvalidArgument(format!("expected deep features, got {}", table.kind())));
        }
        let mut index: HashMap<(String, String), Vec<usize>> = HashMap::new();
        for (i, key) in table.keys().iter().enumerate() {
            index.entry((key.patient_id.clone(), key.image_id.clone())).or_default().push(i);
        }
        for rows in index.values_mut() {
            rows.sort_by_key(|&i| (table.keys()[i].row, table.keys()[i].col));
        }
        Ok(FeatureSource::Deep { table, index })
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureSource::Pftas { .. } => FeatureKind::Pftas,
            FeatureSource::Deep { .. } => FeatureKind::Deep,
        }
    }

    fn deep_rows(&self, entry: &ImageEntry) -> Result<Vec<usize>> {
        let FeatureSource::Deep { index, .. } = self else { unreachable!("deep source") };
        index
            .get(&(entry.patient_id.clone(), entry.image_id.clone()))
            .cloned()
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no deep features for patient {} image {}",
                    entry.patient_id, entry.image_id
                ))
            })
    }

    /// One row per entry, treating each image as a single tile (used for
    /// the CRC tiles). Keys use grid position (0, 0).
    pub fn tile_features(&self, manifest: &CorpusManifest, entries: &[&ImageEntry]) -> Result<FeatureMatrix> {
        let rows: Vec<Vec<f64>> = match self {
            FeatureSource::Pftas { .. } => entries
                .par_iter()
                .map(|e| pftas(&load_raster(&manifest.abs_path(e))?))
                .collect::<Result<_>>()?,
            FeatureSource::Deep { table, .. } => entries
                .iter()
                .map(|e| {
                    let idx = self.deep_rows(e)?;
                    Ok(table.row(idx[0]).to_vec())
                })
                .collect::<Result<_>>()?,
        };
        let keys = entries.iter().map(|e| PatchKey::new(&e.patient_id, &e.image_id, 0, 0)).collect();
        FeatureMatrix::from_rows(self.kind(), keys, rows)
    }

    /// Tessellates every entry into 150x150 patches and describes each.
    pub fn patch_features(&self, manifest: &CorpusManifest, entries: &[&ImageEntry]) -> Result<PatchSet> {
        let per_image: Vec<Vec<(PatchKey, Vec<f64>)>> = match self {
            FeatureSource::Pftas { cache } => entries
                .par_iter()
                .map(|e| pftas_patches(manifest, e, cache.as_ref()))
                .collect::<Result<_>>()?,
            FeatureSource::Deep { table, .. } => entries
                .iter()
                .map(|e| {
                    Ok(self
                        .deep_rows(e)?
                        .into_iter()
                        .map(|i| (table.keys()[i].clone(), table.row(i).to_vec()))
                        .collect())
                })
                .collect::<Result<_>>()?,
        };
        let mut meta = Vec::new();
        let mut features = FeatureMatrix::empty(self.kind());
        for (entry, patches) in entries.iter().zip(per_image) {
            let label = entry.binary_label().ok_or_else(|| {
                Error::InvalidArgument("patch features need tumour-labelled images".into())
            })?;
            for (key, row) in patches {
                features.push(key.clone(), &row)?;
                meta.push(PatchMeta { key, magnification: entry.magnification, label });
            }
        }
        Ok(PatchSet { meta, features })
    }
}

fn pftas_patches(
    manifest: &CorpusManifest,
    entry: &ImageEntry,
    cache: Option<&FeatureCache>,
) -> Result<Vec<(PatchKey, Vec<f64>)>> {
    let path = manifest.abs_path(entry);
    let hash = match cache {
        Some(_) => Some(file_hash(&path)?),
        None => None,
    };
    let raster = load_raster(&path)?;
    let patches = tessellate(&raster, PATCH_SIDE)?;
    let cached = match (cache, &hash) {
        (Some(c), Some(h)) => c.get(h, PFTAS_EXTRACTOR_VERSION).filter(|rows| rows.len() == patches.len()),
        _ => None,
    };
    let rows = match cached {
        Some(rows) => rows,
        None => {
            let rows = patches.iter().map(|(_, p)| pftas(p)).collect::<Result<Vec<_>>>()?;
            if let (Some(c), Some(h)) = (cache, &hash) {
                c.put(h, PFTAS_EXTRACTOR_VERSION, &rows)?;
            }
            rows
        }
    };
    Ok(patches
        .iter()
        .zip(rows)
        .map(|((cell, _), row)| (PatchKey::new(&entry.patient_id, &entry.image_id, cell.col, cell.row), row))
        .collect())
}
