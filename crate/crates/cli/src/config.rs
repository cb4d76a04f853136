//! Run configuration: an optional TOML file overlaid by command-line flags.
//!
//! ```toml
//! corpus = "data/breakhis"
//! corpus_kind = "breakhis"
//! crc = "data/crc"
//! filters = [0, 7]
//! mags = [40, 100, 200, 400]
//! features = "pftas"        # or "deep"
//! pca = 100                 # deep only
//! deep_csv = "deep.csv"
//! crc_deep_csv = "crc_deep.csv"
//! grid = [[1.0, 0.125], [8.0, 0.5]]
//! seed = 1
//! folds = "folds.csv"
//! out = "reports"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use histotile_core::classifier::{default_grid, KernelParams, DEFAULT_TOL};
use histotile_core::dataset::{CorpusKind, Magnification};
use histotile_core::features::FeatureKind;
use histotile_core::{Error, Result};
use serde::Deserialize;

pub const MAX_FILTER: usize = 7;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub corpus: Option<PathBuf>,
    pub corpus_kind: Option<String>,
    pub crc: Option<PathBuf>,
    pub filters: Option<Vec<usize>>,
    pub mags: Option<Vec<u32>>,
    pub features: Option<String>,
    pub pca: Option<usize>,
    pub deep_csv: Option<PathBuf>,
    pub crc_deep_csv: Option<PathBuf>,
    pub crc_scale: Option<f64>,
    pub filter_models: Option<PathBuf>,
    pub grid: Option<Vec<[f64; 2]>>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub folds: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overlay(self, flags: RunFile) -> RunFile {
        RunFile {
            corpus: flags.corpus.or(self.corpus),
            corpus_kind: flags.corpus_kind.or(self.corpus_kind),
            crc: flags.crc.or(self.crc),
            filters: flags.filters.or(self.filters),
            mags: flags.mags.or(self.mags),
            features: flags.features.or(self.features),
            pca: flags.pca.or(self.pca),
            deep_csv: flags.deep_csv.or(self.deep_csv),
            crc_deep_csv: flags.crc_deep_csv.or(self.crc_deep_csv),
            crc_scale: flags.crc_scale.or(self.crc_scale),
            filter_models: flags.filter_models.or(self.filter_models),
            grid: flags.grid.or(self.grid),
            tol: flags.tol.or(self.tol),
            seed: flags.seed.or(self.seed),
            folds: flags.folds.or(self.folds),
            out: flags.out.or(self.out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub corpus_kind: CorpusKind,
    pub crc: Option<PathBuf>,
    pub filters: Vec<usize>,
    pub mags: Vec<Magnification>,
    pub features: FeatureKind,
    pub pca: Option<usize>,
    pub deep_csv: Option<PathBuf>,
    pub crc_deep_csv: Option<PathBuf>,
    pub crc_scale: f64,
    pub filter_models: Option<PathBuf>,
    pub grid: Vec<KernelParams>,
    pub tol: f64,
    pub seed: u64,
    pub folds: Option<PathBuf>,
    pub out: PathBuf,
}

fn required<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required setting '{name}'")))
}

impl RunConfig {
    pub fn resolve(file: RunFile) -> Result<Self> {
        let features: FeatureKind = file.features.as_deref().unwrap_or("pftas").parse()?;
        if !matches!(features, FeatureKind::Pftas | FeatureKind::Deep) {
            return Err(Error::Config("features must be 'pftas' or 'deep'; use 'pca' for the reduction".into()));
        }
        if file.pca.is_some() && features != FeatureKind::Deep {
            return Err(Error::Config("pca is only valid with deep features".into()));
        }
        if file.pca == Some(0) {
            return Err(Error::Config("pca must be positive".into()));
        }
        let filters = file.filters.unwrap_or_else(|| vec![0]);
        if filters.is_empty() {
            return Err(Error::Config("no filters selected".into()));
        }
        if let Some(&bad) = filters.iter().find(|&&f| f > MAX_FILTER) {
            return Err(Error::Config(format!("filter {bad} is not in 0..={MAX_FILTER}")));
        }
        let mut filters = filters;
        filters.sort_unstable();
        filters.dedup();
        if filters.iter().any(|&f| f > 0) && file.crc.is_none() && file.filter_models.is_none() {
            return Err(Error::Config("filters other than 0 need 'crc' or 'filter_models'".into()));
        }
        let mags = file
            .mags
            .unwrap_or_else(|| Magnification::ALL.iter().map(|m| m.factor()).collect())
            .iter()
            .map(|m| m.to_string().parse())
            .collect::<Result<Vec<Magnification>>>()?;
        if features == FeatureKind::Deep {
            if file.deep_csv.is_none() {
                return Err(Error::Config("deep features need 'deep_csv' for the corpus".into()));
            }
            if filters.iter().any(|&f| f > 0) && file.crc_deep_csv.is_none() && file.filter_models.is_none() {
                return Err(Error::Config("deep features with filters need 'crc_deep_csv'".into()));
            }
        }
        let grid = match file.grid {
            Some(g) => g.iter().map(|&[c, gamma]| KernelParams::new(c, gamma)).collect::<Result<Vec<_>>>()?,
            None => default_grid(),
        };
        if grid.is_empty() {
            return Err(Error::Config("empty grid".into()));
        }
        let crc_scale = file.crc_scale.unwrap_or(1.0);
        if !(crc_scale > 0.0 && crc_scale <= 1.0) {
            return Err(Error::Config(format!("crc_scale {crc_scale} is not in (0, 1]")));
        }
        Ok(RunConfig {
            corpus: required(file.corpus, "corpus")?,
            corpus_kind: file.corpus_kind.as_deref().unwrap_or("breakhis").parse()?,
            crc: file.crc,
            filters,
            mags,
            features,
            pca: file.pca,
            deep_csv: file.deep_csv,
            crc_deep_csv: file.crc_deep_csv,
            crc_scale,
            filter_models: file.filter_models,
            grid,
            tol: file.tol.unwrap_or(DEFAULT_TOL),
            seed: required(file.seed, "seed")?,
            folds: file.folds,
            out: required(file.out, "out")?,
        })
    }

    pub fn effective_kind(&self) -> FeatureKind {
        match self.pca {
            Some(k) => FeatureKind::DeepPca(k),
            None => self.features,
        }
    }
}

/// Every (filter, magnification) pair, filters outermost.
pub fn plan(filters: &[usize], mags: &[Magnification]) -> Vec<(usize, Magnification)> {
    filters.iter().flat_map(|&f| mags.iter().map(move |&m| (f, m))).collect()
}

/// `"0,7"`, `"0..7"` (inclusive) or a mix such as `"0,3..5"`.
pub fn parse_filters(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("cannot parse filter list '{s}'"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.trim_start_matches('=').parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// `"c:gamma,c:gamma"`.
pub fn parse_grid(s: &str) -> Result<Vec<[f64; 2]>> {
    s.split(',')
        .map(|p| {
            let (c, g) = p.split_once(':').ok_or_else(|| Error::InvalidArgument(format!("grid point '{p}' is not c:gamma")))?;
            let num = |v: &str| v.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad number '{v}'")));
            Ok([num(c)?, num(g)?])
        })
        .collect()
}
