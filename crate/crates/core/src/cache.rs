//! On-disk cache of per-image patch features, keyed by the SHA-256 of the
//! image file and the extractor version.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

/// Bump when the PFTAS output for a given image would change.
pub const PFTAS_EXTRACTOR_VERSION: &str = "pftas-v1";
pub const CACHE_ENV: &str = "HISTOTILE_CACHE";

#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    /// Cache rooted at `$HISTOTILE_CACHE`, if set and non-empty.
    pub fn from_env() -> Result<Option<Self>> {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Ok(Some(Self::new(PathBuf::from(dir))?)),
            _ => Ok(None),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, image_hash: &str, version: &str) -> PathBuf {
        self.dir.join(format!("{version}-{image_hash}.json"))
    }

    pub fn get(&self, image_hash: &str, version: &str) -> Option<Vec<Vec<f64>>> {
        let text = fs::read_to_string(self.entry_path(image_hash, version)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Written through a temporary file so concurrent readers never see a
    /// partial entry.
    pub fn put(&self, image_hash: &str, version: &str, rows: &[Vec<f64>]) -> Result<()> {
        let path = self.entry_path(image_hash, version);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, serde_json::to_string(rows)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}
