//! Desk-scale synthetic corpora. Images are a noisy background sprinkled
//! with dark discs; classes differ by how much of the image the discs cover.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    save_png, BinaryLabel, CorpusKind, CorpusManifest, CrcStructure, ImageEntry, Label,
    Magnification, TumorSubtype,
};
use crate::error::{Error, Result};
use crate::imaging::Raster;
use crate::seed::rng_for;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub patients_per_class: usize,
    pub images_per_patient: usize,
    pub width: usize,
    pub height: usize,
    pub magnifications: Vec<Magnification>,
    /// Fraction of pixels covered by discs in benign images.
    pub benign_density: f64,
    /// Fraction of pixels covered by discs in malign images.
    pub malign_density: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            patients_per_class: 4,
            images_per_patient: 3,
            width: 700,
            height: 460,
            magnifications: vec![Magnification::X40],
            benign_density: 0.1,
            malign_density: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Texture {
    background: [u8; 3],
    blob: [u8; 3],
    density: f64,
    radius: (usize, usize),
    noise: i32,
}

fn jitter(base: u8, noise: i32, rng: &mut ChaCha8Rng) -> u8 {
    if noise == 0 {
        return base;
    }
    (i32::from(base) + rng.random_range(-noise..=noise)).clamp(0, 255) as u8
}

fn render(width: usize, height: usize, tex: Texture, rng: &mut ChaCha8Rng) -> Raster {
    let mut covered = vec![false; width * height];
    let target = (tex.density * (width * height) as f64).round() as usize;
    let mut n_covered = 0;
    let mut attempts = 0;
    while n_covered < target && attempts < 200_000 {
        attempts += 1;
        let r = rng.random_range(tex.radius.0..=tex.radius.1) as i64;
        let cx = rng.random_range(0..width) as i64;
        let cy = rng.random_range(0..height) as i64;
        for y in (cy - r).max(0)..=(cy + r).min(height as i64 - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(width as i64 - 1) {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy <= r * r {
                    let idx = y as usize * width + x as usize;
                    if !covered[idx] {
                        covered[idx] = true;
                        n_covered += 1;
                    }
                }
            }
        }
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for &is_blob in &covered {
        let base = if is_blob { tex.blob } else { tex.background };
        for c in base {
            data.push(jitter(c, tex.noise, rng));
        }
    }
    Raster::rgb(width, height, data).expect("buffer sized from dimensions")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn tumor_texture(label: BinaryLabel, density: f64) -> Texture {
    match label {
        BinaryLabel::Benign => Texture {
            background: [232, 196, 214],
            blob: [96, 52, 138],
            density,
            radius: (5, 9),
            noise: 12,
        },
        BinaryLabel::Malign => Texture {
            background: [222, 180, 206],
            blob: [84, 40, 124],
            density,
            radius: (3, 6),
            noise: 12,
        },
    }
}

/// Writes a breakhis-layout corpus under `root` and returns its manifest.
/// Also writes the manifest as `manifest.json` next to the images.
pub fn generate_synthetic_corpus(root: &Path, spec: &SynthSpec, seed: u64) -> Result<CorpusManifest> {
    if spec.patients_per_class == 0 || spec.images_per_patient == 0 || spec.magnifications.is_empty() {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs patients, images and magnifications".into(),
        ));
    }
    for d in [spec.benign_density, spec.malign_density] {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::InvalidArgument(format!("density {d} outside [0, 1]")));
        }
    }

    struct Job {
        entry: ImageEntry,
        texture: Texture,
    }
    let mut jobs = Vec::new();
    for label in [BinaryLabel::Benign, BinaryLabel::Malign] {
        let (tag, subtypes, density) = match label {
            BinaryLabel::Benign => ("B", TumorSubtype::BENIGN, spec.benign_density),
            BinaryLabel::Malign => ("M", TumorSubtype::MALIGN, spec.malign_density),
        };
        for p in 0..spec.patients_per_class {
            let patient_id = format!("SYN-{tag}-{:02}", p + 1);
            let subtype = subtypes[p % subtypes.len()];
            let mut prng = rng_for(seed, &format!("synth/patient/{patient_id}"));
            let patient_density = (density + prng.random_range(-0.02..=0.02)).clamp(0.0, 1.0);
            for &mag in &spec.magnifications {
                for i in 0..spec.images_per_patient {
                    let image_id = format!("{patient_id}-{}-{:03}", mag.factor(), i + 1);
                    let path: PathBuf = [
                        label.as_str(),
                        subtype.dir_name(),
                        &patient_id,
                        &format!("{}X", mag.factor()),
                        &format!("{image_id}.png"),
                    ]
                    .iter()
                    .collect();
                    jobs.push(Job {
                        entry: ImageEntry {
                            path,
                            patient_id: patient_id.clone(),
                            image_id,
                            magnification: Some(mag),
                            label: Label::Tumor(subtype),
                        },
                        texture: tumor_texture(label, patient_density),
                    });
                }
            }
        }
    }

    create_dir(root)?;
    jobs.par_iter().try_for_each(|job| -> Result<()> {
        let mut rng = rng_for(seed, &format!("synth/image/{}", job.entry.image_id));
        let raster = render(spec.width, spec.height, job.texture, &mut rng);
        let path = root.join(&job.entry.path);
        create_dir(path.parent().expect("image path has a parent"))?;
        save_png(&raster, &path)
    })?;

    let mut entries: Vec<ImageEntry> = jobs.into_iter().map(|j| j.entry).collect();
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = CorpusManifest {
        kind: CorpusKind::Synthetic,
        root: root.to_path_buf(),
        magnifications: spec.magnifications.iter().copied().collect(),
        entries,
    };
    fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn structure_texture(s: CrcStructure) -> Texture {
    let t = |background, blob, density, radius| Texture { background, blob, density, radius, noise: 10 };
    match s {
        CrcStructure::Tumor => t([200, 150, 190], [70, 30, 110], 0.45, (4, 7)),
        CrcStructure::Stroma => t([235, 170, 200], [150, 60, 140], 0.08, (2, 3)),
        CrcStructure::Complex => t([220, 160, 200], [110, 50, 130], 0.2, (3, 5)),
        CrcStructure::Lymphoid => t([200, 150, 200], [40, 20, 90], 0.65, (2, 4)),
        CrcStructure::Debris => t([210, 170, 190], [120, 60, 100], 0.3, (1, 2)),
        CrcStructure::Mucosa => t([225, 190, 215], [130, 80, 160], 0.25, (6, 10)),
        CrcStructure::Adipose => t([250, 248, 250], [225, 170, 200], 0.12, (1, 2)),
        CrcStructure::Empty => Texture {
            background: [245, 245, 245],
            blob: [245, 245, 245],
            density: 0.0,
            radius: (1, 1),
            noise: 4,
        },
    }
}

/// Writes `per_class` square tiles of each of the eight structures under
/// `root/<code>/` and returns the crc-like manifest.
pub fn generate_synthetic_crc(root: &Path, per_class: usize, side: usize, seed: u64) -> Result<CorpusManifest> {
    if per_class == 0 || side == 0 {
        return Err(Error::InvalidArgument("synthetic CRC corpus needs tiles".into()));
    }
    let mut entries = Vec::new();
    for s in CrcStructure::ALL {
        for i in 0..per_class {
            let image_id = format!("{}_{:04}", s.code(), i + 1);
            entries.push(ImageEntry {
                path: [s.code(), &format!("{image_id}.png")].iter().collect(),
                patient_id: s.code().to_string(),
                image_id,
                magnification: None,
                label: Label::Structure(s),
            });
        }
    }
    for s in CrcStructure::ALL {
        create_dir(&root.join(s.code()))?;
    }
    entries.par_iter().try_for_each(|entry| -> Result<()> {
        let s = entry.structure().expect("structure entry");
        let mut rng = rng_for(seed, &format!("synth/crc/{}", entry.image_id));
        save_png(&render(side, side, structure_texture(s), &mut rng), &root.join(&entry.path))
    })?;
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(CorpusManifest {
        kind: CorpusKind::CrcLike,
        root: root.to_path_buf(),
        magnifications: Default::default(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::scan_corpus;

    #[test]
    fn render_hits_density() {
        let mut rng = rng_for(1, "t");
        let tex = tumor_texture(BinaryLabel::Malign, 0.4);
        let r = render(100, 80, tex, &mut rng);
        let dark = r.data().chunks(3).filter(|p| p[0] < 150).count();
        let frac = dark as f64 / 8000.0;
        assert!((0.4..0.45).contains(&frac), "{frac}");
    }

    #[test]
    fn corpus_round_trip_and_determinism() {
        let spec = SynthSpec { width: 160, height: 160, ..SynthSpec::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(a.path(), &spec, 5).unwrap();
        assert_eq!(m.entries.len(), 24);
        assert_eq!(scan_corpus(a.path(), CorpusKind::Synthetic).unwrap(), m);
        let parsed: CorpusManifest =
            serde_json::from_str(&fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(parsed, m);

        generate_synthetic_corpus(b.path(), &spec, 5).unwrap();
        for e in &m.entries {
            assert_eq!(fs::read(a.path().join(&e.path)).unwrap(), fs::read(b.path().join(&e.path)).unwrap());
        }
    }

    #[test]
    fn crc_corpus_scans_back() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_crc(dir.path(), 2, 32, 3).unwrap();
        assert_eq!(scan_corpus(dir.path(), CorpusKind::CrcLike).unwrap(), m);
    }
}
