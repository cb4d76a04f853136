//! Threshold adjacency statistics.

use crate::error::{Error, Result};
use crate::imaging::{binarize, otsu_threshold, BinaryMask, Raster};

pub const TAS_BINS: usize = 9;
/// 3 channels x 3 ranges x (mask + complement) x 9 bins.
pub const PFTAS_LEN: usize = 3 * 3 * 2 * TAS_BINS;

const OFFSETS: [(isize, isize); 8] =
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

// Per pixel: (set 8-neighbours, in-bounds neighbours).
fn neighbour_counts(mask: &BinaryMask) -> Vec<(u8, u8)> {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let bits = mask.bits();
    let mut out = Vec::with_capacity(bits.len());
    for y in 0..h {
        for x in 0..w {
            let mut set = 0u8;
            let mut inside = 0u8;
            for (dx, dy) in OFFSETS {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h {
                    inside += 1;
                    set += u8::from(bits[(ny * w + nx) as usize]);
                }
            }
            out.push((set, inside));
        }
    }
    out
}

fn normalise(counts: [u64; TAS_BINS]) -> [f64; TAS_BINS] {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return [0.0; TAS_BINS];
    }
    counts.map(|c| c as f64 / total as f64)
}

/// Bin `b` holds the fraction of set pixels with exactly `b` set
/// 8-neighbours; out-of-bounds neighbours count as unset. An empty mask
/// yields all zeros.
pub fn tas_histogram(mask: &BinaryMask) -> [f64; TAS_BINS] {
    tas_pair(mask).0
}

// Histograms of the mask and of its complement from one neighbour pass: a
// clear pixel's clear neighbours are its in-bounds neighbours minus its set
// ones.
fn tas_pair(mask: &BinaryMask) -> ([f64; TAS_BINS], [f64; TAS_BINS]) {
    let mut on = [0u64; TAS_BINS];
    let mut off = [0u64; TAS_BINS];
    for (&bit, (set, inside)) in mask.bits().iter().zip(neighbour_counts(mask)) {
        if bit {
            on[set as usize] += 1;
        } else {
            off[(inside - set) as usize] += 1;
        }
    }
    (normalise(on), normalise(off))
}

fn round_clamp(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// 162 parameter-free TAS values of an RGB raster.
///
/// Per channel (R, G, B): Otsu threshold `T`; mean `mu` and population
/// standard deviation `sigma` of the pixels strictly above `T` (both 0 when
/// there are none); masks for the inclusive ranges `[mu-sigma, mu+sigma]`,
/// `[mu-sigma, 255]` and `[mu+sigma, 255]` with bounds rounded half up and
/// clamped to `[0, 255]`. Each mask contributes its TAS histogram followed
/// by the histogram of its complement.
pub fn pftas(img: &Raster) -> Result<Vec<f64>> {
    if img.channels() != 3 {
        return Err(Error::Shape("PFTAS needs an RGB raster".into()));
    }
    let mut out = Vec::with_capacity(PFTAS_LEN);
    for c in 0..3 {
        let channel = img.channel(c)?;
        let t = otsu_threshold(&channel)?;
        let (mut n, mut sum, mut sum_sq) = (0u64, 0u64, 0u64);
        for &v in channel.data().iter().filter(|&&v| v > t) {
            n += 1;
            sum += u64::from(v);
            sum_sq += u64::from(v) * u64::from(v);
        }
        let (mu, sigma) = if n == 0 {
            (0.0, 0.0)
        } else {
            let mean = sum as f64 / n as f64;
            let var = (sum_sq as f64 / n as f64 - mean * mean).max(0.0);
            (mean, var.sqrt())
        };
        let ranges = [
            (round_clamp(mu - sigma), round_clamp(mu + sigma)),
            (round_clamp(mu - sigma), 255),
            (round_clamp(mu + sigma), 255),
        ];
        for (low, high) in ranges {
            let (on, off) = tas_pair(&binarize(&channel, low, high)?);
            out.extend_from_slice(&on);
            out.extend_from_slice(&off);
        }
    }
    debug_assert_eq!(out.len(), PFTAS_LEN);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, set: &[(usize, usize)]) -> BinaryMask {
        let mut bits = vec![false; w * h];
        for &(x, y) in set {
            bits[y * w + x] = true;
        }
        BinaryMask::new(w, h, bits).unwrap()
    }

    #[test]
    fn full_three_by_three() {
        let m = BinaryMask::new(3, 3, vec![true; 9]).unwrap();
        let h = tas_histogram(&m);
        let mut expected = [0.0; 9];
        expected[3] = 4.0 / 9.0;
        expected[5] = 4.0 / 9.0;
        expected[8] = 1.0 / 9.0;
        assert_eq!(h, expected);
    }

    #[test]
    fn empty_and_single_pixel() {
        assert_eq!(tas_histogram(&mask(5, 5, &[])), [0.0; 9]);
        let single = tas_histogram(&mask(5, 5, &[(2, 2)]));
        assert_eq!(single[0], 1.0);
        assert!(single[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn complement_matches_direct_histogram() {
        let m = mask(6, 4, &[(0, 0), (1, 0), (3, 2), (5, 3), (2, 1)]);
        let (_, off) = tas_pair(&m);
        assert_eq!(off, tas_histogram(&m.complement()));
    }

    #[test]
    fn constant_black_is_well_defined() {
        let v = pftas(&Raster::filled(16, 16, [0, 0, 0])).unwrap();
        assert_eq!(v.len(), PFTAS_LEN);
        // All three ranges start at 0, so every mask is full and every
        // complement is empty.
        for group in v.chunks(TAS_BINS) {
            let s: f64 = group.iter().sum();
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
        }
        assert_eq!(v, pftas(&Raster::filled(16, 16, [0, 0, 0])).unwrap());
    }

    #[test]
    fn rejects_gray() {
        assert!(pftas(&Raster::gray(2, 2, vec![0; 4]).unwrap()).is_err());
    }
}
