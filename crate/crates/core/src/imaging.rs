//! Rasters, binary masks, Otsu thresholding and patch tessellation.

use serde::{Deserialize, Serialize};

use crate::dataset::{BinaryLabel, ImageEntry, Magnification};
use crate::error::{Error, Result};

/// Side length of the square patches cut from every source image.
pub const PATCH_SIDE: usize = 150;

/// Row-major 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{}x{}x{} raster needs {} samples, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn filled(width: usize, height: usize, pixel: [u8; 3]) -> Self {
        let data = pixel.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, channels: 3, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Single-channel copy of channel `c`.
    pub fn channel(&self, c: usize) -> Result<Raster> {
        if c >= self.channels {
            return Err(Error::Shape(format!(
                "channel {c} out of range for {}-channel raster",
                self.channels
            )));
        }
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Ok(Raster { width: self.width, height: self.height, channels: 1, data })
    }

    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Raster> {
        if x + width > self.width || y + height > self.height {
            return Err(Error::Shape(format!(
                "crop {width}x{height}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let row_len = width * self.channels;
        let mut data = Vec::with_capacity(row_len * height);
        for row in y..y + height {
            let start = (row * self.width + x) * self.channels;
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Ok(Raster { width, height, channels: self.channels, data })
    }
}

/// One bit per pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

/// Position of one patch inside its source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub col: usize,
    pub row: usize,
    pub x: usize,
    pub y: usize,
}

/// A tile cut from a source image plus the provenance needed downstream.
#[derive(Debug, Clone)]
pub struct PatchRecord {
    pub pixels: Raster,
    pub origin: (usize, usize),
    pub grid_pos: (usize, usize),
    pub source_image_id: String,
    pub patient_id: String,
    pub magnification: Option<Magnification>,
    pub binary_label: Option<BinaryLabel>,
}

// round(num / den) with halves going up, for non-negative operands.
fn div_round_half_up(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Evenly spaced offsets of `side`-long windows covering `[0, dim)`.
///
/// The window count is `round(dim / side)` (at least one); the first window
/// starts at 0 and, when there is more than one, the last ends at `dim`.
pub fn axis_offsets(dim: usize, side: usize) -> Result<Vec<usize>> {
    if side == 0 {
        return Err(Error::InvalidArgument("patch side must be positive".into()));
    }
    if dim < side {
        return Err(Error::ImageTooSmall { width: dim, height: dim, side });
    }
    let n = div_round_half_up(dim, side).max(1);
    if n == 1 {
        return Ok(vec![0]);
    }
    Ok((0..n).map(|i| div_round_half_up(i * (dim - side), n - 1)).collect())
}

/// Row-major patch grid for a `width` x `height` image.
pub fn patch_grid(width: usize, height: usize, side: usize) -> Result<Vec<GridCell>> {
    if width < side || height < side {
        return Err(Error::ImageTooSmall { width, height, side });
    }
    let xs = axis_offsets(width, side)?;
    let ys = axis_offsets(height, side)?;
    let mut cells = Vec::with_capacity(xs.len() * ys.len());
    for (row, &y) in ys.iter().enumerate() {
        for (col, &x) in xs.iter().enumerate() {
            cells.push(GridCell { col, row, x, y });
        }
    }
    Ok(cells)
}

/// Cuts `img` into `side` x `side` patches in row-major grid order.
pub fn tessellate(img: &Raster, side: usize) -> Result<Vec<(GridCell, Raster)>> {
    patch_grid(img.width(), img.height(), side)?
        .into_iter()
        .map(|cell| Ok((cell, img.crop(cell.x, cell.y, side, side)?)))
        .collect()
}

/// Tessellates the decoded image of `entry` and attaches its provenance.
pub fn tessellate_entry(img: &Raster, entry: &ImageEntry, side: usize) -> Result<Vec<PatchRecord>> {
    Ok(tessellate(img, side)?
        .into_iter()
        .map(|(cell, pixels)| PatchRecord {
            pixels,
            origin: (cell.x, cell.y),
            grid_pos: (cell.col, cell.row),
            source_image_id: entry.image_id.clone(),
            patient_id: entry.patient_id.clone(),
            magnification: entry.magnification,
            binary_label: entry.binary_label(),
        })
        .collect())
}

/// Luma with fixed weights 0.299 / 0.587 / 0.114, rounded half up.
pub fn to_grayscale(img: &Raster) -> Result<Raster> {
    if img.channels() != 3 {
        return Err(Error::Shape("grayscale conversion needs an RGB raster".into()));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            let luma = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            (luma + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    Raster::gray(img.width(), img.height(), data)
}

pub fn histogram(samples: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in samples {
        hist[v as usize] += 1;
    }
    hist
}

/// Otsu threshold of a single-channel raster. Pixels `<= T` form the lower
/// class.
pub fn otsu_threshold(channel: &Raster) -> Result<u8> {
    if channel.channels() != 1 {
        return Err(Error::Shape("Otsu threshold needs a single-channel raster".into()));
    }
    otsu_threshold_samples(channel.data())
}

/// Threshold maximising the between-class variance over the 256-bin
/// histogram; the smallest maximiser wins ties.
///
/// The variance at `T` equals `D^2 / (N^2 * W0 * W1)` with
/// `D = N*S0 - W0*S`, so candidates are compared exactly by
/// cross-multiplying `D^2 * W0' * W1'` in 128-bit integers.
pub fn otsu_threshold_samples(samples: &[u8]) -> Result<u8> {
    if samples.is_empty() {
        return Err(Error::Empty("otsu threshold input"));
    }
    let hist = histogram(samples);
    let n = samples.len() as i128;
    let total: i128 = hist.iter().enumerate().map(|(v, &c)| v as i128 * c as i128).sum();

    // (D^2, W0*W1) of the best candidate so far; zero variance to start.
    let mut best_t = 0u8;
    let mut best: (u128, u128) = (0, 1);
    let mut w0: i128 = 0;
    let mut s0: i128 = 0;
    for (t, &h) in hist.iter().enumerate() {
        w0 += h as i128;
        s0 += t as i128 * h as i128;
        let w1 = n - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let d = (n * s0 - w0 * total).unsigned_abs();
        let cand = (d * d, (w0 * w1) as u128);
        if greater(cand, best) {
            best = cand;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

// a.0/a.1 > b.0/b.1, exact when the products fit, f64 otherwise.
fn greater(a: (u128, u128), b: (u128, u128)) -> bool {
    match (a.0.checked_mul(b.1), b.0.checked_mul(a.1)) {
        (Some(lhs), Some(rhs)) => lhs > rhs,
        _ => (a.0 as f64 / a.1 as f64) > (b.0 as f64 / b.1 as f64),
    }
}

/// Mask of pixels with `low <= value <= high`.
pub fn binarize(channel: &Raster, low: u8, high: u8) -> Result<BinaryMask> {
    if channel.channels() != 1 {
        return Err(Error::Shape("binarize needs a single-channel raster".into()));
    }
    if low > high {
        return Err(Error::InvalidArgument(format!("binarize range {low}..={high} is empty")));
    }
    let bits = channel.data().iter().map(|&v| low <= v && v <= high).collect();
    BinaryMask::new(channel.width(), channel.height(), bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakhis_geometry() {
        assert_eq!(axis_offsets(700, 150).unwrap(), vec![0, 138, 275, 413, 550]);
        assert_eq!(axis_offsets(460, 150).unwrap(), vec![0, 155, 310]);
        let grid = patch_grid(700, 460, 150).unwrap();
        assert_eq!(grid.len(), 15);
        assert_eq!(grid[0], GridCell { col: 0, row: 0, x: 0, y: 0 });
        assert_eq!(grid[5], GridCell { col: 0, row: 1, x: 0, y: 155 });
        assert_eq!(grid[14], GridCell { col: 4, row: 2, x: 550, y: 310 });
    }

    #[test]
    fn single_patch_image() {
        let img = Raster::filled(150, 150, [1, 2, 3]);
        let patches = tessellate(&img, 150).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!((patches[0].0.x, patches[0].0.y), (0, 0));
        assert_eq!(patches[0].1, img);
    }

    #[test]
    fn too_small_is_rejected() {
        let img = Raster::filled(149, 300, [0, 0, 0]);
        assert!(matches!(tessellate(&img, 150), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn patches_are_exact_crops() {
        let data: Vec<u8> = (0..320 * 200 * 3).map(|i| (i * 7 % 251) as u8).collect();
        let img = Raster::rgb(320, 200, data).unwrap();
        for (cell, patch) in tessellate(&img, 150).unwrap() {
            for y in 0..150 {
                for x in 0..150 {
                    for c in 0..3 {
                        assert_eq!(patch.get(x, y, c), img.get(cell.x + x, cell.y + y, c));
                    }
                }
            }
        }
    }

    #[test]
    fn grayscale_weights() {
        let img = Raster::rgb(3, 1, vec![255, 255, 255, 0, 0, 0, 255, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&img).unwrap().data(), &[255, 0, 76]);
        assert!(to_grayscale(&Raster::gray(1, 1, vec![3]).unwrap()).is_err());
    }

    #[test]
    fn otsu_two_levels_and_constant() {
        let mut data = vec![0u8; 32];
        data.extend(vec![255u8; 32]);
        let img = Raster::gray(8, 8, data).unwrap();
        assert_eq!(otsu_threshold(&img).unwrap(), 0);
        let mask = binarize(&img, 1, 255).unwrap();
        assert_eq!(mask.count_set(), 32);

        let flat = Raster::gray(4, 4, vec![100; 16]).unwrap();
        assert_eq!(otsu_threshold(&flat).unwrap(), 0);
        assert!(otsu_threshold_samples(&[]).is_err());
    }

    #[test]
    fn otsu_ten_and_two_hundred() {
        // 12 pixels at 10 and 4 at 200: every T in 10..200 splits identically,
        // the smallest such T is 10.
        let mut data = vec![10u8; 12];
        data.extend(vec![200u8; 4]);
        assert_eq!(otsu_threshold_samples(&data).unwrap(), 10);
    }

    #[test]
    fn binarize_ranges() {
        let ramp = Raster::gray(256, 1, (0..=255).collect()).unwrap();
        assert_eq!(binarize(&ramp, 0, 255).unwrap().count_set(), 256);
        assert_eq!(binarize(&ramp, 100, 150).unwrap().count_set(), 51);
        let no_white = Raster::gray(2, 2, vec![0, 10, 20, 254]).unwrap();
        assert_eq!(binarize(&no_white, 255, 255).unwrap().count_set(), 0);
        assert!(binarize(&ramp, 5, 4).is_err());
    }
}
