//! Reference implementations used as oracles. None of this calls into the
//! library's numeric helpers.

#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random::<u8>()).collect()
}

/// Exhaustive search over all 256 thresholds in exact rational arithmetic.
/// Class 0 is `v <= t`. Strict improvement only, so the smallest maximiser
/// wins.
pub fn otsu_oracle(pixels: &[u8]) -> u8 {
    let n = BigInt::from(pixels.len());
    let mut best_t = 0u8;
    let mut best = BigRational::from_integer(BigInt::from(0));
    for t in 0..=255u8 {
        let (lo, hi): (Vec<u8>, Vec<u8>) = pixels.iter().partition(|&&v| v <= t);
        if lo.is_empty() || hi.is_empty() {
            continue;
        }
        let n0 = BigInt::from(lo.len());
        let n1 = BigInt::from(hi.len());
        let mu0 = BigRational::new(lo.iter().map(|&v| BigInt::from(v)).sum(), n0.clone());
        let mu1 = BigRational::new(hi.iter().map(|&v| BigInt::from(v)).sum(), n1.clone());
        let w0 = BigRational::new(n0, n.clone());
        let w1 = BigRational::new(n1, n.clone());
        let diff = mu0 - mu1;
        let var = w0 * w1 * diff.clone() * diff;
        if var > best {
            best = var;
            best_t = t;
        }
    }
    best_t
}

/// Exact `floor(x + 1/2)` for `x = (s + sign * sqrt(d)) / n`, clamped to
/// 0..=255, by integer search.
fn round_half_up_exact(s: i128, d: i128, n: i128, sign: i128) -> u8 {
    // k <= x + 1/2  <=>  2nk - 2s - n <= sign * 2 sqrt(d)
    let holds = |k: i128| {
        let lhs = 2 * n * k - 2 * s - n;
        if sign > 0 {
            lhs <= 0 || lhs * lhs <= 4 * d
        } else {
            lhs <= 0 && lhs * lhs >= 4 * d
        }
    };
    let mut k = 300;
    while !holds(k) {
        k -= 1;
    }
    k.clamp(0, 255) as u8
}

fn tas_oracle(width: usize, height: usize, mask: &[bool]) -> Vec<f64> {
    let at = |x: i64, y: i64| -> bool {
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            false
        } else {
            mask[y as usize * width + x as usize]
        }
    };
    let mut bins = [0usize; 9];
    let mut total = 0usize;
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            if !at(x, y) {
                continue;
            }
            let mut k = 0;
            if at(x - 1, y - 1) { k += 1; }
            if at(x, y - 1) { k += 1; }
            if at(x + 1, y - 1) { k += 1; }
            if at(x - 1, y) { k += 1; }
            if at(x + 1, y) { k += 1; }
            if at(x - 1, y + 1) { k += 1; }
            if at(x, y + 1) { k += 1; }
            if at(x + 1, y + 1) { k += 1; }
            bins[k] += 1;
            total += 1;
        }
    }
    bins.iter().map(|&b| if total == 0 { 0.0 } else { b as f64 / total as f64 }).collect()
}

/// Straight-line PFTAS of an interleaved RGB buffer.
pub fn pftas_oracle(width: usize, height: usize, rgb: &[u8]) -> Vec<f64> {
    let mut out = Vec::new();
    for c in 0..3 {
        let plane: Vec<u8> = rgb.iter().skip(c).step_by(3).copied().collect();
        let t = otsu_oracle(&plane);
        let above: Vec<i128> = plane.iter().filter(|&&v| v > t).map(|&v| v as i128).collect();
        let n = above.len() as i128;
        let (lo_mid, hi_mid) = if n == 0 {
            (0u8, 0u8)
        } else {
            let s: i128 = above.iter().sum();
            let q: i128 = above.iter().map(|v| v * v).sum();
            let d = n * q - s * s;
            (round_half_up_exact(s, d, n, -1), round_half_up_exact(s, d, n, 1))
        };
        for (low, high) in [(lo_mid, hi_mid), (lo_mid, 255), (hi_mid, 255)] {
            let mask: Vec<bool> = plane.iter().map(|&v| v >= low && v <= high).collect();
            let inverse: Vec<bool> = mask.iter().map(|b| !b).collect();
            out.extend(tas_oracle(width, height, &mask));
            out.extend(tas_oracle(width, height, &inverse));
        }
    }
    out
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues
/// and the matching eigenvectors (as columns of `v`, row-major).
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Sample covariance (n - 1) of row-major data.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|i| (0..d).map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0)).collect())
        .collect()
}

/// Top-k eigenpairs of the covariance, largest first.
pub fn top_k_oracle(rows: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (vals, vecs) = jacobi_eigen(&covariance(rows));
    let d = vals.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let top: Vec<usize> = order.into_iter().take(k).collect();
    (
        top.iter().map(|&i| vals[i]).collect(),
        top.iter().map(|&i| (0..d).map(|r| vecs[r][i]).collect()).collect(),
    )
}

/// Frobenius norm of `(I - P_b) A` for orthonormal row sets `a` and `b`:
/// an upper bound on the sine of the largest principal angle between the
/// spans.
pub fn subspace_sine_bound(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for u in a {
        let mut r = u.clone();
        for w in b {
            let dot: f64 = u.iter().zip(w).map(|(x, y)| x * y).sum();
            for (ri, wi) in r.iter_mut().zip(w) {
                *ri -= dot * wi;
            }
        }
        total += r.iter().map(|x| x * x).sum::<f64>();
    }
    total.sqrt()
}

/// Two isotropic 2-D Gaussians whose means are `separation` standard
/// deviations apart. Half the points are positive.
pub fn two_gaussians(n: usize, separation: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i % 2 == 0;
        let cx = if positive { separation / 2.0 } else { -separation / 2.0 };
        let a: f64 = StandardNormal.sample(&mut r);
        let b: f64 = StandardNormal.sample(&mut r);
        x.push(vec![cx + a, b]);
        y.push(positive);
    }
    (x, y)
}
