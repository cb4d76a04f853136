//! Sequential minimal optimisation for the soft-margin SVM dual
//!
//! ```text
//! min  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! The first index of each working pair is the maximal violator; the second
//! is picked by second-order gain (Fan, Chen and Lin, 2005). The loop stops
//! once the maximal violation `m(a) - M(a)` drops below the tolerance.

use std::rc::Rc;

/// RBF kernel `exp(-gamma * |a - b|^2)`.
pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Kernel rows computed on demand and kept in a least-recently-used cache.
struct KernelRows<'a> {
    rows: &'a [Vec<f64>],
    gamma: f64,
    cache: Vec<Option<Rc<[f64]>>>,
    last_used: Vec<u64>,
    clock: u64,
    cached: usize,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(rows: &'a [Vec<f64>], gamma: f64, cache_bytes: usize) -> Self {
        let n = rows.len();
        let capacity = (cache_bytes / (n.max(1) * std::mem::size_of::<f64>())).clamp(2, n.max(2));
        Self {
            rows,
            gamma,
            cache: vec![None; n],
            last_used: vec![0; n],
            clock: 0,
            cached: 0,
            capacity,
        }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        self.clock += 1;
        self.last_used[i] = self.clock;
        if let Some(row) = &self.cache[i] {
            return Rc::clone(row);
        }
        if self.cached >= self.capacity {
            let victim = (0..self.cache.len())
                .filter(|&t| self.cache[t].is_some() && t != i)
                .min_by_key(|&t| self.last_used[t])
                .expect("cache is non-empty when full");
            self.cache[victim] = None;
            self.cached -= 1;
        }
        let xi = &self.rows[i];
        let row: Rc<[f64]> = self.rows.iter().map(|xj| rbf(xi, xj, self.gamma)).collect();
        self.cache[i] = Some(Rc::clone(&row));
        self.cached += 1;
        row
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub cache_bytes: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-3, max_iter: 10_000_000, cache_bytes: 256 << 20 }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub alpha: Vec<f64>,
    /// Decision function is `sum_i alpha_i y_i K(x_i, x) - rho`.
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

const TAU: f64 = 1e-12;

/// Solves the dual for labels `y` in {-1, +1}.
pub fn solve(rows: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, opts: SolverOptions) -> Solution {
    let n = rows.len();
    let mut kernel = KernelRows::new(rows, gamma, opts.cache_bytes);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = opts.max_iter.max(100 * n);

    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // i maximises -y G over I_up; j is the I_low index with the largest
        // second-order decrease among those violating with i.
        let mut g_max = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if in_up && -y[t] * grad[t] > g_max {
                g_max = -y[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        let ki = kernel.row(i);
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best_gain = f64::INFINITY;
        for t in 0..n {
            let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !in_low {
                continue;
            }
            let v = y[t] * grad[t];
            g_max2 = g_max2.max(v);
            let b = g_max + v;
            if b > 0.0 {
                // K(t, t) = 1 for the RBF kernel.
                let a = ki[i] + 1.0 - 2.0 * ki[t];
                let a = if a > 0.0 { a } else { TAU };
                let gain = -(b * b) / a;
                if gain <= best_gain {
                    best_gain = gain;
                    j = t;
                }
            }
        }
        if j == usize::MAX || g_max + g_max2 < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let kj = kernel.row(j);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        let quad = {
            let q = ki[i] + kj[j] - 2.0 * ki[j];
            if q > 0.0 {
                q
            } else {
                TAU
            }
        };

        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj);
        }
    }

    Solution { rho: compute_rho(&alpha, &grad, y, c), alpha, iterations, converged }
}

fn compute_rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    }
}
