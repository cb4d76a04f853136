//! Platt sigmoid fitted with the regularised-target Newton method of
//! Lin, Lin and Weng. The fitted probability of the positive class is
//! `1 / (1 + exp(-(a * f + b)))`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

impl Calibration {
    /// Kept strictly inside (0, 1).
    pub fn probability(&self, decision: f64) -> f64 {
        sigmoid(self.a * decision + self.b).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const PROB_FLOOR: f64 = 1e-12;
const MAX_ITER: usize = 100;
const MIN_STEP: f64 = 1e-10;
const SIGMA: f64 = 1e-12;
const EPS: f64 = 1e-5;

// Negative log-likelihood term for target t at f*A+B, written in the
// libsvm sign convention P = 1 / (1 + exp(fApB)).
fn nll(t: f64, f_ap_b: f64) -> f64 {
    if f_ap_b >= 0.0 {
        t * f_ap_b + (-f_ap_b).exp().ln_1p()
    } else {
        (t - 1.0) * f_ap_b + f_ap_b.exp().ln_1p()
    }
}

pub fn fit(decisions: &[f64], positive: &[bool]) -> Calibration {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = positive.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let targets: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();

    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let objective =
        |a: f64, b: f64| decisions.iter().zip(&targets).map(|(&f, &t)| nll(t, f * a + b)).sum::<f64>();
    let mut fval = objective(a, b);

    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &t) in decisions.iter().zip(&targets) {
            let f_ap_b = f * a + b;
            let (p, q) = if f_ap_b >= 0.0 {
                let e = (-f_ap_b).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f_ap_b.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            break;
        }
    }
    // Flip into the 1 / (1 + exp(-(a f + b))) convention.
    Calibration { a: -a, b: -b }
}
