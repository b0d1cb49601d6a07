//! Class-balanced binary cross-entropy.

use crate::error::{Error, Result};

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Non-negative rational number in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u128,
    den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Result<Self> {
        if den == 0 {
            return Err(Error::invalid("ratio with zero denominator"));
        }
        let g = gcd(num, den).max(1);
        Ok(Ratio {
            num: num / g,
            den: den / g,
        })
    }

    pub fn numer(&self) -> u128 {
        self.num
    }

    pub fn denom(&self) -> u128 {
        self.den
    }

    pub fn scale(&self, k: u128) -> Ratio {
        let g = gcd(k, self.den).max(1);
        Ratio {
            num: self.num * (k / g),
            den: self.den / g,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Per-class loss weights `w(1) = N / (2 n_v)` and `w(0) = N / (2 n_n)` with
/// `N = n_v + n_n`, kept exact so each class contributes `N / 2` in total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub vehicle: Ratio,
    pub non_vehicle: Ratio,
}

impl LossWeights {
    pub fn from_counts(n_vehicle: u64, n_non_vehicle: u64) -> Result<Self> {
        if n_vehicle == 0 || n_non_vehicle == 0 {
            return Err(Error::invalid(format!(
                "both classes need samples (vehicles {n_vehicle}, non-vehicles {n_non_vehicle})"
            )));
        }
        let total = n_vehicle as u128 + n_non_vehicle as u128;
        Ok(LossWeights {
            vehicle: Ratio::new(total, 2 * n_vehicle as u128)?,
            non_vehicle: Ratio::new(total, 2 * n_non_vehicle as u128)?,
        })
    }

    pub fn for_label(&self, vehicle: bool) -> f64 {
        if vehicle {
            self.vehicle.to_f64()
        } else {
            self.non_vehicle.to_f64()
        }
    }
}

/// Weighted BCE of one prediction and its derivative with respect to `p`.
pub fn weighted_bce(p: f64, vehicle: bool, weight: f64) -> (f64, f64) {
    let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    // The clamp is flat outside the open interval, so its slope is zero there.
    let inside = p > PROB_EPS && p < 1.0 - PROB_EPS;
    if vehicle {
        let grad = if inside { -weight / clamped } else { 0.0 };
        (-weight * clamped.ln(), grad)
    } else {
        let grad = if inside { weight / (1.0 - clamped) } else { 0.0 };
        (-weight * (1.0 - clamped).ln(), grad)
    }
}
