//! Small numerical helpers shared by the probability laws and samplers.

use rand::Rng;
use std::f64::consts::PI;

/// Natural log of the gamma function.
///
/// `ln Γ(1) = ln Γ(2) = 0` is returned exactly so that identities built on the
/// gamma recurrence cancel to zero in floating point.
pub fn ln_gamma(x: f64) -> f64 {
    if x == 1.0 || x == 2.0 {
        0.0
    } else {
        statrs::function::gamma::ln_gamma(x)
    }
}

fn stirling_tail(z: f64) -> f64 {
    let z2 = z * z;
    let z3 = z2 * z;
    1.0 / (12.0 * z) - 1.0 / (360.0 * z3) + 1.0 / (1260.0 * z3 * z2) - 1.0 / (1680.0 * z3 * z2 * z2)
}

/// `ln Γ(x + a) − ln Γ(x)` for `x > 0`, `a ≥ 0`.
///
/// Small integral `a` goes through the rising-factorial product, which keeps
/// `a = 1` exact (`ln x`). Large `x` uses the Stirling difference to avoid the
/// cancellation of two large log-gamma values.
pub fn ln_gamma_ratio(x: f64, a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if a.fract() == 0.0 && a <= 64.0 {
        let steps = a as usize;
        return (0..steps).map(|j| (x + j as f64).ln()).sum();
    }
    if x >= 16.0 {
        let za = x + a;
        (x - 0.5) * (a / x).ln_1p() + a * za.ln() - a + stirling_tail(za) - stirling_tail(x)
    } else {
        ln_gamma(x + a) - ln_gamma(x)
    }
}

/// Logistic function `1 / (1 + e^{-y})`.
#[inline]
pub fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(y)` without overflow for large `|y|`.
#[inline]
pub fn ln_sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        -(-y).exp().ln_1p()
    } else {
        y - y.exp().ln_1p()
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log density of `N(x; mean, var)`.
#[inline]
pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

/// Normalizes log weights in place into probabilities; returns the log normalizer.
pub fn normalize_log_weights(weights: &mut [f64]) -> f64 {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    max + total.ln()
}

/// Draws an index from probabilities that sum to one.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln_factorial(k: u32) -> f64 {
        (1..=k).map(|j| (j as f64).ln()).sum()
    }

    #[test]
    fn gamma_ratio_integer_shift_is_exact() {
        for m in 1..2000 {
            let x = m as f64;
            assert_eq!(ln_gamma_ratio(x, 1.0), x.ln());
        }
    }

    #[test]
    fn gamma_ratio_matches_direct_difference() {
        for &x in &[0.3, 1.0, 2.5, 7.0, 15.9, 16.0, 40.0, 123.4] {
            for &a in &[0.5, 1.7, 2.0, 3.3, 10.25] {
                let direct = statrs::function::gamma::ln_gamma(x + a)
                    - statrs::function::gamma::ln_gamma(x);
                let got = ln_gamma_ratio(x, a);
                assert!((got - direct).abs() < 1e-10, "x={x} a={a}: {got} vs {direct}");
            }
        }
    }

    #[test]
    fn gamma_ratio_against_factorials() {
        // Γ(5)/Γ(3) = 4!/2! = 12
        assert!((ln_gamma_ratio(3.0, 2.0) - 12f64.ln()).abs() < 1e-14);
        assert!((ln_gamma(6.0) - ln_factorial(5)).abs() < 1e-12);
        assert_eq!(ln_gamma(1.0), 0.0);
        assert_eq!(ln_gamma(2.0), 0.0);
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval() {
        for &y in &[-30.0, -1.0, 0.0, 1.0, 30.0] {
            let s = sigmoid(y);
            assert!(s > 0.0 && s < 1.0);
            assert!((ln_sigmoid(y) - s.ln()).abs() < 1e-12);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn normalization_sums_to_one() {
        let mut w = vec![-1000.0, -1001.0, -999.5];
        normalize_log_weights(&mut w);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
