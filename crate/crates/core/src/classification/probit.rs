//! Probit likelihood `p(y | f) = Φ(y f)` and its derivatives in `f`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Below this point `Φ` is evaluated through its asymptotic series.
const TAIL: f64 = -35.0;

fn ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// `1 - 1/z² + 3/z⁴ - 15/z⁶ + …`, so that `Φ(z) ≈ φ(z)/|z| · series` for `z ≪ 0`.
fn tail_series(z: f64) -> f64 {
    let q = 1.0 / (z * z);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=6 {
        term *= -((2 * k - 1) as f64) * q;
        sum += term;
    }
    sum
}

/// `log Φ(z)`, accurate in both tails.
pub fn log_cdf(z: f64) -> f64 {
    if z < TAIL {
        ln_pdf(z) - (-z).ln() + tail_series(z).ln()
    } else if z < 0.0 {
        (0.5 * libm::erfc(-z * FRAC_1_SQRT_2)).ln()
    } else {
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    }
}

/// Inverse Mills ratio `φ(z)/Φ(z)`.
fn mills(z: f64) -> f64 {
    if z < TAIL {
        -z / tail_series(z)
    } else {
        (ln_pdf(z) - log_cdf(z)).exp()
    }
}

pub fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ProbitLikelihood;

impl ProbitLikelihood {
    /// `log p(y_i | f_i)` and its first three derivatives in `f_i`.
    pub fn derivatives(y: f64, f: f64) -> (f64, f64, f64, f64) {
        let z = y * f;
        let n = mills(z);
        let zn = z + n;
        let d1 = y * n;
        let d2 = -n * zn;
        let d3 = y * n * (zn * (z + 2.0 * n) - 1.0);
        (log_cdf(z), d1, d2, d3)
    }

    pub fn log_lik(y: &[f64], f: &[f64]) -> f64 {
        y.iter().zip(f).map(|(&yi, &fi)| log_cdf(yi * fi)).sum()
    }
}
