//! Synthetic datasets drawn from an RBF GP prior.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::{gram, Dataset, KernelSpec};
use crate::linalg::{CholeskyFactor, Matrix};
use crate::precond::rng;

/// Largest `n` for which a dense prior draw is attempted.
pub const MAX_SYNTH_N: usize = 4000;

/// Standard normal inputs, `n x d`.
pub fn gaussian_inputs(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = rng(seed);
    Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
}

/// One draw `f ~ GP(0, k)` at the rows of `x`.
pub fn prior_draw(spec: &KernelSpec, x: &Matrix, seed: u64) -> Result<Vec<f64>> {
    let n = x.rows();
    if n > MAX_SYNTH_N {
        return Err(Error::InvalidData(format!("synthetic draws are limited to n <= {MAX_SYNTH_N}")));
    }
    let mut k = gram(spec, x, false);
    k.add_diagonal(1e-8 * spec.sigma2());
    let chol = CholeskyFactor::factor(&k)?;
    let mut rng = rng(seed);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(chol.l().matvec(&z))
}

/// `y = f + ε`, `f ~ GP(0, k)`, `ε ~ N(0, λ)`, with Gaussian inputs.
pub fn gp_regression(n: usize, d: usize, spec: &KernelSpec, seed: u64) -> Result<Dataset> {
    spec.validate(d)?;
    let x = gaussian_inputs(n, d, seed);
    let f = prior_draw(spec, &x, seed.wrapping_add(1))?;
    let mut rng = rng(seed.wrapping_add(2));
    let sd = spec.noise().sqrt();
    let y = f
        .iter()
        .map(|fi| {
            let e: f64 = StandardNormal.sample(&mut rng);
            fi + sd * e
        })
        .collect();
    Dataset::new(x, y)
}

/// Two classes split by the sign of a smooth GP draw; each label is flipped
/// with probability `flip`.
pub fn gp_classification(n: usize, d: usize, lengthscale: f64, flip: f64, seed: u64) -> Result<Dataset> {
    let spec = KernelSpec::iso(1.0, lengthscale, 1e-2);
    let x = gaussian_inputs(n, d, seed);
    let f = prior_draw(&spec, &x, seed.wrapping_add(1))?;
    let mut rng = rng(seed.wrapping_add(2));
    let y = f
        .iter()
        .map(|&fi| {
            let s = if fi >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < flip {
                -s
            } else {
                s
            }
        })
        .collect();
    Dataset::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible() {
        let spec = KernelSpec::iso(1.0, 0.7, 0.01);
        let a = gp_regression(30, 2, &spec, 5).unwrap();
        assert_eq!(a, gp_regression(30, 2, &spec, 5).unwrap());
        assert_ne!(a.y, gp_regression(30, 2, &spec, 6).unwrap().y);
        let c = gp_classification(40, 2, 1.0, 0.0, 1).unwrap();
        assert!(c.is_binary());
    }
}
