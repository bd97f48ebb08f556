//! Random Fourier feature preconditioner.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{dot, Matrix};

use super::woodbury::{LowRankFactor, Woodbury};
use super::{rng, KernelSystem, Preconditioner};

/// `P = S ΦΦᵀ S + cI` with `(ΦΦᵀ)_ij = (σ²/m) Σ_r cos(2π s_rᵀ(x_i - x_j))`
/// and spectral points `s_r ~ N(0, Λ/4π²)`, `Λ = diag(1/l_1², …, 1/l_d²)`.
#[derive(Clone, Debug)]
pub struct Spectral {
    woodbury: Woodbury,
    frequencies: Matrix,
}

/// Feature matrix with `2m` columns: cosines first, then sines.
pub(crate) fn fourier_features(sigma2: f64, x: &Matrix, frequencies: &Matrix) -> Matrix {
    let m = frequencies.rows();
    let amp = (sigma2 / m as f64).sqrt();
    let mut phi = Matrix::zeros(x.rows(), 2 * m);
    for i in 0..x.rows() {
        for r in 0..m {
            let arg = 2.0 * PI * dot(frequencies.row(r), x.row(i));
            phi.set(i, r, amp * arg.cos());
            phi.set(i, m + r, amp * arg.sin());
        }
    }
    phi
}

impl Spectral {
    pub fn new(system: &KernelSystem<'_>, m: usize, seed: u64) -> Result<Self> {
        let n = system.n();
        if m == 0 {
            return Err(Error::InvalidRank { rank: m, n });
        }
        let d = system.x.cols();
        let ls = system.spec.lengthscales(d);
        let mut rng = rng(seed);
        let frequencies = Matrix::from_fn(m, d, |_, k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / (2.0 * PI * ls[k])
        });
        let mut phi = fourier_features(system.spec.sigma2(), system.x, &frequencies);
        system.scale_rows(&mut phi);
        let woodbury = LowRankFactor::new(phi, system.shift).woodbury()?;
        Ok(Self { woodbury, frequencies })
    }

    /// `m x d` spectral points.
    pub fn frequencies(&self) -> &Matrix {
        &self.frequencies
    }

    pub fn factor(&self) -> &LowRankFactor {
        self.woodbury.factor()
    }
}

impl Preconditioner for Spectral {
    fn dim(&self) -> usize {
        self.woodbury.n()
    }

    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) -> Result<f64> {
        self.woodbury.apply_inverse(r, z)
    }

    fn cost_per_apply(&self) -> f64 {
        self.woodbury.cost_per_apply()
    }

    fn setup_cost(&self) -> f64 {
        let n = self.dim() as f64;
        let feats = (self.frequencies.rows() * self.frequencies.cols()) as f64 * n;
        self.woodbury.setup_cost() + feats / (n * n)
    }
}

pub fn build_spectral(spec: &KernelSpec, x: &Matrix, m: usize, seed: u64) -> Result<Spectral> {
    Spectral::new(&KernelSystem::regression(spec, x), m, seed)
}
