//! Randomized truncated SVD preconditioner.
//!
//! Gaussian range finder with one power iteration. Since `K` is symmetric
//! PSD, the small projected problem is solved as a symmetric eigenproblem
//! and `Φ = Q V_k diag(√σ_k)` so that `ΦΦᵀ ≈` the best rank-`k` approximation.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::Matrix;

use super::woodbury::{LowRankFactor, Woodbury};
use super::{rng, KernelSystem, Preconditioner};

#[derive(Clone, Debug)]
pub struct PartialSvd {
    woodbury: Woodbury,
    singular_values: Vec<f64>,
    setup_matvecs: f64,
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn orthonormal_basis(y: &Matrix) -> Matrix {
    from_na(&to_na(y).qr().q())
}

/// Returns `(Φ, σ)` with `ΦΦᵀ ≈ K` of rank `rank`.
pub(crate) fn randomized_factor(k: &Matrix, rank: usize, oversample: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let n = k.rows();
    let l = (rank + oversample).min(n);
    let mut rng = rng(seed);
    let omega = Matrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));

    let q = orthonormal_basis(&k.matmul(&omega));
    // One power iteration sharpens the captured spectrum.
    let q = orthonormal_basis(&k.matmul(&q));
    let kq = k.matmul(&q);
    let mut t = to_na(&q.transpose().matmul(&kq));
    t = (&t + t.transpose()) * 0.5;
    let eig = SymmetricEigen::new(t);

    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = &order[..rank];

    let sigma: Vec<f64> = top.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();
    let mut phi = Matrix::zeros(n, rank);
    for i in 0..n {
        for (out_col, (&c, s)) in top.iter().zip(&sigma).enumerate() {
            let v: f64 = (0..l).map(|a| q.get(i, a) * eig.eigenvectors[(a, c)]).sum();
            phi.set(i, out_col, v * s.sqrt());
        }
    }
    (phi, sigma)
}

impl PartialSvd {
    pub fn new(system: &KernelSystem<'_>, rank: usize, oversample: usize, seed: u64) -> Result<Self> {
        let n = system.n();
        if rank == 0 || rank > n {
            return Err(Error::InvalidRank { rank, n });
        }
        let k = system.noise_free_gram().into_matrix();
        let (mut phi, singular_values) = randomized_factor(&k, rank, oversample, seed);
        system.scale_rows(&mut phi);
        let woodbury = LowRankFactor::new(phi, system.shift).woodbury()?;
        let l = (rank + oversample).min(n);
        Ok(Self {
            woodbury,
            singular_values,
            setup_matvecs: 3.0 * l as f64,
        })
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn factor(&self) -> &LowRankFactor {
        self.woodbury.factor()
    }
}

impl Preconditioner for PartialSvd {
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
        self.woodbury.setup_cost() + self.setup_matvecs
    }
}

pub fn build_partial_svd(spec: &KernelSpec, x: &Matrix, rank: usize, oversample: usize, seed: u64) -> Result<PartialSvd> {
    PartialSvd::new(&KernelSystem::regression(spec, x), rank, oversample, seed)
}
