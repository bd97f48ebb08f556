//! Inducing-point preconditioners: Nyström, FITC and PITC.
//!
//! All three share the Nyström factor `Φ = K_XU L_UU⁻ᵀ` with
//! `K_UU + εσ²I = L_UU L_UUᵀ`, so `ΦΦᵀ = K_XU K_UU⁻¹ K_UX`. They differ in the
//! diagonal part that takes the place of `λI` in the inversion lemma.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{gram, gram_cross, KernelSpec};
use crate::linalg::{dot, CholeskyFactor, DenseSymMatrix, Matrix};

use super::woodbury::{BlockDiag, DiagonalBase, LowRankFactor, Woodbury};
use super::{rng, sample_without_replacement, KernelSystem, Preconditioner, KUU_JITTER};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Correction {
    None,
    Diagonal,
    BlockDiagonal,
}

#[derive(Clone, Debug)]
pub struct InducingPoints {
    woodbury: Woodbury,
    inducing: Vec<usize>,
    blocks: Vec<Vec<usize>>,
    correction: Correction,
    factor_flops: f64,
}

/// Unscaled Nyström factor for the inducing points `u`.
pub(crate) fn nystrom_factor(spec: &KernelSpec, x: &Matrix, u: &[usize]) -> Result<Matrix> {
    let xu = x.select_rows(u);
    let mut kuu = gram(spec, &xu, false);
    kuu.add_diagonal(KUU_JITTER * spec.sigma2());
    let l = CholeskyFactor::factor(&kuu).map_err(|_| Error::InnerFactorizationFailure)?;
    let kxu = gram_cross(spec, x, &xu)?;
    let m = u.len();
    let rows: Vec<f64> = (0..x.rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut r = kxu.row(i).to_vec();
            l.forward_in_place(&mut r);
            r
        })
        .collect();
    Matrix::from_row_major(x.rows(), m, rows)
}

impl InducingPoints {
    fn build(system: &KernelSystem<'_>, m: usize, block_size: usize, correction: Correction, seed: u64) -> Result<Self> {
        let n = system.n();
        if m == 0 || m > n {
            return Err(Error::InvalidRank { rank: m, n });
        }
        if block_size == 0 {
            return Err(Error::InvalidBlockSize(block_size));
        }
        let mut rng = rng(seed);
        let inducing = sample_without_replacement(&mut rng, n, m);
        let phi = nystrom_factor(system.spec, system.x, &inducing)?;
        let sigma2 = system.spec.sigma2();

        let mut blocks = Vec::new();
        let base = match correction {
            Correction::None => DiagonalBase::Scalar(system.shift),
            Correction::Diagonal => DiagonalBase::Diagonal(
                (0..n)
                    .map(|i| {
                        let s = system.scale_at(i);
                        let phi_i = phi.row(i);
                        system.shift + s * s * (sigma2 - dot(phi_i, phi_i))
                    })
                    .collect(),
            ),
            Correction::BlockDiagonal => {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                let mut mats = Vec::new();
                for chunk in perm.chunks(block_size) {
                    let idx = chunk.to_vec();
                    let kbb = gram(system.spec, &system.x.select_rows(&idx), false);
                    let mut block = DenseSymMatrix::from_upper(idx.len(), |a, b| {
                        let (i, j) = (idx[a], idx[b]);
                        let resid = kbb.get(a, b) - dot(phi.row(i), phi.row(j));
                        system.scale_at(i) * resid * system.scale_at(j)
                    });
                    block.add_diagonal(system.shift);
                    blocks.push(idx.clone());
                    mats.push((idx, block));
                }
                DiagonalBase::Blocks(BlockDiag::new(n, mats)?)
            }
        };

        let mut scaled = phi;
        system.scale_rows(&mut scaled);
        let woodbury = LowRankFactor { phi: scaled, base }.woodbury()?;
        let (nf, mf) = (n as f64, m as f64);
        let factor_flops = nf * mf + mf.powi(3) / 3.0 + nf * mf * mf / 2.0;
        Ok(Self {
            woodbury,
            inducing,
            blocks,
            correction,
            factor_flops,
        })
    }

    /// `P = S K_XU K_UU⁻¹ K_UX S + cI`.
    pub fn nystrom(system: &KernelSystem<'_>, m: usize, seed: u64) -> Result<Self> {
        Self::build(system, m, 1, Correction::None, seed)
    }

    /// Nyström plus `S diag(K - K_XU K_UU⁻¹ K_UX) S`.
    pub fn fitc(system: &KernelSystem<'_>, m: usize, seed: u64) -> Result<Self> {
        Self::build(system, m, 1, Correction::Diagonal, seed)
    }

    /// Nyström plus the block-diagonal residual over contiguous blocks of a
    /// seeded permutation. The inducing points match FITC for the same seed.
    pub fn pitc(system: &KernelSystem<'_>, m: usize, block_size: usize, seed: u64) -> Result<Self> {
        Self::build(system, m, block_size, Correction::BlockDiagonal, seed)
    }

    pub fn inducing_indices(&self) -> &[usize] {
        &self.inducing
    }

    /// PITC blocks (empty for the other variants).
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn factor(&self) -> &LowRankFactor {
        self.woodbury.factor()
    }

    pub fn name(&self) -> &'static str {
        match self.correction {
            Correction::None => "nystrom",
            Correction::Diagonal => "fitc",
            Correction::BlockDiagonal => "pitc",
        }
    }
}

impl Preconditioner for InducingPoints {
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
        self.woodbury.setup_cost() + self.factor_flops / (n * n)
    }
}

pub fn build_nystrom(spec: &KernelSpec, x: &Matrix, m: usize, seed: u64) -> Result<InducingPoints> {
    InducingPoints::nystrom(&KernelSystem::regression(spec, x), m, seed)
}

pub fn build_fitc(spec: &KernelSpec, x: &Matrix, m: usize, seed: u64) -> Result<InducingPoints> {
    InducingPoints::fitc(&KernelSystem::regression(spec, x), m, seed)
}

pub fn build_pitc(spec: &KernelSpec, x: &Matrix, m: usize, block_size: usize, seed: u64) -> Result<InducingPoints> {
    InducingPoints::pitc(&KernelSystem::regression(spec, x), m, block_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize) -> Matrix {
        Matrix::from_fn(n, 2, |i, j| ((i * 7 + j * 3) as f64 * 0.37).sin() * 2.0)
    }

    #[test]
    fn zero_rank_rejected() {
        let spec = KernelSpec::iso(1.0, 1.0, 0.1);
        assert!(matches!(build_nystrom(&spec, &data(5), 0, 1), Err(Error::InvalidRank { .. })));
        assert!(matches!(build_nystrom(&spec, &data(5), 6, 1), Err(Error::InvalidRank { .. })));
        assert!(matches!(build_pitc(&spec, &data(5), 2, 0, 1), Err(Error::InvalidBlockSize(0))));
    }

    #[test]
    fn fitc_and_pitc_share_inducing_points() {
        let spec = KernelSpec::iso(1.0, 1.0, 0.1);
        let x = data(12);
        let f = build_fitc(&spec, &x, 4, 9).unwrap();
        let p = build_pitc(&spec, &x, 4, 3, 9).unwrap();
        assert_eq!(f.inducing_indices(), p.inducing_indices());
        assert_eq!(p.blocks().len(), 4);
    }
}
