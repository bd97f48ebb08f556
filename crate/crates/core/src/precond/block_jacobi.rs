//! Block Jacobi: keep contiguous diagonal blocks of the system, drop the rest.

use crate::error::{Error, Result};
use crate::linalg::DenseSymMatrix;

use super::woodbury::BlockDiag;
use super::{KernelSystem, Preconditioner};

#[derive(Clone, Debug)]
pub struct BlockJacobi {
    blocks: BlockDiag,
}

impl BlockJacobi {
    /// `P = bldiag(S K S + cI)` over blocks `[0, b), [b, 2b), …`.
    pub fn new(system: &KernelSystem<'_>, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::InvalidBlockSize(0));
        }
        let n = system.n();
        let mats = (0..n)
            .step_by(block_size)
            .map(|start| {
                let idx: Vec<usize> = (start..(start + block_size).min(n)).collect();
                let kbb = crate::kernels::gram(system.spec, &system.x.select_rows(&idx), false);
                let mut block = DenseSymMatrix::from_upper(idx.len(), |a, b| {
                    system.scale_at(idx[a]) * kbb.get(a, b) * system.scale_at(idx[b])
                });
                block.add_diagonal(system.shift);
                (idx, block)
            })
            .collect();
        Ok(Self {
            blocks: BlockDiag::new(n, mats)?,
        })
    }

    pub fn blocks(&self) -> &BlockDiag {
        &self.blocks
    }
}

impl Preconditioner for BlockJacobi {
    fn dim(&self) -> usize {
        self.blocks.n()
    }

    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) -> Result<f64> {
        crate::error::check_dim(self.dim(), r.len())?;
        z.copy_from_slice(r);
        self.blocks.solve_in_place(z);
        Ok(self.cost_per_apply())
    }

    fn cost_per_apply(&self) -> f64 {
        let n = self.dim() as f64;
        self.blocks.solve_flops() / (n * n)
    }

    fn setup_cost(&self) -> f64 {
        let n = self.dim() as f64;
        self.blocks.setup_flops() / (n * n)
    }
}

pub fn build_block_jacobi(spec: &crate::kernels::KernelSpec, x: &crate::linalg::Matrix, block_size: usize) -> Result<BlockJacobi> {
    BlockJacobi::new(&KernelSystem::regression(spec, x), block_size)
}
