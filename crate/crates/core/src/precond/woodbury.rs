//! Low-rank-plus-(block-)diagonal inverses via the matrix inversion lemma:
//!
//! `(D + ΦΦᵀ)⁻¹ = D⁻¹ - D⁻¹Φ (I + ΦᵀD⁻¹Φ)⁻¹ ΦᵀD⁻¹`
//!
//! With `D = λI` this is `λ⁻¹[I - Φ(λI + ΦᵀΦ)⁻¹Φᵀ]`. FITC supplies a general
//! diagonal `D`, PITC a block-diagonal one.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, CholeskyFactor, DenseSymMatrix, Matrix};

use super::Preconditioner;

/// Block-diagonal SPD matrix, each block Cholesky-factored once.
#[derive(Clone, Debug)]
pub struct BlockDiag {
    n: usize,
    blocks: Vec<(Vec<usize>, CholeskyFactor)>,
}

impl BlockDiag {
    /// `blocks` must partition `0..n`.
    pub fn new(n: usize, blocks: Vec<(Vec<usize>, DenseSymMatrix)>) -> Result<Self> {
        let mut covered = vec![false; n];
        for (idx, m) in &blocks {
            check_dim(idx.len(), m.n())?;
            for &i in idx {
                if i >= n || covered[i] {
                    return Err(Error::InvalidData(format!("block index {i} repeated or out of range")));
                }
                covered[i] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::InvalidData("blocks do not cover every index".into()));
        }
        let blocks = blocks
            .into_iter()
            .enumerate()
            .map(|(b, (idx, m))| {
                CholeskyFactor::factor(&m)
                    .map(|f| (idx, f))
                    .map_err(|_| Error::BlockFactorizationFailure(b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[usize]> {
        self.blocks.iter().map(|(idx, _)| idx.as_slice())
    }

    pub fn solve_in_place(&self, v: &mut [f64]) {
        let mut buf = Vec::new();
        for (idx, f) in &self.blocks {
            buf.clear();
            buf.extend(idx.iter().map(|&i| v[i]));
            f.forward_in_place(&mut buf);
            f.backward_in_place(&mut buf);
            for (&i, &b) in idx.iter().zip(&buf) {
                v[i] = b;
            }
        }
    }

    /// Multiply-adds per solve.
    pub fn solve_flops(&self) -> f64 {
        self.blocks.iter().map(|(idx, _)| (idx.len() * idx.len()) as f64).sum()
    }

    pub fn setup_flops(&self) -> f64 {
        self.blocks.iter().map(|(idx, _)| (idx.len() as f64).powi(3) / 3.0).sum()
    }
}

/// The easily-inverted part `D` of `D + ΦΦᵀ`.
#[derive(Clone, Debug)]
pub enum DiagonalBase {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Blocks(BlockDiag),
}

impl DiagonalBase {
    fn check(&self, n: usize) -> Result<()> {
        match self {
            DiagonalBase::Scalar(c) if !(*c > 0.0) => Err(Error::InnerFactorizationFailure),
            DiagonalBase::Diagonal(d) => {
                check_dim(n, d.len())?;
                if d.iter().all(|&v| v > 0.0) {
                    Ok(())
                } else {
                    Err(Error::InnerFactorizationFailure)
                }
            }
            DiagonalBase::Blocks(b) => check_dim(n, b.n()),
            _ => Ok(()),
        }
    }

    pub fn solve_in_place(&self, v: &mut [f64]) {
        match self {
            DiagonalBase::Scalar(c) => v.iter_mut().for_each(|x| *x /= c),
            DiagonalBase::Diagonal(d) => v.iter_mut().zip(d).for_each(|(x, di)| *x /= di),
            DiagonalBase::Blocks(b) => b.solve_in_place(v),
        }
    }

    fn solve_flops(&self, n: usize) -> f64 {
        match self {
            DiagonalBase::Blocks(b) => b.solve_flops(),
            _ => n as f64,
        }
    }
}

/// `P = ΦΦᵀ + D`.
#[derive(Clone, Debug)]
pub struct LowRankFactor {
    pub phi: Matrix,
    pub base: DiagonalBase,
}

impl LowRankFactor {
    /// `ΦΦᵀ + λI`.
    pub fn new(phi: Matrix, lambda: f64) -> Self {
        Self {
            phi,
            base: DiagonalBase::Scalar(lambda),
        }
    }

    pub fn n(&self) -> usize {
        self.phi.rows()
    }

    pub fn rank(&self) -> usize {
        self.phi.cols()
    }

    pub fn woodbury(self) -> Result<Woodbury> {
        Woodbury::new(self)
    }
}

/// Precomputed inverse of a [`LowRankFactor`].
///
/// When the rank is at least `n` (e.g. many random features on few points) the
/// `n x n` matrix is factored directly instead of the larger inner system.
#[derive(Clone, Debug)]
pub struct Woodbury {
    factor: LowRankFactor,
    solver: Inner,
    setup_flops: f64,
}

#[derive(Clone, Debug)]
enum Inner {
    Lemma { base_inv_phi: Matrix, inner: CholeskyFactor },
    Dense(CholeskyFactor),
}

impl DiagonalBase {
    fn add_to(&self, p: &mut DenseSymMatrix) {
        match self {
            DiagonalBase::Scalar(c) => p.add_diagonal(*c),
            DiagonalBase::Diagonal(d) => {
                for (i, di) in d.iter().enumerate() {
                    p.set(i, i, p.get(i, i) + di);
                }
            }
            DiagonalBase::Blocks(b) => {
                for (idx, f) in &b.blocks {
                    let m = f.reconstruct();
                    for (a, &i) in idx.iter().enumerate() {
                        for (c, &j) in idx.iter().enumerate().skip(a) {
                            p.set(i, j, p.get(i, j) + m.get(a, c));
                        }
                    }
                }
            }
        }
    }
}

impl Woodbury {
    pub fn new(factor: LowRankFactor) -> Result<Self> {
        let n = factor.n();
        let m = factor.rank();
        factor.base.check(n)?;

        if m >= n {
            let mut p = factor.phi.gram_rows();
            factor.base.add_to(&mut p);
            let chol = CholeskyFactor::factor(&p).map_err(|_| Error::InnerFactorizationFailure)?;
            let setup_flops = (n * n * m) as f64 + (n as f64).powi(3) / 3.0;
            return Ok(Self {
                factor,
                solver: Inner::Dense(chol),
                setup_flops,
            });
        }

        // D⁻¹Φ, one column at a time.
        let mut base_inv_phi = Matrix::zeros(n, m);
        let mut col = vec![0.0; n];
        for j in 0..m {
            for (i, c) in col.iter_mut().enumerate() {
                *c = factor.phi.get(i, j);
            }
            factor.base.solve_in_place(&mut col);
            for (i, &c) in col.iter().enumerate() {
                base_inv_phi.set(i, j, c);
            }
        }

        let mut c = DenseSymMatrix::from_upper(m, |a, b| {
            (0..n).map(|i| factor.phi.get(i, a) * base_inv_phi.get(i, b)).sum()
        });
        c.add_diagonal(1.0);
        let inner = CholeskyFactor::factor(&c).map_err(|_| Error::InnerFactorizationFailure)?;

        let base_setup = match &factor.base {
            DiagonalBase::Blocks(b) => b.setup_flops() + b.solve_flops() * m as f64,
            _ => (n * m) as f64,
        };
        let setup_flops = base_setup + (n * m * m) as f64 + (m as f64).powi(3) / 3.0;

        Ok(Self {
            factor,
            solver: Inner::Lemma { base_inv_phi, inner },
            setup_flops,
        })
    }

    pub fn factor(&self) -> &LowRankFactor {
        &self.factor
    }

    pub fn n(&self) -> usize {
        self.factor.n()
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v);
        match &self.solver {
            Inner::Dense(chol) => {
                chol.forward_in_place(out);
                chol.backward_in_place(out);
            }
            Inner::Lemma { base_inv_phi, inner } => {
                self.factor.base.solve_in_place(out);
                let mut s = self.factor.phi.matvec_t(out);
                inner.forward_in_place(&mut s);
                inner.backward_in_place(&mut s);
                let correction = base_inv_phi.matvec(&s);
                axpy(-1.0, &correction, out);
            }
        }
    }

    fn apply_flops(&self) -> f64 {
        let n = self.n();
        let m = self.factor.rank();
        match self.solver {
            Inner::Dense(_) => (n * n) as f64,
            Inner::Lemma { .. } => self.factor.base.solve_flops(n) + (2 * n * m + m * m) as f64,
        }
    }
}

impl Preconditioner for Woodbury {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) -> Result<f64> {
        check_dim(self.n(), r.len())?;
        self.apply(r, z);
        Ok(self.cost_per_apply())
    }

    fn cost_per_apply(&self) -> f64 {
        let n = self.n() as f64;
        self.apply_flops() / (n * n)
    }

    fn setup_cost(&self) -> f64 {
        let n = self.n() as f64;
        self.setup_flops / (n * n)
    }
}

/// One-off `(ΦΦᵀ + D)⁻¹ v`.
pub fn woodbury_apply(f: &LowRankFactor, v: &[f64]) -> Result<Vec<f64>> {
    check_dim(f.n(), v.len())?;
    let w = Woodbury::new(f.clone())?;
    let mut out = vec![0.0; v.len()];
    w.apply(v, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_factor_is_pure_diagonal() {
        let f = LowRankFactor::new(Matrix::zeros(4, 2), 2.0);
        let v = [1.0, -2.0, 4.0, 0.5];
        let out = woodbury_apply(&f, &v).unwrap();
        for (o, vi) in out.iter().zip(&v) {
            assert!((o - vi / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_one_three_by_three() {
        let phi = Matrix::from_row_major(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let f = LowRankFactor::new(phi, 1.0);
        // (ΦΦᵀ + I) = diag(2, 1, 1)
        let out = woodbury_apply(&f, &[2.0, 3.0, -1.0]).unwrap();
        let want = [1.0, 3.0, -1.0];
        for (o, w) in out.iter().zip(&want) {
            assert!((o - w).abs() < 1e-14);
        }
    }

    #[test]
    fn nonpositive_base_is_rejected() {
        let f = LowRankFactor::new(Matrix::zeros(2, 1), 0.0);
        assert!(matches!(f.woodbury(), Err(Error::InnerFactorizationFailure)));
        let f = LowRankFactor {
            phi: Matrix::zeros(2, 1),
            base: DiagonalBase::Diagonal(vec![1.0, -1.0]),
        };
        assert!(f.woodbury().is_err());
    }

    #[test]
    fn block_diag_requires_partition() {
        let b = DenseSymMatrix::identity(1);
        assert!(BlockDiag::new(2, vec![(vec![0], b.clone())]).is_err());
        assert!(BlockDiag::new(2, vec![(vec![0], b.clone()), (vec![0], b.clone())]).is_err());
        let mut bad = DenseSymMatrix::identity(1);
        bad.set(0, 0, -1.0);
        assert!(matches!(
            BlockDiag::new(2, vec![(vec![0], b), (vec![1], bad)]),
            Err(Error::BlockFactorizationFailure(1))
        ));
    }
}
