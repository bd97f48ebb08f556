//! Kernel-matrix preconditioners.
//!
//! Every preconditioner here approximates a *kernel system*
//! `A = S K S + c I`, where `K` is the noise-free Gram matrix, `S` an optional
//! diagonal scaling and `c > 0` a diagonal shift. Regression uses `S = I`,
//! `c = λ` (so `A = K_y`); the Laplace approximation uses `S = W^{1/2}`,
//! `c = 1` (so `A = B`). Applying an approximation `K̂ ≈ K` inside the same
//! structure gives the low-rank preconditioners for both cases.
//!
//! Costs are reported in units of one dense `n x n` matvec.

mod block_jacobi;
mod inducing;
mod regularized;
mod ski;
mod spectral;
mod svd;
mod woodbury;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use block_jacobi::{build_block_jacobi, BlockJacobi};
pub use inducing::{build_fitc, build_nystrom, build_pitc, InducingPoints};
pub use regularized::{build_regularized, Regularized};
pub use ski::{build_ski, Ski, SkiConfig};
pub use spectral::{build_spectral, Spectral};
pub use svd::{build_partial_svd, PartialSvd};
pub use woodbury::{woodbury_apply, BlockDiag, DiagonalBase, LowRankFactor, Woodbury};

use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::linalg::{CholeskyFactor, DenseSymMatrix, LinearOperator, Matrix, ScaledShifted};
use crate::solvers::SolveConfig;

/// Relative jitter added to inducing-point covariances before factorizing.
pub const KUU_JITTER: f64 = 1e-8;

/// Something that applies `P⁻¹` to a vector.
pub trait Preconditioner: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `P⁻¹ r` into `z` and returns the work done, in matvec units.
    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) -> Result<f64>;

    /// Nominal cost of one application (measured cost may differ for nested kinds).
    fn cost_per_apply(&self) -> f64;

    /// One-off construction cost.
    fn setup_cost(&self) -> f64 {
        0.0
    }

    /// `true` when `P⁻¹` is itself computed by an iterative inner solve, in
    /// which case the outer solver switches to flexible PCG.
    fn is_inexact(&self) -> bool {
        false
    }

    fn apply_inverse_vec(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.dim()];
        self.apply_inverse(r, &mut z)?;
        Ok(z)
    }
}

impl<T: Preconditioner + ?Sized> Preconditioner for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) -> Result<f64> {
        (**self).apply_inverse(r, z)
    }
    fn cost_per_apply(&self) -> f64 {
        (**self).cost_per_apply()
    }
    fn setup_cost(&self) -> f64 {
        (**self).setup_cost()
    }
    fn is_inexact(&self) -> bool {
        (**self).is_inexact()
    }
}

/// `P = I`; turns PCG into CG.
#[derive(Clone, Copy, Debug)]
pub struct Identity {
    n: usize,
}

impl Identity {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Preconditioner for Identity {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) -> Result<f64> {
        z.copy_from_slice(r);
        Ok(0.0)
    }
    fn cost_per_apply(&self) -> f64 {
        0.0
    }
}

/// An exact factorization used as a preconditioner (PCG then takes one step).
impl Preconditioner for CholeskyFactor {
    fn dim(&self) -> usize {
        self.n()
    }
    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) -> Result<f64> {
        self.apply(r, z);
        Ok(1.0)
    }
    fn cost_per_apply(&self) -> f64 {
        1.0
    }
}

/// The system `S K S + c I` a preconditioner approximates.
#[derive(Clone, Copy, Debug)]
pub struct KernelSystem<'a> {
    pub spec: &'a KernelSpec,
    pub x: &'a Matrix,
    /// Diagonal of `S`; `None` means identity.
    pub scale: Option<&'a [f64]>,
    pub shift: f64,
    /// Precomputed noise-free `K`, reused when available.
    pub gram: Option<&'a DenseSymMatrix>,
}

impl<'a> KernelSystem<'a> {
    /// `K_y = K + λ I`.
    pub fn regression(spec: &'a KernelSpec, x: &'a Matrix) -> Self {
        Self {
            spec,
            x,
            scale: None,
            shift: spec.noise(),
            gram: None,
        }
    }

    /// `B = I + W^{1/2} K W^{1/2}` given `sqrt_w = diag(W^{1/2})`.
    pub fn laplace(spec: &'a KernelSpec, x: &'a Matrix, sqrt_w: &'a [f64]) -> Self {
        Self {
            spec,
            x,
            scale: Some(sqrt_w),
            shift: 1.0,
            gram: None,
        }
    }

    pub fn with_gram(mut self, k: &'a DenseSymMatrix) -> Self {
        self.gram = Some(k);
        self
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub(crate) fn scale_at(&self, i: usize) -> f64 {
        self.scale.map_or(1.0, |s| s[i])
    }

    pub(crate) fn scale_rows(&self, m: &mut Matrix) {
        if let Some(s) = self.scale {
            m.scale_rows(s);
        }
    }

    pub(crate) fn noise_free_gram(&self) -> DenseSymMatrix {
        match self.gram {
            Some(k) => k.clone(),
            None => gram(self.spec, self.x, false),
        }
    }

    /// The full system as an owned dense operator.
    pub fn dense_operator(&self) -> ScaledShifted<DenseSymMatrix> {
        let k = self.noise_free_gram();
        ScaledShifted {
            inner: k,
            scale: self.scale.map(|s| s.to_vec()),
            shift: self.shift,
        }
    }

    /// Explicit dense `S K S + c I`.
    pub fn dense(&self) -> DenseSymMatrix {
        let k = self.noise_free_gram();
        let n = self.n();
        let mut a = DenseSymMatrix::from_upper(n, |i, j| self.scale_at(i) * k.get(i, j) * self.scale_at(j));
        a.add_diagonal(self.shift);
        a
    }
}

/// Preconditioner families selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PreconditionerKind {
    None,
    Nystrom,
    Fitc,
    Pitc,
    Spectral,
    Svd,
    Ski,
    BlockJacobi,
    Regularized,
}

impl PreconditionerKind {
    pub const ALL: [PreconditionerKind; 8] = [
        Self::Nystrom,
        Self::Fitc,
        Self::Pitc,
        Self::Spectral,
        Self::Svd,
        Self::Ski,
        Self::BlockJacobi,
        Self::Regularized,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Nystrom => "nystrom",
            Self::Fitc => "fitc",
            Self::Pitc => "pitc",
            Self::Spectral => "spectral",
            Self::Svd => "svd",
            Self::Ski => "ski",
            Self::BlockJacobi => "blockjacobi",
            Self::Regularized => "regularized",
        }
    }
}

impl fmt::Display for PreconditionerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PreconditionerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().as_str() {
            "none" | "cg" => Self::None,
            "nystrom" => Self::Nystrom,
            "fitc" => Self::Fitc,
            "pitc" => Self::Pitc,
            "spectral" => Self::Spectral,
            "svd" => Self::Svd,
            "ski" => Self::Ski,
            "blockjacobi" => Self::BlockJacobi,
            "regularized" => Self::Regularized,
            other => return Err(Error::InvalidSpec(format!("unknown preconditioner kind {other:?}"))),
        };
        Ok(kind)
    }
}

/// Construction parameters; [`PrecondParams::for_dim`] gives the `O(n^{3/2})` budgets.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecondParams {
    /// Inducing points, random frequencies or SVD rank.
    pub m: usize,
    pub block_size: usize,
    pub oversample: usize,
    /// Grid points per input dimension for SKI; `None` derives it from the budget.
    pub grid_points_per_dim: Option<usize>,
    /// Regularization offset as a multiple of the system shift.
    pub delta_factor: f64,
    pub inner: SolveConfig,
}

impl PrecondParams {
    pub fn for_dim(n: usize) -> Self {
        let root = ceil_sqrt(n);
        Self {
            m: root,
            block_size: root,
            oversample: 10,
            grid_points_per_dim: None,
            delta_factor: 100.0,
            inner: SolveConfig::inner_for_dim(n),
        }
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }
}

pub fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r < n {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r.max(1)
}

/// Builds a preconditioner for `system`.
pub fn build<'a>(
    kind: PreconditionerKind,
    system: &KernelSystem<'a>,
    params: &PrecondParams,
    seed: u64,
) -> Result<Box<dyn Preconditioner + 'a>> {
    let n = system.n();
    Ok(match kind {
        PreconditionerKind::None => Box::new(Identity::new(n)),
        PreconditionerKind::Nystrom => Box::new(InducingPoints::nystrom(system, params.m, seed)?),
        PreconditionerKind::Fitc => Box::new(InducingPoints::fitc(system, params.m, seed)?),
        PreconditionerKind::Pitc => Box::new(InducingPoints::pitc(system, params.m, params.block_size, seed)?),
        PreconditionerKind::Spectral => Box::new(Spectral::new(system, params.m, seed)?),
        PreconditionerKind::Svd => Box::new(PartialSvd::new(system, params.m, params.oversample, seed)?),
        PreconditionerKind::Ski => {
            let cfg = SkiConfig {
                points_per_dim: params.grid_points_per_dim,
                inflation: 0.05,
                inner: params.inner,
            };
            Box::new(Ski::new(system, &cfg)?)
        }
        PreconditionerKind::BlockJacobi => Box::new(BlockJacobi::new(system, params.block_size)?),
        PreconditionerKind::Regularized => Box::new(Regularized::new(
            system.dense_operator(),
            params.delta_factor * system.shift,
            params.inner,
        )?),
    })
}

/// Which solver to run on a kernel system: plain CG or PCG with a given
/// preconditioner. Unset parameters are derived from `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcgSetup {
    pub kind: PreconditionerKind,
    pub params: Option<PrecondParams>,
    pub solve: Option<SolveConfig>,
}

impl PcgSetup {
    pub fn cg() -> Self {
        Self::pcg(PreconditionerKind::None)
    }

    pub fn pcg(kind: PreconditionerKind) -> Self {
        Self {
            kind,
            params: None,
            solve: None,
        }
    }

    pub fn with_params(mut self, params: PrecondParams) -> Self {
        self.params = Some(params);
        self
    }

    pub fn with_solve(mut self, solve: SolveConfig) -> Self {
        self.solve = Some(solve);
        self
    }

    pub fn params_for(&self, n: usize) -> PrecondParams {
        self.params.clone().unwrap_or_else(|| PrecondParams::for_dim(n))
    }

    pub fn solve_for(&self, n: usize) -> SolveConfig {
        self.solve.unwrap_or_else(|| SolveConfig::for_dim(n))
    }

    pub fn build<'a>(&self, system: &KernelSystem<'a>, seed: u64) -> Result<Box<dyn Preconditioner + 'a>> {
        build(self.kind, system, &self.params_for(system.n()), seed)
    }
}

/// `m` distinct indices out of `0..n`, uniformly at random.
pub(crate) fn sample_without_replacement(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    index::sample(rng, n, m).into_vec()
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for kind in PreconditionerKind::ALL.iter().chain(&[PreconditionerKind::None]) {
            assert_eq!(kind.name().parse::<PreconditionerKind>().unwrap(), *kind);
        }
        assert!("kmeans".parse::<PreconditionerKind>().is_err());
    }

    #[test]
    fn sqrt_budget() {
        assert_eq!(ceil_sqrt(1), 1);
        assert_eq!(ceil_sqrt(16), 4);
        assert_eq!(ceil_sqrt(17), 5);
        assert_eq!(ceil_sqrt(1000), 32);
    }
}
