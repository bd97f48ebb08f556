//! Regularized preconditioner `P = A + δI`, applied by an inner CG.

use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::linalg::{norm2, DenseSymMatrix, LinearOperator, Matrix, ScaledShifted};
use crate::solvers::{cg_solve, SolveConfig};

use super::Preconditioner;

/// Inner threshold scaled by the mean square of the right-hand side, so the
/// inner accuracy is relative and does not vanish as the outer residual
/// shrinks. Returns `None` for a zero right-hand side.
pub(crate) fn relative_inner_config(inner: &SolveConfig, rhs: &[f64]) -> Option<SolveConfig> {
    let ms = norm2(rhs) / rhs.len().max(1) as f64;
    if ms == 0.0 {
        return None;
    }
    Some(SolveConfig {
        epsilon2: inner.epsilon2 * ms,
        max_iters: inner.max_iters,
        flexible: false,
    })
}

#[derive(Clone, Debug)]
pub struct Regularized<A> {
    op: ScaledShifted<A>,
    delta: f64,
    inner: SolveConfig,
}

impl<A: LinearOperator> Regularized<A> {
    /// Wraps the system operator `system`; `delta` must be positive.
    pub fn new(system: A, delta: f64, inner: SolveConfig) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidDelta(delta));
        }
        inner.validate()?;
        Ok(Self {
            op: ScaledShifted::shifted(system, delta),
            delta,
            inner,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl<A: LinearOperator> Preconditioner for Regularized<A> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) -> Result<f64> {
        let Some(cfg) = relative_inner_config(&self.inner, r) else {
            z.fill(0.0);
            return Ok(0.0);
        };
        let rep = cg_solve(&self.op, r, &cfg)?;
        z.copy_from_slice(&rep.x);
        Ok(rep.equivalent_matvecs)
    }

    /// One inner iteration; the measured cost is returned by each application.
    fn cost_per_apply(&self) -> f64 {
        self.op.cost_per_apply()
    }

    fn is_inexact(&self) -> bool {
        true
    }
}

/// `P = K_y + δI` over a dense `K_y`.
pub fn build_regularized(spec: &KernelSpec, x: &Matrix, delta: f64, cfg_inner: SolveConfig) -> Result<Regularized<DenseSymMatrix>> {
    Regularized::new(gram(spec, x, true), delta, cfg_inner)
}
