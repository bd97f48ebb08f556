//! Conjugate gradients, preconditioned CG and flexible PCG.
//!
//! All solvers start from `x₀ = 0` and stop as soon as the recurrence
//! residual satisfies `‖r‖² < ε²`. Hitting the iteration cap is not an error;
//! the report carries `converged = false` and the last iterate.

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, norm2, LinearOperator};
use crate::precond::Preconditioner;

/// Iteration cap used throughout the comparison harness.
pub const DEFAULT_MAX_ITERS: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveConfig {
    /// Threshold on the squared residual norm.
    pub epsilon2: f64,
    pub max_iters: usize,
    /// Use the Polak-Ribière style update that tolerates inexact preconditioners.
    pub flexible: bool,
}

impl SolveConfig {
    pub fn new(epsilon2: f64, max_iters: usize) -> Result<Self> {
        let cfg = Self {
            epsilon2,
            max_iters,
            flexible: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `ε² = n·10⁻¹⁰`, an average error of about `10⁻⁵` per element.
    pub fn for_dim(n: usize) -> Self {
        Self {
            epsilon2: n as f64 * 1e-10,
            max_iters: DEFAULT_MAX_ITERS,
            flexible: false,
        }
    }

    /// Looser threshold for solves nested inside a preconditioner,
    /// `ε² = n·10⁻⁶`.
    pub fn inner_for_dim(n: usize) -> Self {
        Self {
            epsilon2: n as f64 * 1e-6,
            max_iters: DEFAULT_MAX_ITERS,
            flexible: false,
        }
    }

    pub fn flexible(mut self, flexible: bool) -> Self {
        self.flexible = flexible;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon2 > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidSpec(format!(
                "solver config needs epsilon2 > 0 and max_iters >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    /// Number of system-matrix products inside the loop.
    pub iterations: usize,
    pub final_residual_norm2: f64,
    /// System products plus preconditioner work, in dense matvec units.
    pub equivalent_matvecs: f64,
    pub converged: bool,
}

/// Plain conjugate gradients on `A x = v`.
pub fn cg_solve<A: LinearOperator + ?Sized>(a: &A, v: &[f64], cfg: &SolveConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let n = a.dim();
    check_dim(n, v.len())?;

    let mut x = vec![0.0; n];
    let mut r = v.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = norm2(&r);
    let mut iterations = 0;

    while rr >= cfg.epsilon2 && iterations < cfg.max_iters {
        a.apply(&p, &mut ap);
        iterations += 1;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = norm2(&r);
        if rr_new < cfg.epsilon2 {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }

    Ok(SolveReport {
        x,
        iterations,
        final_residual_norm2: rr,
        equivalent_matvecs: iterations as f64 * a.cost_per_apply(),
        converged: rr < cfg.epsilon2,
    })
}

/// Preconditioned CG on `A x = v`.
///
/// The flexible update is used when `cfg.flexible` is set or when the
/// preconditioner reports that it is applied inexactly.
pub fn pcg_solve<A, P>(a: &A, p: &P, v: &[f64], cfg: &SolveConfig) -> Result<SolveReport>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    pcg_solve_observed(a, p, v, cfg, |_, _, _| {})
}

/// [`pcg_solve`] with a callback receiving `(iteration, x, ‖r‖²)` after each update.
pub fn pcg_solve_observed<A, P, F>(a: &A, p: &P, v: &[f64], cfg: &SolveConfig, mut observe: F) -> Result<SolveReport>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
    F: FnMut(usize, &[f64], f64),
{
    cfg.validate()?;
    let n = a.dim();
    check_dim(n, v.len())?;
    check_dim(n, p.dim())?;
    let flexible = cfg.flexible || p.is_inexact();

    let mut x = vec![0.0; n];
    let mut r = v.to_vec();
    let mut rr = norm2(&r);
    let mut iterations = 0;
    let mut precond_cost = 0.0;

    if rr >= cfg.epsilon2 {
        let mut z = vec![0.0; n];
        precond_cost += p.apply_inverse(&r, &mut z)?;
        let mut search = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let mut r_prev = if flexible { r.clone() } else { Vec::new() };

        while iterations < cfg.max_iters {
            a.apply(&search, &mut ap);
            iterations += 1;
            let pap = dot(&search, &ap);
            if !(pap > 0.0) || !pap.is_finite() || !(rz > 0.0) {
                break;
            }
            let alpha = rz / pap;
            axpy(alpha, &search, &mut x);
            if flexible {
                r_prev.copy_from_slice(&r);
            }
            axpy(-alpha, &ap, &mut r);
            rr = norm2(&r);
            observe(iterations, &x, rr);
            if rr < cfg.epsilon2 {
                break;
            }
            precond_cost += p.apply_inverse(&r, &mut z)?;
            let rz_new = dot(&r, &z);
            let beta = if flexible {
                let num: f64 = z.iter().zip(r.iter().zip(&r_prev)).map(|(zi, (ri, qi))| zi * (ri - qi)).sum();
                num / rz
            } else {
                rz_new / rz
            };
            rz = rz_new;
            for (si, zi) in search.iter_mut().zip(&z) {
                *si = zi + beta * *si;
            }
        }
    }

    Ok(SolveReport {
        x,
        iterations,
        final_residual_norm2: rr,
        equivalent_matvecs: iterations as f64 * a.cost_per_apply() + precond_cost,
        converged: rr < cfg.epsilon2,
    })
}
