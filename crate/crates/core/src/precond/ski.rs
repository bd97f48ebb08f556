//! Structured kernel interpolation (SKI) preconditioner.
//!
//! Inducing points sit on a Cartesian grid, so `K_UU` is a Kronecker product
//! of one-dimensional Gram matrices (the RBF kernel is separable). Each input
//! is assigned to its nearest grid node, giving `K_XU ≈ W K_UU` with one unit
//! entry per row of `W`. The preconditioner `P = S W K_UU Wᵀ S + cI` has no
//! closed-form inverse, so `P⁻¹` runs an inner CG with Kronecker matvecs.

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{DenseSymMatrix, LinearOperator, Matrix};
use crate::solvers::{cg_solve, SolveConfig};

use super::regularized::relative_inner_config;
use super::{KernelSystem, Preconditioner};

/// Largest grid SKI will build.
pub const MAX_GRID_NODES: usize = 1 << 22;

#[derive(Clone, Debug, PartialEq)]
pub struct SkiConfig {
    /// Grid points per input dimension; `None` sizes the grid so one
    /// Kronecker product costs about `n^{3/2}`.
    pub points_per_dim: Option<usize>,
    /// Fraction of the data range added on each side of the grid.
    pub inflation: f64,
    pub inner: SolveConfig,
}

impl SkiConfig {
    pub fn for_dim(n: usize) -> Self {
        Self {
            points_per_dim: None,
            inflation: 0.05,
            inner: SolveConfig::inner_for_dim(n),
        }
    }
}

/// `g` with `d · g^{d+1} ≈ n^{3/2}`.
pub fn budget_points_per_dim(n: usize, d: usize) -> usize {
    let target = (n as f64).powf(1.5) / d as f64;
    (target.powf(1.0 / (d as f64 + 1.0)).floor() as usize).max(2)
}

#[derive(Clone, Debug)]
pub struct Ski {
    n: usize,
    nodes: Vec<Vec<f64>>,
    factors: Vec<DenseSymMatrix>,
    assign: Vec<usize>,
    scale: Option<Vec<f64>>,
    shift: f64,
    inner: SolveConfig,
    grid_size: usize,
}

impl Ski {
    pub fn new(system: &KernelSystem<'_>, cfg: &SkiConfig) -> Result<Self> {
        let x = system.x;
        let (n, d) = (x.rows(), x.cols());
        let g = cfg.points_per_dim.unwrap_or_else(|| budget_points_per_dim(n, d)).max(1);
        let grid_size = (0..d).try_fold(1usize, |acc, _| acc.checked_mul(g)).unwrap_or(usize::MAX);
        if grid_size > MAX_GRID_NODES {
            return Err(Error::GridTooLarge(grid_size));
        }

        let ls = system.spec.lengthscales(d);
        let mut nodes = Vec::with_capacity(d);
        let mut factors = Vec::with_capacity(d);
        for r in 0..d {
            let (lo, hi) = (0..n).map(|i| x.get(i, r)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let pad = if hi > lo { cfg.inflation * (hi - lo) } else { 0.5 };
            let (start, stop) = (lo - pad, hi + pad);
            let coords: Vec<f64> = if g == 1 {
                vec![0.5 * (start + stop)]
            } else {
                (0..g).map(|k| start + (stop - start) * k as f64 / (g - 1) as f64).collect()
            };
            // σ² is folded into the first factor.
            let amp = if r == 0 { system.spec.sigma2() } else { 1.0 };
            let l2 = ls[r] * ls[r];
            factors.push(DenseSymMatrix::from_upper(g, |a, b| {
                let diff = coords[a] - coords[b];
                amp * (-0.5 * diff * diff / l2).exp()
            }));
            nodes.push(coords);
        }

        let assign = (0..n)
            .map(|i| {
                nodes.iter().enumerate().fold(0usize, |flat, (r, coords)| {
                    flat * g + nearest(coords, x.get(i, r))
                })
            })
            .collect();

        Ok(Self {
            n,
            nodes,
            factors,
            assign,
            scale: system.scale.map(|s| s.to_vec()),
            shift: system.shift,
            inner: cfg.inner,
            grid_size,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Grid node coordinates, one row per node, last dimension varying fastest.
    pub fn grid_points(&self) -> Matrix {
        let d = self.nodes.len();
        let g = self.nodes.first().map_or(1, |c| c.len());
        Matrix::from_fn(self.grid_size, d, |idx, r| {
            let stride = g.pow((d - 1 - r) as u32);
            self.nodes[r][(idx / stride) % g]
        })
    }

    /// Grid node assigned to each input.
    pub fn assignments(&self) -> &[usize] {
        &self.assign
    }

    /// `K_UU v` through the Kronecker factors.
    pub fn kuu_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.grid_size);
        let mut cur = v.to_vec();
        let mut next = vec![0.0; self.grid_size];
        let d = self.factors.len();
        for (r, f) in self.factors.iter().enumerate() {
            let g = f.n();
            let stride: usize = self.factors[r + 1..d].iter().map(|m| m.n()).product();
            let outer = self.grid_size / (g * stride);
            let mut fiber = vec![0.0; g];
            for o in 0..outer {
                let base = o * g * stride;
                for t in 0..stride {
                    for (k, fk) in fiber.iter_mut().enumerate() {
                        *fk = cur[base + k * stride + t];
                    }
                    for a in 0..g {
                        next[base + a * stride + t] = crate::linalg::dot(f.row(a), &fiber);
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    fn kron_flops(&self) -> f64 {
        let g: usize = self.nodes.first().map_or(1, |c| c.len());
        (self.factors.len() * self.grid_size * g) as f64
    }

    fn inner_iteration_cost(&self) -> f64 {
        let n = self.n as f64;
        (self.kron_flops() + 3.0 * n) / (n * n)
    }

    /// `P x`.
    pub fn apply_system(&self, x: &[f64]) -> Vec<f64> {
        self.apply_vec(x)
    }
}

fn nearest(coords: &[f64], v: f64) -> usize {
    if coords.len() == 1 {
        return 0;
    }
    let step = coords[1] - coords[0];
    let k = ((v - coords[0]) / step).round();
    k.clamp(0.0, (coords.len() - 1) as f64) as usize
}

impl LinearOperator for Ski {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut grid = vec![0.0; self.grid_size];
        for (i, &node) in self.assign.iter().enumerate() {
            let s = self.scale.as_ref().map_or(1.0, |s| s[i]);
            grid[node] += s * x[i];
        }
        let kg = self.kuu_matvec(&grid);
        for (i, &node) in self.assign.iter().enumerate() {
            let s = self.scale.as_ref().map_or(1.0, |s| s[i]);
            y[i] = s * kg[node] + self.shift * x[i];
        }
    }

    fn cost_per_apply(&self) -> f64 {
        self.inner_iteration_cost()
    }
}

impl Preconditioner for Ski {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_inverse(&self, r: &[f64], z: &mut [f64]) -> Result<f64> {
        let Some(cfg) = relative_inner_config(&self.inner, r) else {
            z.fill(0.0);
            return Ok(0.0);
        };
        let rep = cg_solve(self, r, &cfg)?;
        z.copy_from_slice(&rep.x);
        Ok(rep.equivalent_matvecs)
    }

    fn cost_per_apply(&self) -> f64 {
        self.inner_iteration_cost()
    }

    fn setup_cost(&self) -> f64 {
        let n = self.n as f64;
        let g: usize = self.nodes.first().map_or(1, |c| c.len());
        (self.factors.len() * g * g) as f64 / (n * n)
    }

    fn is_inexact(&self) -> bool {
        true
    }
}

pub fn build_ski(spec: &KernelSpec, x: &Matrix, grid_points_per_dim: usize, cfg_inner: SolveConfig) -> Result<Ski> {
    let cfg = SkiConfig {
        points_per_dim: Some(grid_points_per_dim),
        inflation: 0.05,
        inner: cfg_inner,
    };
    Ski::new(&KernelSystem::regression(spec, x), &cfg)
}
