//! RBF kernel (isotropic and ARD), Gram assembly and hyperparameter
//! derivatives.
//!
//! Hyperparameters live in log space. The parameter vector is ordered
//! `[log σ², log l_1 .. log l_L, log λ]` where `L` is 1 for the isotropic
//! kernel and `d` for ARD.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, DenseSymMatrix, LinearOperator, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelMode {
    Iso,
    Ard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub log_sigma2: f64,
    pub log_lengthscales: Vec<f64>,
    pub log_noise: f64,
    pub mode: KernelMode,
}

/// One coordinate of the log-parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    LogSigma2,
    LogLengthscale(usize),
    LogNoise,
}

impl KernelSpec {
    pub fn iso(sigma2: f64, lengthscale: f64, noise: f64) -> Self {
        Self {
            log_sigma2: sigma2.ln(),
            log_lengthscales: vec![lengthscale.ln()],
            log_noise: noise.ln(),
            mode: KernelMode::Iso,
        }
    }

    pub fn ard(sigma2: f64, lengthscales: &[f64], noise: f64) -> Self {
        Self {
            log_sigma2: sigma2.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_noise: noise.ln(),
            mode: KernelMode::Ard,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let expected = match self.mode {
            KernelMode::Iso => 1,
            KernelMode::Ard => d,
        };
        if self.log_lengthscales.len() != expected {
            return Err(Error::InvalidSpec(format!(
                "{:?} kernel needs {expected} lengthscales, got {}",
                self.mode,
                self.log_lengthscales.len()
            )));
        }
        let ok = |v: f64| v.exp().is_finite() && v.exp() > 0.0;
        if !ok(self.log_sigma2) || !ok(self.log_noise) || !self.log_lengthscales.iter().all(|&l| ok(l)) {
            return Err(Error::InvalidSpec("non-finite hyperparameter".into()));
        }
        Ok(())
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    /// Per-dimension lengthscales for inputs of dimension `d`.
    pub fn lengthscales(&self, d: usize) -> Vec<f64> {
        match self.mode {
            KernelMode::Iso => vec![self.log_lengthscales[0].exp(); d],
            KernelMode::Ard => self.log_lengthscales.iter().map(|l| l.exp()).collect(),
        }
    }

    fn inv_sq_lengthscales(&self, d: usize) -> Vec<f64> {
        self.lengthscales(d).iter().map(|l| 1.0 / (l * l)).collect()
    }

    pub fn n_params(&self) -> usize {
        self.log_lengthscales.len() + 2
    }

    pub fn param(&self, index: usize) -> Result<Param> {
        let nl = self.log_lengthscales.len();
        match index {
            0 => Ok(Param::LogSigma2),
            i if i <= nl => Ok(Param::LogLengthscale(i - 1)),
            i if i == nl + 1 => Ok(Param::LogNoise),
            i => Err(Error::UnknownParameter(i)),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.push(self.log_sigma2);
        v.extend_from_slice(&self.log_lengthscales);
        v.push(self.log_noise);
        v
    }

    pub fn with_params(&self, theta: &[f64]) -> Result<Self> {
        check_dim(self.n_params(), theta.len())?;
        let nl = self.log_lengthscales.len();
        Ok(Self {
            log_sigma2: theta[0],
            log_lengthscales: theta[1..=nl].to_vec(),
            log_noise: theta[nl + 1],
            mode: self.mode,
        })
    }
}

/// Training inputs (one row per point) and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>) -> Result<Self> {
        check_dim(x.rows(), y.len())?;
        if x.rows() == 0 {
            return Err(Error::InvalidData("no data points".into()));
        }
        if !x.as_slice().iter().chain(&y).all(|v| v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry".into()));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn is_binary(&self) -> bool {
        self.y.iter().all(|&v| v == 1.0 || v == -1.0)
    }

    pub fn require_binary(&self) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(Error::InvalidData("classification labels must be ±1".into()))
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

#[inline]
fn scaled_sq_dist(a: &[f64], b: &[f64], inv_l2: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_l2)
        .map(|((x, y), w)| (x - y) * (x - y) * w)
        .sum()
}

/// `σ² exp(-½ Σ_r (x_i - x_j)_r² / l_r²)`
pub fn kernel_eval(spec: &KernelSpec, xi: &[f64], xj: &[f64]) -> Result<f64> {
    check_dim(xi.len(), xj.len())?;
    let inv_l2 = spec.inv_sq_lengthscales(xi.len());
    Ok(spec.sigma2() * (-0.5 * scaled_sq_dist(xi, xj, &inv_l2)).exp())
}

/// Gram matrix `K`, or `K_y = K + λI` when `with_noise`.
pub fn gram(spec: &KernelSpec, x: &Matrix, with_noise: bool) -> DenseSymMatrix {
    let n = x.rows();
    let inv_l2 = spec.inv_sq_lengthscales(x.cols());
    let s2 = spec.sigma2();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| s2 * (-0.5 * scaled_sq_dist(x.row(i), x.row(j), &inv_l2)).exp())
                .collect()
        })
        .collect();
    let mut k = DenseSymMatrix::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            k.set(i, i + off, v);
        }
    }
    if with_noise {
        k.add_diagonal(spec.noise());
    }
    k
}

/// Cross-covariance: entry `(i, j)` is `k(a_i, b_j)`.
pub fn gram_cross(spec: &KernelSpec, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_dim(a.cols(), b.cols())?;
    let inv_l2 = spec.inv_sq_lengthscales(a.cols());
    let s2 = spec.sigma2();
    let rows: Vec<f64> = (0..a.rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let inv_l2 = &inv_l2;
            (0..b.rows()).map(move |j| s2 * (-0.5 * scaled_sq_dist(a.row(i), b.row(j), inv_l2)).exp())
        })
        .collect();
    Matrix::from_row_major(a.rows(), b.rows(), rows)
}

/// `k(x*, x_i)` for every training row.
pub fn kernel_vector(spec: &KernelSpec, x: &Matrix, x_star: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.cols(), x_star.len())?;
    let inv_l2 = spec.inv_sq_lengthscales(x.cols());
    let s2 = spec.sigma2();
    Ok((0..x.rows())
        .map(|i| s2 * (-0.5 * scaled_sq_dist(x.row(i), x_star, &inv_l2)).exp())
        .collect())
}

/// `∂K_y/∂θ` for log-parameter `param_index`.
pub fn gram_derivative(spec: &KernelSpec, x: &Matrix, param_index: usize) -> Result<DenseSymMatrix> {
    let param = spec.param(param_index)?;
    let n = x.rows();
    Ok(match param {
        Param::LogSigma2 => gram(spec, x, false),
        Param::LogNoise => {
            let mut m = DenseSymMatrix::zeros(n);
            m.add_diagonal(spec.noise());
            m
        }
        Param::LogLengthscale(r) => {
            let k = gram(spec, x, false);
            let d = x.cols();
            let inv_l2 = spec.inv_sq_lengthscales(d);
            DenseSymMatrix::from_upper(n, |i, j| {
                let (a, b) = (x.row(i), x.row(j));
                let w = match spec.mode {
                    KernelMode::Iso => scaled_sq_dist(a, b, &inv_l2),
                    KernelMode::Ard => (a[r] - b[r]) * (a[r] - b[r]) * inv_l2[r],
                };
                k.get(i, j) * w
            })
        }
    })
}

/// All derivatives `∂K_y/∂θ_i`, in parameter order.
pub fn gram_derivatives(spec: &KernelSpec, x: &Matrix) -> Vec<DenseSymMatrix> {
    (0..spec.n_params())
        .map(|i| gram_derivative(spec, x, i).expect("index in range"))
        .collect()
}

/// `(∂K_y/∂θ_p) v` for every vector in `vs` and every log-parameter `p`,
/// without forming the derivative matrices. Indexed `[vector][param][row]`.
pub fn derivative_products(spec: &KernelSpec, x: &Matrix, vs: &[&[f64]]) -> Result<Vec<Vec<Vec<f64>>>> {
    let n = x.rows();
    for v in vs {
        check_dim(n, v.len())?;
    }
    let d = x.cols();
    let inv_l2 = spec.inv_sq_lengthscales(d);
    let s2 = spec.sigma2();
    let lambda = spec.noise();
    let nl = spec.log_lengthscales.len();
    let np = spec.n_params();
    let nv = vs.len();

    // rows[i][v * np + p]
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut acc = vec![0.0; nv * np];
            let mut w = vec![0.0; d];
            for j in 0..n {
                let xj = x.row(j);
                let mut s = 0.0;
                for r in 0..d {
                    let diff = xi[r] - xj[r];
                    w[r] = diff * diff * inv_l2[r];
                    s += w[r];
                }
                let k = s2 * (-0.5 * s).exp();
                for (a, v) in vs.iter().enumerate() {
                    let kv = k * v[j];
                    let out = &mut acc[a * np..(a + 1) * np];
                    out[0] += kv;
                    match spec.mode {
                        KernelMode::Iso => out[1] += kv * s,
                        KernelMode::Ard => {
                            for r in 0..nl {
                                out[1 + r] += kv * w[r];
                            }
                        }
                    }
                }
            }
            for (a, v) in vs.iter().enumerate() {
                acc[a * np + np - 1] = lambda * v[i];
            }
            acc
        })
        .collect();

    Ok((0..nv)
        .map(|a| (0..np).map(|p| rows.iter().map(|row| row[a * np + p]).collect()).collect())
        .collect())
}

/// Matrix-free `K` (or `K_y`): rows are evaluated on every product, so no
/// `n x n` storage is needed.
#[derive(Clone, Debug)]
pub struct KernelOperator<'a> {
    spec: KernelSpec,
    x: &'a Matrix,
    inv_l2: Vec<f64>,
    noise: f64,
}

impl<'a> KernelOperator<'a> {
    pub fn new(spec: &KernelSpec, x: &'a Matrix, with_noise: bool) -> Self {
        Self {
            inv_l2: spec.inv_sq_lengthscales(x.cols()),
            noise: if with_noise { spec.noise() } else { 0.0 },
            spec: spec.clone(),
            x,
        }
    }
}

impl LinearOperator for KernelOperator<'_> {
    fn dim(&self) -> usize {
        self.x.rows()
    }

    fn apply(&self, v: &[f64], y: &mut [f64]) {
        let s2 = self.spec.sigma2();
        let n = self.x.rows();
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let xi = self.x.row(i);
            let row: Vec<f64> = (0..n)
                .map(|j| s2 * (-0.5 * scaled_sq_dist(xi, self.x.row(j), &self.inv_l2)).exp())
                .collect();
            *yi = dot(&row, v) + self.noise * v[i];
        });
    }
}
