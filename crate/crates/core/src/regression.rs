//! GP regression: log marginal likelihood, exact and stochastic gradients,
//! and predictions, either through a dense Cholesky factor or through
//! (P)CG solves with `K_y`.

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::kernels::{derivative_products, gram, gram_derivative, kernel_vector, Dataset, KernelSpec};
use crate::linalg::{dot, CholeskyFactor, DenseSymMatrix, Matrix, ScaledShifted};
use crate::precond::{KernelSystem, PcgSetup, Preconditioner};
use crate::solvers::{pcg_solve, SolveReport};
use crate::trace::ProbeSet;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionGradient {
    /// One entry per log-parameter, in [`KernelSpec::to_vec`] order.
    pub g: Vec<f64>,
    pub is_stochastic: bool,
    pub solves_performed: usize,
    /// Work in dense matvec units (zero for the Cholesky path).
    pub matvecs: f64,
    /// `false` if any solve hit the iteration cap.
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    pub predictive_noise_included: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBatch {
    pub predictions: Vec<Prediction>,
    /// Variances that came out negative and were clamped to zero.
    pub clamped: usize,
    pub matvecs: f64,
    pub converged: bool,
}

fn factor_ky(spec: &KernelSpec, data: &Dataset) -> Result<CholeskyFactor> {
    spec.validate(data.d())?;
    CholeskyFactor::factor(&gram(spec, &data.x, true))
}

/// `-½ log|K_y| - ½ yᵀK_y⁻¹y - (n/2) log 2π`.
pub fn lml_exact(spec: &KernelSpec, data: &Dataset) -> Result<f64> {
    let chol = factor_ky(spec, data)?;
    let alpha = chol.solve(&data.y)?;
    Ok(-0.5 * chol.log_det() - 0.5 * dot(&data.y, &alpha) - 0.5 * data.n() as f64 * LN_2PI)
}

/// The same quantity with the quadratic term from a (P)CG solve. The log
/// determinant still comes from a dense factorization.
pub fn lml_iterative(spec: &KernelSpec, data: &Dataset, setup: &PcgSetup, seed: u64) -> Result<(f64, SolveReport)> {
    let chol = factor_ky(spec, data)?;
    let k = gram(spec, &data.x, false);
    let rep = solve_ky(spec, data, &k, setup, seed, &data.y)?;
    let lml = -0.5 * chol.log_det() - 0.5 * dot(&data.y, &rep.x) - 0.5 * data.n() as f64 * LN_2PI;
    Ok((lml, rep))
}

fn solve_ky(spec: &KernelSpec, data: &Dataset, k: &DenseSymMatrix, setup: &PcgSetup, seed: u64, v: &[f64]) -> Result<SolveReport> {
    let system = KernelSystem::regression(spec, &data.x).with_gram(k);
    let p = setup.build(&system, seed)?;
    let op = ScaledShifted::shifted(k, spec.noise());
    pcg_solve(&op, &p, v, &setup.solve_for(data.n()))
}

/// `g_i = -½ Tr(K_y⁻¹ ∂K_y/∂θ_i) + ½ αᵀ (∂K_y/∂θ_i) α` with `α = K_y⁻¹ y`.
pub fn grad_exact(spec: &KernelSpec, data: &Dataset) -> Result<RegressionGradient> {
    let chol = factor_ky(spec, data)?;
    let alpha = chol.solve(&data.y)?;
    let kinv = chol.inverse();
    let n = data.n();
    let g = (0..spec.n_params())
        .map(|p| {
            let dk = gram_derivative(spec, &data.x, p)?;
            let trace: f64 = (0..n).map(|i| dot(kinv.row(i), dk.row(i))).sum();
            Ok(-0.5 * trace + 0.5 * dot(&alpha, &dk.matvec(&alpha)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegressionGradient {
        g,
        is_stochastic: false,
        solves_performed: 0,
        matvecs: 0.0,
        converged: true,
    })
}

/// Unbiased gradient estimate from `N_r + 1` solves with `K_y`:
/// `g̃_i = -(1/2N_r) Σ_k x_kᵀ (∂K_y/∂θ_i) r_k + ½ αᵀ (∂K_y/∂θ_i) α`,
/// where `K_y x_k = r_k`. The preconditioner is rebuilt from `seed` on every call.
pub fn grad_stochastic(
    spec: &KernelSpec,
    data: &Dataset,
    setup: &PcgSetup,
    probes: &ProbeSet,
    seed: u64,
) -> Result<RegressionGradient> {
    spec.validate(data.d())?;
    let n = data.n();
    check_dim(n, probes.dim())?;
    let k = gram(spec, &data.x, false);
    let system = KernelSystem::regression(spec, &data.x).with_gram(&k);
    let p = setup.build(&system, seed)?;
    let op = ScaledShifted::shifted(&k, spec.noise());
    let cfg = setup.solve_for(n);

    let rhs: Vec<&[f64]> = std::iter::once(data.y.as_slice())
        .chain(probes.probes().iter().map(Vec::as_slice))
        .collect();
    let reports = rhs
        .par_iter()
        .map(|v| pcg_solve(&op, &p, v, &cfg))
        .collect::<Result<Vec<_>>>()?;

    // Products with the derivative matrices: α for the quadratic term, r_k for the trace.
    let alpha = &reports[0].x;
    let mut vs: Vec<&[f64]> = vec![alpha.as_slice()];
    vs.extend(probes.probes().iter().map(Vec::as_slice));
    let prods = derivative_products(spec, &data.x, &vs)?;

    let np = spec.n_params();
    let nr = probes.len() as f64;
    let g = (0..np)
        .map(|i| {
            let quad = 0.5 * dot(alpha, &prods[0][i]);
            let trace: f64 = reports[1..].iter().zip(&prods[1..]).map(|(rep, pr)| dot(&rep.x, &pr[i])).sum();
            quad - 0.5 * trace / nr
        })
        .collect();

    let matvecs = p.setup_cost() + reports.iter().map(|r| r.equivalent_matvecs).sum::<f64>() + vs.len() as f64;
    Ok(RegressionGradient {
        g,
        is_stochastic: true,
        solves_performed: reports.len(),
        matvecs,
        converged: reports.iter().all(|r| r.converged),
    })
}

fn finish(mean: f64, var: f64, noise: Option<f64>, clamped: &mut usize) -> Prediction {
    let var = if var < 0.0 {
        *clamped += 1;
        0.0
    } else {
        var
    };
    Prediction {
        mean,
        variance: var + noise.unwrap_or(0.0),
        predictive_noise_included: noise.is_some(),
    }
}

/// Predictive mean `k*ᵀ K_y⁻¹ y` and variance `k** - k*ᵀ K_y⁻¹ k*` (plus `λ`
/// when `include_noise`), one solve per test row.
pub fn predict(
    spec: &KernelSpec,
    data: &Dataset,
    x_star: &Matrix,
    setup: &PcgSetup,
    seed: u64,
    include_noise: bool,
) -> Result<PredictionBatch> {
    spec.validate(data.d())?;
    check_dim(data.d(), x_star.cols())?;
    let n = data.n();
    let k = gram(spec, &data.x, false);
    let system = KernelSystem::regression(spec, &data.x).with_gram(&k);
    let p = setup.build(&system, seed)?;
    let op = ScaledShifted::shifted(&k, spec.noise());
    let cfg = setup.solve_for(n);

    let alpha = pcg_solve(&op, &p, &data.y, &cfg)?;
    let per_point = (0..x_star.rows())
        .into_par_iter()
        .map(|t| {
            let ks = kernel_vector(spec, &data.x, x_star.row(t))?;
            let rep = pcg_solve(&op, &p, &ks, &cfg)?;
            Ok((dot(&ks, &alpha.x), spec.sigma2() - dot(&ks, &rep.x), rep))
        })
        .collect::<Result<Vec<_>>>()?;

    let noise = include_noise.then(|| spec.noise());
    let mut clamped = 0;
    let mut matvecs = p.setup_cost() + alpha.equivalent_matvecs;
    let mut converged = alpha.converged;
    let predictions = per_point
        .into_iter()
        .map(|(m, v, rep)| {
            matvecs += rep.equivalent_matvecs;
            converged &= rep.converged;
            finish(m, v, noise, &mut clamped)
        })
        .collect();
    Ok(PredictionBatch {
        predictions,
        clamped,
        matvecs,
        converged,
    })
}

/// Cholesky reference for [`predict`].
pub fn predict_exact(spec: &KernelSpec, data: &Dataset, x_star: &Matrix, include_noise: bool) -> Result<PredictionBatch> {
    check_dim(data.d(), x_star.cols())?;
    let chol = factor_ky(spec, data)?;
    let alpha = chol.solve(&data.y)?;
    let noise = include_noise.then(|| spec.noise());
    let mut clamped = 0;
    let mut predictions = Vec::with_capacity(x_star.rows());
    for t in 0..x_star.rows() {
        let ks = kernel_vector(spec, &data.x, x_star.row(t))?;
        let half = chol.solve_lower(&ks)?;
        predictions.push(finish(dot(&ks, &alpha), spec.sigma2() - dot(&half, &half), noise, &mut clamped));
    }
    Ok(PredictionBatch {
        predictions,
        clamped,
        matvecs: 0.0,
        converged: true,
    })
}

/// `(RMSE, -Σ log N(y*_i | m*_i, s*²_i))` with the variances as given.
pub fn test_metrics(predictions: &[Prediction], y_star: &[f64]) -> Result<(f64, f64)> {
    if predictions.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    check_dim(predictions.len(), y_star.len())?;
    let mut se = 0.0;
    let mut nll = 0.0;
    for (p, &y) in predictions.iter().zip(y_star) {
        let e = y - p.mean;
        se += e * e;
        let v = p.variance.max(f64::MIN_POSITIVE);
        nll += 0.5 * (LN_2PI + v.ln() + e * e / v);
    }
    Ok(((se / predictions.len() as f64).sqrt(), nll))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(y: f64) -> Dataset {
        Dataset::new(Matrix::zeros(1, 1), vec![y]).unwrap()
    }

    #[test]
    fn scalar_lml() {
        let spec = KernelSpec::iso(0.6, 1.0, 0.4);
        let lml = lml_exact(&spec, &single(0.0)).unwrap();
        assert!((lml + 0.5 * LN_2PI).abs() < 1e-12);
        let (v, y) = (0.6 + 0.4, 1.7);
        let lml = lml_exact(&spec, &single(y)).unwrap();
        assert!((lml - (-0.5 * f64::ln(v) - y * y / (2.0 * v) - 0.5 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn scalar_sigma_gradient() {
        let (s2, lam, y) = (1.5, 0.3, 0.8);
        let spec = KernelSpec::iso(s2, 1.0, lam);
        let g = grad_exact(&spec, &single(y)).unwrap().g;
        let v = s2 + lam;
        let expect = -0.5 * s2 / v + y * y * s2 / (2.0 * v * v);
        assert!((g[0] - expect).abs() < 1e-12);
        // A single point has no dependence on the lengthscale.
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn metrics_scalar_cases() {
        let p = Prediction {
            mean: 0.0,
            variance: 1.0,
            predictive_noise_included: true,
        };
        let (rmse, nll) = test_metrics(&[p], &[0.0]).unwrap();
        assert_eq!(rmse, 0.0);
        assert!((nll - 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!(matches!(test_metrics(&[], &[]), Err(Error::EmptyTestSet)));
    }
}
