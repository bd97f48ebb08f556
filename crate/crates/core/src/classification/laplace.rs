//! Laplace approximation for probit GP classification.
//!
//! Every expensive step is a solve with `B = I + W^{1/2} K W^{1/2}`, done
//! either by (P)CG or, on the reference path, by a dense Cholesky factor.
//! The kernel here is the noise-free `K`; the noise hyperparameter has no
//! effect and gets a zero gradient.

use rayon::prelude::*;

use super::probit::{cdf, ProbitLikelihood};
use crate::error::{check_dim, Error, Result};
use crate::kernels::{derivative_products, gram, gram_derivative, kernel_vector, Dataset, KernelSpec, Param};
use crate::linalg::{dot, CholeskyFactor, DenseSymMatrix, Matrix, ScaledShifted};
use crate::precond::{KernelSystem, PcgSetup, Preconditioner};
use crate::regression::RegressionGradient;
use crate::solvers::{pcg_solve, SolveReport};
use crate::trace::ProbeSet;

/// Smallest value allowed on the diagonal of `W`.
pub const W_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    /// Stop once `‖f_new - f‖_∞` drops below this.
    pub tol: f64,
    pub max_steps: usize,
    /// Step halvings allowed when a step lowers `Ψ`.
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_steps: 100,
            max_halvings: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceState {
    pub f_hat: Vec<f64>,
    /// `K⁻¹ f̂`, carried along the iteration.
    pub a: Vec<f64>,
    /// Diagonal of `W` at `f̂`, floored at [`W_FLOOR`].
    pub w: Vec<f64>,
    /// `W f̂ + ∇log p(y | f̂)`.
    pub b: Vec<f64>,
    pub newton_iters: usize,
    pub converged: bool,
    /// `false` if any inner solve hit its cap.
    pub solver_converged: bool,
    pub matvecs: f64,
    /// `Ψ` after each accepted step, starting at `f = 0`.
    pub psi_trace: Vec<f64>,
}

impl LaplaceState {
    pub fn sqrt_w(&self) -> Vec<f64> {
        self.w.iter().map(|w| w.sqrt()).collect()
    }
}

/// `(∇log p, W, ∂³log p)` at `f`.
fn local_terms(y: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut d1 = Vec::with_capacity(y.len());
    let mut w = Vec::with_capacity(y.len());
    let mut d3 = Vec::with_capacity(y.len());
    for (&yi, &fi) in y.iter().zip(f) {
        let (_, g, h, t) = ProbitLikelihood::derivatives(yi, fi);
        d1.push(g);
        w.push((-h).max(W_FLOOR));
        d3.push(t);
    }
    (d1, w, d3)
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn psi(y: &[f64], f: &[f64], a: &[f64]) -> f64 {
    ProbitLikelihood::log_lik(y, f) - 0.5 * dot(a, f)
}

/// Newton iteration `f_new = K (b - W^{1/2} B⁻¹ W^{1/2} K b)` from `f = 0`.
/// `solve_b(sqrt_w, rhs)` returns `(B⁻¹ rhs, matvecs, converged)`.
fn newton<F>(k: &DenseSymMatrix, y: &[f64], cfg: &NewtonConfig, mut solve_b: F) -> Result<LaplaceState>
where
    F: FnMut(&[f64], &[f64]) -> Result<(Vec<f64>, f64, bool)>,
{
    let n = y.len();
    let mut f = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut current = psi(y, &f, &a);
    let mut psi_trace = vec![current];
    let mut matvecs = 0.0;
    let mut solver_converged = true;
    let mut converged = false;
    let mut steps = 0;

    while steps < cfg.max_steps {
        steps += 1;
        let (d1, w, _) = local_terms(y, &f);
        let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let b: Vec<f64> = w.iter().zip(&f).zip(&d1).map(|((wi, fi), gi)| wi * fi + gi).collect();
        let kb = k.matvec(&b);
        let (x, mv, ok) = solve_b(&sw, &hadamard(&sw, &kb))?;
        matvecs += mv + 2.0;
        solver_converged &= ok;
        let a_full: Vec<f64> = b.iter().zip(&sw).zip(&x).map(|((bi, si), xi)| bi - si * xi).collect();
        let f_full = k.matvec(&a_full);

        let mut t = 1.0;
        let (mut f_try, mut a_try) = (f_full.clone(), a_full.clone());
        let mut psi_try = psi(y, &f_try, &a_try);
        let slack = 1e-10 * (1.0 + current.abs());
        let mut halvings = 0;
        while !(psi_try >= current - slack) && halvings < cfg.max_halvings {
            t *= 0.5;
            halvings += 1;
            for i in 0..n {
                f_try[i] = f[i] + t * (f_full[i] - f[i]);
                a_try[i] = a[i] + t * (a_full[i] - a[i]);
            }
            psi_try = psi(y, &f_try, &a_try);
        }

        let delta = f_try.iter().zip(&f).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        f = f_try;
        a = a_try;
        current = psi_try;
        psi_trace.push(current);
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }

    let (d1, w, _) = local_terms(y, &f);
    let b = w.iter().zip(&f).zip(&d1).map(|((wi, fi), gi)| wi * fi + gi).collect();
    Ok(LaplaceState {
        f_hat: f,
        a,
        w,
        b,
        newton_iters: steps,
        converged,
        solver_converged,
        matvecs,
        psi_trace,
    })
}

fn laplace_operator<'k>(k: &'k DenseSymMatrix, sw: &[f64]) -> ScaledShifted<&'k DenseSymMatrix> {
    ScaledShifted::new(k, sw.to_vec(), 1.0)
}

/// The Laplace mode with `B`-solves by (P)CG. The preconditioner is rebuilt
/// for the current `W` at every Newton step.
pub fn laplace_fit(spec: &KernelSpec, data: &Dataset, setup: &PcgSetup, newton_cfg: &NewtonConfig, seed: u64) -> Result<LaplaceState> {
    spec.validate(data.d())?;
    data.require_binary()?;
    let k = gram(spec, &data.x, false);
    let cfg = setup.solve_for(data.n());
    newton(&k, &data.y, newton_cfg, |sw, rhs| {
        let system = KernelSystem::laplace(spec, &data.x, sw).with_gram(&k);
        let p = setup.build(&system, seed)?;
        let rep = pcg_solve(&laplace_operator(&k, sw), &p, rhs, &cfg)?;
        Ok((rep.x, rep.equivalent_matvecs + p.setup_cost(), rep.converged))
    })
}

fn dense_b(k: &DenseSymMatrix, sw: &[f64]) -> DenseSymMatrix {
    let mut bm = DenseSymMatrix::from_upper(k.n(), |i, j| sw[i] * k.get(i, j) * sw[j]);
    bm.add_diagonal(1.0);
    bm
}

/// The Laplace mode with dense Cholesky solves; the reference path.
pub fn laplace_fit_exact(spec: &KernelSpec, data: &Dataset, newton_cfg: &NewtonConfig) -> Result<LaplaceState> {
    spec.validate(data.d())?;
    data.require_binary()?;
    let k = gram(spec, &data.x, false);
    newton(&k, &data.y, newton_cfg, |sw, rhs| {
        let chol = CholeskyFactor::factor(&dense_b(&k, sw))?;
        Ok((chol.solve(rhs)?, 0.0, true))
    })
}

/// `-½ log|B| - ½ f̂ᵀa + log p(y | f̂)`, with `log|B|` from a dense factor.
pub fn approx_lml(spec: &KernelSpec, data: &Dataset, state: &LaplaceState) -> Result<f64> {
    check_dim(data.n(), state.f_hat.len())?;
    let k = gram(spec, &data.x, false);
    let chol = CholeskyFactor::factor(&dense_b(&k, &state.sqrt_w()))?;
    Ok(-0.5 * chol.log_det() - 0.5 * dot(&state.f_hat, &state.a) + ProbitLikelihood::log_lik(&data.y, &state.f_hat))
}

fn is_noise(spec: &KernelSpec, p: usize) -> bool {
    matches!(spec.param(p), Ok(Param::LogNoise))
}

/// Dense gradient of [`approx_lml`], including the term from the dependence
/// of `f̂` on the hyperparameters:
/// `g_i = -½ Tr(B⁻¹ W^{1/2} K_i W^{1/2}) + ½ aᵀ K_i a + ½ Σ_j D_jj d_j [(I + KW)⁻¹ K_i ∇log p]_j`
/// with `K_i = ∂K/∂θ_i`, `D = diag((K⁻¹ + W)⁻¹)` and `d = ∂³log p`.
pub fn grad_exact_laplace(spec: &KernelSpec, data: &Dataset, state: &LaplaceState) -> Result<RegressionGradient> {
    let n = data.n();
    check_dim(n, state.f_hat.len())?;
    let k = gram(spec, &data.x, false);
    let sw = state.sqrt_w();
    let chol = CholeskyFactor::factor(&dense_b(&k, &sw))?;
    let binv = chol.inverse();
    let (d1, _, d3) = local_terms(&data.y, &state.f_hat);

    // diag(K - K W^{1/2} B⁻¹ W^{1/2} K)
    let mut swk = k.as_matrix().clone();
    swk.scale_rows(&sw);
    let t = binv.as_matrix().matmul(&swk);
    let diag: Vec<f64> = (0..n)
        .map(|j| k.get(j, j) - (0..n).map(|a| swk.get(a, j) * t.get(a, j)).sum::<f64>())
        .collect();
    let weights: Vec<f64> = diag.iter().zip(&d3).map(|(dj, tj)| dj * tj).collect();

    let g = (0..spec.n_params())
        .map(|p| {
            if is_noise(spec, p) {
                return Ok(0.0);
            }
            let dk = gram_derivative(spec, &data.x, p)?;
            let trace: f64 = (0..n).map(|i| sw[i] * (0..n).map(|j| binv.get(i, j) * dk.get(i, j) * sw[j]).sum::<f64>()).sum();
            let explicit = 0.5 * dot(&state.a, &dk.matvec(&state.a));
            let v = dk.matvec(&d1);
            let inner = chol.solve(&hadamard(&sw, &v))?;
            let s3: Vec<f64> = v
                .iter()
                .zip(&k.matvec(&hadamard(&sw, &inner)))
                .map(|(vi, ci)| vi - ci)
                .collect();
            Ok(-0.5 * trace + explicit + 0.5 * dot(&weights, &s3))
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

/// Stochastic gradient of [`approx_lml`] from `2 N_r + 1` solves with `B`.
///
/// `trace_probes` estimate `Tr(B⁻¹ ∂B/∂θ_i)`; `implicit_probes` estimate
/// `ũ_j = ∂log|B|/∂f̂_j = -d_j [(K⁻¹ + W)⁻¹]_jj`. The implicit term
/// `-½ ũᵀ (I + KW)⁻¹ K_i ∇log p` is evaluated as `-½ zᵀ K_i ∇log p` with
/// `z = (I + WK)⁻¹ ũ`, one solve shared by every parameter.
pub fn grad_stochastic_laplace(
    spec: &KernelSpec,
    data: &Dataset,
    state: &LaplaceState,
    trace_probes: &ProbeSet,
    implicit_probes: &ProbeSet,
    setup: &PcgSetup,
    seed: u64,
) -> Result<RegressionGradient> {
    let n = data.n();
    check_dim(n, state.f_hat.len())?;
    check_dim(n, trace_probes.dim())?;
    check_dim(n, implicit_probes.dim())?;
    spec.validate(data.d())?;
    let k = gram(spec, &data.x, false);
    let sw = state.sqrt_w();
    let system = KernelSystem::laplace(spec, &data.x, &sw).with_gram(&k);
    let p = setup.build(&system, seed)?;
    let op = laplace_operator(&k, &sw);
    let cfg = setup.solve_for(n);
    let (d1, _, d3) = local_terms(&data.y, &state.f_hat);

    let kr: Vec<Vec<f64>> = implicit_probes.probes().par_iter().map(|r| k.matvec(r)).collect();
    let rhs: Vec<Vec<f64>> = trace_probes
        .probes()
        .iter()
        .cloned()
        .chain(kr.iter().map(|q| hadamard(&sw, q)))
        .collect();
    let mut reports: Vec<SolveReport> = rhs.par_iter().map(|v| pcg_solve(&op, &p, v, &cfg)).collect::<Result<_>>()?;
    let nt = trace_probes.len();

    // ũ from (K⁻¹ + W)⁻¹ r = K (r - W^{1/2} B⁻¹ W^{1/2} K r).
    let mut u = vec![0.0; n];
    for (r, rep) in implicit_probes.probes().iter().zip(&reports[nt..]) {
        let inner: Vec<f64> = r.iter().zip(&sw).zip(&rep.x).map(|((ri, si), xi)| ri - si * xi).collect();
        let mr = k.matvec(&inner);
        for j in 0..n {
            u[j] -= d3[j] * r[j] * mr[j];
        }
    }
    let ni = implicit_probes.len() as f64;
    u.iter_mut().for_each(|v| *v /= ni);

    let ku = k.matvec(&u);
    let zrep = pcg_solve(&op, &p, &hadamard(&sw, &ku), &cfg)?;
    let z: Vec<f64> = u.iter().zip(&sw).zip(&zrep.x).map(|((ui, si), xi)| ui - si * xi).collect();
    reports.push(zrep);

    let scaled_probes: Vec<Vec<f64>> = trace_probes.probes().iter().map(|r| hadamard(&sw, r)).collect();
    let mut vs: Vec<&[f64]> = vec![&state.a, &d1];
    vs.extend(scaled_probes.iter().map(Vec::as_slice));
    let prods = derivative_products(spec, &data.x, &vs)?;

    let g = (0..spec.n_params())
        .map(|i| {
            if is_noise(spec, i) {
                return 0.0;
            }
            let trace: f64 = reports[..nt]
                .iter()
                .zip(&prods[2..])
                .map(|(rep, pr)| sw.iter().zip(&rep.x).zip(&pr[i]).map(|((s, x), q)| s * x * q).sum::<f64>())
                .sum();
            -0.5 * trace / nt as f64 + 0.5 * dot(&state.a, &prods[0][i]) - 0.5 * dot(&z, &prods[1][i])
        })
        .collect();

    let kmv = (2 * implicit_probes.len() + 1) as f64;
    let matvecs = p.setup_cost() + reports.iter().map(|r| r.equivalent_matvecs).sum::<f64>() + kmv + vs.len() as f64;
    Ok(RegressionGradient {
        g,
        is_stochastic: true,
        solves_performed: reports.len(),
        matvecs,
        converged: reports.iter().all(|r| r.converged),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPredictionBatch {
    /// `p(y* = +1)` per test row.
    pub probabilities: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub matvecs: f64,
    pub converged: bool,
}

fn probability(m: f64, s2: f64) -> f64 {
    cdf(m / (1.0 + s2.max(0.0)).sqrt())
}

/// `Φ(m*/√(1 + s*²))` with `m* = k*ᵀa` and
/// `s*² = k** - k*ᵀ W^{1/2} B⁻¹ W^{1/2} k*`, one solve per test row.
pub fn predict_class(
    spec: &KernelSpec,
    data: &Dataset,
    state: &LaplaceState,
    x_star: &Matrix,
    setup: &PcgSetup,
    seed: u64,
) -> Result<ClassPredictionBatch> {
    check_dim(data.d(), x_star.cols())?;
    check_dim(data.n(), state.f_hat.len())?;
    let k = gram(spec, &data.x, false);
    let sw = state.sqrt_w();
    let system = KernelSystem::laplace(spec, &data.x, &sw).with_gram(&k);
    let p = setup.build(&system, seed)?;
    let op = laplace_operator(&k, &sw);
    let cfg = setup.solve_for(data.n());
    let rows = (0..x_star.rows())
        .into_par_iter()
        .map(|t| {
            let ks = kernel_vector(spec, &data.x, x_star.row(t))?;
            let v = hadamard(&sw, &ks);
            let rep = pcg_solve(&op, &p, &v, &cfg)?;
            let m = dot(&ks, &state.a);
            let s2 = (spec.sigma2() - dot(&v, &rep.x)).max(0.0);
            Ok((m, s2, rep.equivalent_matvecs, rep.converged))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = ClassPredictionBatch {
        probabilities: Vec::with_capacity(rows.len()),
        means: Vec::with_capacity(rows.len()),
        variances: Vec::with_capacity(rows.len()),
        matvecs: p.setup_cost(),
        converged: true,
    };
    for (m, s2, mv, ok) in rows {
        out.probabilities.push(probability(m, s2));
        out.means.push(m);
        out.variances.push(s2);
        out.matvecs += mv;
        out.converged &= ok;
    }
    Ok(out)
}

/// Dense Cholesky reference for [`predict_class`].
pub fn predict_class_exact(spec: &KernelSpec, data: &Dataset, state: &LaplaceState, x_star: &Matrix) -> Result<ClassPredictionBatch> {
    check_dim(data.d(), x_star.cols())?;
    let k = gram(spec, &data.x, false);
    let sw = state.sqrt_w();
    let chol = CholeskyFactor::factor(&dense_b(&k, &sw))?;
    let mut out = ClassPredictionBatch {
        probabilities: Vec::new(),
        means: Vec::new(),
        variances: Vec::new(),
        matvecs: 0.0,
        converged: true,
    };
    for t in 0..x_star.rows() {
        let ks = kernel_vector(spec, &data.x, x_star.row(t))?;
        let half = chol.solve_lower(&hadamard(&sw, &ks))?;
        let m = dot(&ks, &state.a);
        let s2 = (spec.sigma2() - dot(&half, &half)).max(0.0);
        out.probabilities.push(probability(m, s2));
        out.means.push(m);
        out.variances.push(s2);
    }
    Ok(out)
}

/// Fraction of test points misclassified; `p ≥ 0.5` predicts `+1`.
pub fn error_rate(probabilities: &[f64], y_star: &[f64]) -> Result<f64> {
    if probabilities.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    check_dim(probabilities.len(), y_star.len())?;
    let wrong = probabilities
        .iter()
        .zip(y_star)
        .filter(|(&p, &y)| (p >= 0.5) != (y > 0.0))
        .count();
    Ok(wrong as f64 / probabilities.len() as f64)
}

/// `-Σ [1{y=+1} log p + 1{y=-1} log(1 - p)]`.
pub fn class_nll(probabilities: &[f64], y_star: &[f64]) -> Result<f64> {
    if probabilities.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    check_dim(probabilities.len(), y_star.len())?;
    Ok(probabilities
        .iter()
        .zip(y_star)
        .map(|(&p, &y)| {
            let q = if y > 0.0 { p } else { 1.0 - p };
            -q.max(f64::MIN_POSITIVE).ln()
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_rate_ties_predict_positive() {
        assert_eq!(error_rate(&[0.5, 0.5], &[1.0, -1.0]).unwrap(), 0.5);
        assert_eq!(error_rate(&[0.9, 0.1], &[1.0, -1.0]).unwrap(), 0.0);
        assert_eq!(error_rate(&[0.1, 0.9], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(error_rate(&[], &[]), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn nll_of_confident_correct_is_small() {
        let nll = class_nll(&[0.999, 0.001], &[1.0, -1.0]).unwrap();
        assert!((nll + 2.0 * 0.999f64.ln()).abs() < 1e-12);
    }
}
