use kpcg::kernels::{Dataset, KernelSpec};
use kpcg::linalg::{CholeskyFactor, Matrix};
use kpcg::precond::{PcgSetup, PreconditionerKind};
use kpcg::regression::*;
use kpcg::solvers::{cg_solve, SolveConfig};
use kpcg::trace::sample_probes;
use kpcg::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = (0..n)
        .map(|i| x.row(i).iter().map(|v| v.sin()).sum::<f64>() + rng.random_range(-0.2..0.2))
        .collect();
    Dataset::new(x, y).unwrap()
}

fn tight(n: usize) -> SolveConfig {
    SolveConfig::new(n as f64 * 1e-20, 100_000).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn exact_gradient_matches_finite_differences() {
    for restart in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + restart);
        let spec = KernelSpec::ard(
            rng.random_range(0.5..2.0),
            &[rng.random_range(0.4..2.0), rng.random_range(0.4..2.0)],
            rng.random_range(0.05..0.5),
        );
        let data = toy(15, 2, restart);
        let g = grad_exact(&spec, &data).unwrap();
        assert!(!g.is_stochastic);
        let theta = spec.to_vec();
        assert_eq!(g.g.len(), theta.len());
        let h = 1e-5;
        let scale = g.g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (lml_exact(&spec.with_params(&tp).unwrap(), &data).unwrap()
                - lml_exact(&spec.with_params(&tm).unwrap(), &data).unwrap())
                / (2.0 * h);
            assert!((fd - g.g[i]).abs() <= 1e-5 * scale, "restart {restart} param {i}: {fd} vs {}", g.g[i]);
        }
    }
}

#[test]
fn noise_gradient_at_zero_targets() {
    let mut data = toy(12, 2, 7);
    data.y.iter_mut().for_each(|v| *v = 0.0);
    let spec = KernelSpec::iso(1.2, 0.9, 0.3);
    let g = grad_exact(&spec, &data).unwrap().g;
    let inv = CholeskyFactor::factor(&kpcg::kernels::gram(&spec, &data.x, true)).unwrap().inverse();
    let expect = -0.5 * 0.3 * inv.trace();
    assert!(rel(g[2], expect) < 1e-10);
}

#[test]
fn quadratic_term_matches_cg() {
    let data = toy(50, 3, 8);
    let spec = KernelSpec::iso(1.0, 1.3, 0.1);
    let ky = kpcg::kernels::gram(&spec, &data.x, true);
    let chol = CholeskyFactor::factor(&ky).unwrap();
    let exact: f64 = kpcg::linalg::dot(&data.y, &chol.solve(&data.y).unwrap());
    let cg = cg_solve(&ky, &data.y, &SolveConfig::for_dim(50)).unwrap();
    let q = kpcg::linalg::dot(&data.y, &cg.x);
    assert!(rel(q, exact) < 1e-6);
}

fn mean_and_se(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let m = samples.len() as f64;
    let p = samples[0].len();
    let mean: Vec<f64> = (0..p).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / m).collect();
    let se = (0..p)
        .map(|i| {
            let var = samples.iter().map(|s| (s[i] - mean[i]).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    (mean, se)
}

#[test]
fn stochastic_gradient_is_unbiased() {
    let data = toy(30, 2, 9);
    let spec = KernelSpec::ard(1.3, &[0.8, 1.4], 0.1);
    let exact = grad_exact(&spec, &data).unwrap().g;
    let setup = PcgSetup::pcg(PreconditionerKind::Nystrom).with_solve(tight(30));
    let samples: Vec<Vec<f64>> = (0..2000u64)
        .map(|s| {
            let probes = sample_probes(30, 4, 10_000 + s);
            let g = grad_stochastic(&spec, &data, &setup, &probes, s).unwrap();
            assert!(g.is_stochastic && g.converged);
            assert_eq!(g.solves_performed, 5);
            g.g
        })
        .collect();
    let (mean, se) = mean_and_se(&samples);
    for i in 0..exact.len() {
        assert!((mean[i] - exact[i]).abs() < 3.0 * se[i], "param {i}: mean {} exact {} se {}", mean[i], exact[i], se[i]);
    }
}

#[test]
fn stochastic_gradient_is_exact_for_a_diagonal_kernel() {
    // Far-apart inputs give K = σ²I (to machine precision), where Rademacher probes are exact.
    let x = Matrix::from_fn(6, 1, |i, _| 100.0 * i as f64);
    let data = Dataset::new(x, vec![0.3, -1.0, 0.5, 2.0, -0.4, 0.1]).unwrap();
    let spec = KernelSpec::iso(1.5, 0.5, 0.2);
    let exact = grad_exact(&spec, &data).unwrap().g;
    for s in 0..5 {
        let g = grad_stochastic(&spec, &data, &PcgSetup::cg(), &sample_probes(6, 1, s), s).unwrap().g;
        for i in 0..3 {
            assert!((g[i] - exact[i]).abs() < 1e-6 * (1.0 + exact[i].abs()), "{i}");
        }
    }
}

#[test]
fn stochastic_gradient_is_deterministic_given_seeds() {
    let data = toy(25, 2, 10);
    let spec = KernelSpec::iso(1.0, 0.9, 0.05);
    let setup = PcgSetup::pcg(PreconditionerKind::Fitc).with_solve(SolveConfig::new(25.0 * 1e-14, 10_000).unwrap());
    let probes = sample_probes(25, 4, 3);
    let a = grad_stochastic(&spec, &data, &setup, &probes, 11).unwrap();
    let b = grad_stochastic(&spec, &data, &setup, &probes, 11).unwrap();
    assert_eq!(a, b);
}

#[test]
fn iterative_predictions_match_cholesky() {
    let data = toy(25, 2, 12);
    let spec = KernelSpec::iso(1.4, 0.8, 0.05);
    let x_star = Matrix::from_fn(7, 2, |i, j| -1.5 + 0.4 * i as f64 + 0.3 * j as f64);
    let exact = predict_exact(&spec, &data, &x_star, true).unwrap();
    for kind in [PreconditionerKind::None, PreconditionerKind::Nystrom, PreconditionerKind::Pitc, PreconditionerKind::Spectral] {
        let setup = PcgSetup::pcg(kind).with_solve(tight(25));
        let it = predict(&spec, &data, &x_star, &setup, 5, true).unwrap();
        assert!(it.converged);
        for (a, b) in it.predictions.iter().zip(&exact.predictions) {
            assert!((a.mean - b.mean).abs() < 1e-6 * (1.0 + b.mean.abs()), "{kind}");
            assert!((a.variance - b.variance).abs() < 1e-6 * (1.0 + b.variance), "{kind}");
            assert!(a.variance >= 0.0 && a.predictive_noise_included);
        }
    }
}

#[test]
fn interpolation_and_prior_limits() {
    let data = toy(10, 1, 13);
    let spec = KernelSpec::iso(1.0, 0.7, 1e-10);
    let x_star = Matrix::from_fn(2, 1, |i, _| if i == 0 { data.x.get(3, 0) } else { 1e4 });
    let p = predict_exact(&spec, &data, &x_star, false).unwrap().predictions;
    assert!((p[0].mean - data.y[3]).abs() < 1e-3);
    assert!(p[1].mean.abs() < 1e-6);
    assert!((p[1].variance - 1.0).abs() < 1e-6);

    let noisy = KernelSpec::iso(1.0, 0.7, 0.2);
    let far = Matrix::from_fn(1, 1, |_, _| 1e4);
    let setup = PcgSetup::pcg(PreconditionerKind::Nystrom);
    let p = predict(&noisy, &data, &far, &setup, 0, true).unwrap().predictions;
    assert!(p[0].mean.abs() < 1e-6);
    assert!((p[0].variance - 1.2).abs() < 1e-6);
}

#[test]
fn lml_through_pcg_matches_cholesky() {
    let data = toy(60, 2, 14);
    let spec = KernelSpec::iso(1.0, 1.1, 0.02);
    let exact = lml_exact(&spec, &data).unwrap();
    for kind in [PreconditionerKind::None, PreconditionerKind::Nystrom, PreconditionerKind::BlockJacobi] {
        let (lml, rep) = lml_iterative(&spec, &data, &PcgSetup::pcg(kind), 1).unwrap();
        assert!(rep.converged);
        assert!(rel(lml, exact) < 1e-5, "{kind}");
    }
}

#[test]
fn metrics_match_elementwise_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let preds: Vec<Prediction> = (0..9)
        .map(|_| Prediction {
            mean: rng.random_range(-1.0..1.0),
            variance: rng.random_range(0.1..2.0),
            predictive_noise_included: true,
        })
        .collect();
    let y: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (rmse, nll) = test_metrics(&preds, &y).unwrap();
    let se: f64 = preds.iter().zip(&y).map(|(p, y)| (y - p.mean).powi(2)).sum();
    let expect_nll: f64 = preds
        .iter()
        .zip(&y)
        .map(|(p, y)| 0.5 * (2.0 * std::f64::consts::PI * p.variance).ln() + (y - p.mean).powi(2) / (2.0 * p.variance))
        .sum();
    assert!(rel(rmse, (se / 9.0).sqrt()) < 1e-12);
    assert!(rel(nll, expect_nll) < 1e-12);
    let perfect: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    assert_eq!(test_metrics(&preds, &perfect).unwrap().0, 0.0);
    assert!(matches!(test_metrics(&[], &[]), Err(Error::EmptyTestSet)));
}

#[test]
fn classification_style_labels_are_not_required() {
    let data = toy(8, 1, 16);
    assert!(!data.is_binary());
    assert!(lml_exact(&KernelSpec::iso(1.0, 1.0, 0.1), &data).unwrap().is_finite());
}
