use std::f64::consts::PI;

use kpcg::kernels::{gram, KernelSpec};
use kpcg::linalg::{dot, CholeskyFactor, DenseSymMatrix, Matrix, ScaledShifted};
use kpcg::precond::{
    build, build_block_jacobi, build_fitc, build_nystrom, build_partial_svd, build_pitc, build_regularized, build_ski,
    build_spectral, ceil_sqrt, woodbury_apply, KernelSystem, LowRankFactor, PrecondParams, Preconditioner,
    PreconditionerKind, Ski, SkiConfig, KUU_JITTER,
};
use kpcg::solvers::{pcg_solve, SolveConfig};
use kpcg::Error;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, d, |_, _| rng.random_range(-1.5..1.5))
}

fn vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn na(a: &DenseSymMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.n(), a.n(), |i, j| a.get(i, j))
}

fn kernel(spec: &KernelSpec, x: &Matrix) -> DMatrix<f64> {
    na(&gram(spec, x, false))
}

/// `Q = K_XU (K_UU + εσ²I)⁻¹ K_UX`, assembled densely.
fn nystrom_q(spec: &KernelSpec, x: &Matrix, u: &[usize]) -> DMatrix<f64> {
    let k = kernel(spec, x);
    let n = x.rows();
    let mut kuu = DMatrix::from_fn(u.len(), u.len(), |a, b| k[(u[a], u[b])]);
    for a in 0..u.len() {
        kuu[(a, a)] += KUU_JITTER * spec.sigma2();
    }
    let kxu = DMatrix::from_fn(n, u.len(), |i, a| k[(i, u[a])]);
    &kxu * kuu.try_inverse().unwrap() * kxu.transpose()
}

fn rel_err(got: &[f64], expect: &DVector<f64>) -> f64 {
    let num: f64 = got.iter().zip(expect.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    num / expect.norm()
}

fn check_against(p: &dyn Preconditioner, dense_p: &DMatrix<f64>, tol: f64, label: &str) {
    let inv = dense_p.clone().cholesky().expect("oracle P not SPD").inverse();
    for s in 0..3 {
        let v = vector(dense_p.nrows(), 100 + s);
        let expect = &inv * DVector::from_vec(v.clone());
        let got = p.apply_inverse_vec(&v).unwrap();
        let e = rel_err(&got, &expect);
        assert!(e < tol, "{label}: relative error {e:e}");
    }
}

fn with_shift(mut a: DMatrix<f64>, c: f64) -> DMatrix<f64> {
    for i in 0..a.nrows() {
        a[(i, i)] += c;
    }
    a
}

#[test]
fn woodbury_matches_cholesky_of_explicit_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let phi = Matrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
    let p = DenseSymMatrix::from_upper(20, |i, j| dot(phi.row(i), phi.row(j)) + if i == j { 0.3 } else { 0.0 });
    let v = vector(20, 8);
    let expect = CholeskyFactor::factor(&p).unwrap().solve(&v).unwrap();
    let got = woodbury_apply(&LowRankFactor::new(phi, 0.3), &v).unwrap();
    for i in 0..20 {
        assert!((got[i] - expect[i]).abs() < 1e-8);
    }
}

#[test]
fn nystrom_matches_dense_oracle() {
    let spec = KernelSpec::iso(1.3, 0.8, 0.05);
    let x = points(30, 2, 1);
    let p = build_nystrom(&spec, &x, 5, 3).unwrap();
    let q = nystrom_q(&spec, &x, p.inducing_indices());
    check_against(&p, &with_shift(q, 0.05), 1e-6, "nystrom");
}

#[test]
fn full_rank_nystrom_is_ky() {
    let spec = KernelSpec::iso(1.0, 1.2, 0.1);
    let x = points(20, 2, 2);
    let p = build_nystrom(&spec, &x, 20, 9).unwrap();
    let mut idx = p.inducing_indices().to_vec();
    idx.sort();
    assert_eq!(idx, (0..20).collect::<Vec<_>>());
    check_against(&p, &na(&gram(&spec, &x, true)), 1e-6, "nystrom m=n");
}

#[test]
fn fitc_matches_dense_oracle_and_keeps_diagonal() {
    let spec = KernelSpec::ard(0.9, &[0.5, 1.5], 0.02);
    let x = points(30, 2, 4);
    let p = build_fitc(&spec, &x, 5, 5).unwrap();
    let k = kernel(&spec, &x);
    let q = nystrom_q(&spec, &x, p.inducing_indices());
    let mut dense = q.clone();
    for i in 0..30 {
        dense[(i, i)] = k[(i, i)] + 0.02;
    }
    check_against(&p, &dense, 1e-6, "fitc");
    for i in 0..30 {
        assert!((dense[(i, i)] - (spec.sigma2() + spec.noise())).abs() < 1e-12);
    }
}

#[test]
fn full_rank_fitc_is_nystrom() {
    let spec = KernelSpec::iso(1.0, 1.0, 0.1);
    let x = points(15, 1, 6);
    let f = build_fitc(&spec, &x, 15, 2).unwrap();
    let nys = build_nystrom(&spec, &x, 15, 2).unwrap();
    let v = vector(15, 3);
    let a = f.apply_inverse_vec(&v).unwrap();
    let b = nys.apply_inverse_vec(&v).unwrap();
    for i in 0..15 {
        assert!((a[i] - b[i]).abs() < 1e-6 * (1.0 + b[i].abs()));
    }
}

#[test]
fn pitc_matches_dense_oracle() {
    let spec = KernelSpec::iso(1.1, 0.7, 0.03);
    let x = points(24, 2, 10);
    let p = build_pitc(&spec, &x, 4, 6, 11).unwrap();
    let k = kernel(&spec, &x);
    let q = nystrom_q(&spec, &x, p.inducing_indices());
    let mut dense = q.clone();
    assert_eq!(p.blocks().len(), 4);
    for block in p.blocks() {
        assert_eq!(block.len(), 6);
        for &i in block {
            for &j in block {
                dense[(i, j)] = k[(i, j)];
            }
        }
    }
    check_against(&p, &with_shift(dense, 0.03), 1e-6, "pitc");
}

#[test]
fn pitc_limits() {
    let spec = KernelSpec::iso(1.0, 0.9, 0.1);
    let x = points(18, 2, 12);
    let v = vector(18, 13);
    let unit = build_pitc(&spec, &x, 4, 1, 21).unwrap().apply_inverse_vec(&v).unwrap();
    let fitc = build_fitc(&spec, &x, 4, 21).unwrap().apply_inverse_vec(&v).unwrap();
    for i in 0..18 {
        assert!((unit[i] - fitc[i]).abs() < 1e-10 * (1.0 + fitc[i].abs()));
    }
    let whole = build_pitc(&spec, &x, 4, 18, 21).unwrap();
    check_against(&whole, &na(&gram(&spec, &x, true)), 1e-6, "pitc block=n");
}

#[test]
fn spectral_factor_is_cosine_sum() {
    let spec = KernelSpec::ard(1.6, &[0.6, 1.3], 0.1);
    let x = points(12, 2, 14);
    let p = build_spectral(&spec, &x, 7, 15).unwrap();
    let s = p.frequencies();
    let phi = &p.factor().phi;
    assert_eq!(phi.cols(), 14);
    let mut dense = DMatrix::zeros(12, 12);
    for i in 0..12 {
        for j in 0..12 {
            let mut acc = 0.0;
            for r in 0..7 {
                let lag: f64 = (0..2).map(|c| s.get(r, c) * (x.get(i, c) - x.get(j, c))).sum();
                acc += (2.0 * PI * lag).cos();
            }
            let expect = 1.6 / 7.0 * acc;
            dense[(i, j)] = expect;
            assert!((dot(phi.row(i), phi.row(j)) - expect).abs() < 1e-12);
        }
        assert!((dot(phi.row(i), phi.row(i)) - 1.6).abs() < 1e-12);
    }
    check_against(&p, &with_shift(dense, 0.1), 1e-6, "spectral");
}

#[test]
fn spectral_converges_to_kernel() {
    let spec = KernelSpec::iso(1.0, 0.8, 0.1);
    let x = points(10, 2, 16);
    let p = build_spectral(&spec, &x, 10_000, 17).unwrap();
    let k = kernel(&spec, &x);
    let phi = &p.factor().phi;
    for i in 0..10 {
        for j in 0..10 {
            assert!((dot(phi.row(i), phi.row(j)) - k[(i, j)]).abs() < 0.05);
        }
    }
}

#[test]
fn spectral_frequency_scale() {
    // s_r ~ N(0, Λ / 4π²): the sample variance per dimension is 1 / (2π l)².
    let spec = KernelSpec::ard(1.0, &[0.5, 2.0], 0.1);
    let x = points(5, 2, 18);
    let p = build_spectral(&spec, &x, 20_000, 19).unwrap();
    let s = p.frequencies();
    for (c, l) in [0.5f64, 2.0].iter().enumerate() {
        let var: f64 = (0..s.rows()).map(|r| s.get(r, c).powi(2)).sum::<f64>() / s.rows() as f64;
        let expect = 1.0 / (2.0 * PI * l).powi(2);
        assert!((var / expect - 1.0).abs() < 0.05, "dim {c}: {var} vs {expect}");
    }
}

fn frob(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn phi_phit(p: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(p.rows(), p.rows(), |i, j| dot(p.row(i), p.row(j)))
}

#[test]
fn svd_is_near_optimal() {
    let spec = KernelSpec::iso(1.0, 0.6, 0.05);
    let x = points(30, 2, 20);
    let k = kernel(&spec, &x);
    let p = build_partial_svd(&spec, &x, 5, 10, 21).unwrap();
    let err = frob(&(&k - phi_phit(&p.factor().phi)));
    let mut eig: Vec<f64> = SymmetricEigen::new(k.clone()).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let optimal = eig[5..].iter().map(|l| l * l).sum::<f64>().sqrt();
    assert!(err <= 1.5 * optimal, "{err} vs optimal {optimal}");
    check_against(&p, &with_shift(phi_phit(&p.factor().phi), 0.05), 1e-6, "svd");
}

#[test]
fn svd_recovers_low_rank_and_full_rank() {
    // Four distinct inputs, each repeated five times: K has rank 4.
    let base = points(4, 2, 22);
    let x = Matrix::from_fn(20, 2, |i, c| base.get(i % 4, c));
    let spec = KernelSpec::iso(1.0, 0.7, 0.1);
    let k = kernel(&spec, &x);
    let p = build_partial_svd(&spec, &x, 4, 6, 23).unwrap();
    assert!(frob(&(&k - phi_phit(&p.factor().phi))) < 1e-6 * frob(&k));

    let x = points(12, 2, 24);
    let k = kernel(&spec, &x);
    let p = build_partial_svd(&spec, &x, 12, 0, 25).unwrap();
    assert!(frob(&(&k - phi_phit(&p.factor().phi))) < 1e-8 * frob(&k).max(1.0));
}

fn tight_inner(n: usize) -> SolveConfig {
    SolveConfig::new(n as f64 * 1e-22, 10_000).unwrap()
}

#[test]
fn ski_matches_dense_assembly() {
    let spec = KernelSpec::iso(1.2, 0.9, 0.05);
    let x = points(25, 2, 26);
    let ski = build_ski(&spec, &x, 5, tight_inner(25)).unwrap();
    let grid = ski.grid_points();
    let a = ski.assignments();
    let dense = DMatrix::from_fn(25, 25, |i, j| {
        let d2: f64 = (0..2).map(|c| (grid.get(a[i], c) - grid.get(a[j], c)).powi(2)).sum();
        1.2 * (-0.5 * d2 / 0.81).exp()
    });
    let dense = with_shift(dense, 0.05);
    let v = vector(25, 27);
    let pv = ski.apply_system(&v);
    let expect = &dense * DVector::from_vec(v.clone());
    for i in 0..25 {
        assert!((pv[i] - expect[i]).abs() < 1e-10);
    }
    check_against(&ski, &dense, 1e-6, "ski");
    // Every input goes to its nearest node.
    for i in 0..25 {
        let d_assigned: f64 = (0..2).map(|c| (grid.get(a[i], c) - x.get(i, c)).powi(2)).sum();
        for g in 0..grid.rows() {
            let d: f64 = (0..2).map(|c| (grid.get(g, c) - x.get(i, c)).powi(2)).sum();
            assert!(d_assigned <= d + 1e-12);
        }
    }
}

fn on_grid(n: usize) -> (Matrix, SkiConfig) {
    let x = Matrix::from_fn(n, 1, |i, _| 0.25 * ((i * 7) % n) as f64);
    let cfg = SkiConfig {
        points_per_dim: Some(n),
        inflation: 0.0,
        inner: tight_inner(n),
    };
    (x, cfg)
}

#[test]
fn ski_on_grid_reproduces_ky() {
    let spec = KernelSpec::iso(1.0, 0.6, 0.05);
    let (x, cfg) = on_grid(16);
    let ski = Ski::new(&KernelSystem::regression(&spec, &x), &cfg).unwrap();
    let ky = gram(&spec, &x, true);
    let v = vector(16, 28);
    let a = ski.apply_system(&v);
    let b = ky.matvec(&v);
    for i in 0..16 {
        assert!((a[i] - b[i]).abs() < 1e-10);
    }
}

#[test]
fn kronecker_matvec_matches_dense() {
    let spec = KernelSpec::ard(1.4, &[0.5, 1.1], 0.1);
    let x = points(16, 2, 29);
    let ski = build_ski(&spec, &x, 4, tight_inner(16)).unwrap();
    let grid = ski.grid_points();
    assert_eq!(grid.rows(), 16);
    let kuu = gram(&spec, &grid, false);
    let v = vector(16, 30);
    let a = ski.kuu_matvec(&v);
    let b = kuu.matvec(&v);
    for i in 0..16 {
        assert!((a[i] - b[i]).abs() < 1e-10);
    }
}

#[test]
fn block_jacobi_matches_dense_block_inverse() {
    let spec = KernelSpec::iso(1.0, 0.8, 0.1);
    let x = points(20, 2, 31);
    let p = build_block_jacobi(&spec, &x, 5).unwrap();
    let ky = na(&gram(&spec, &x, true));
    let dense = DMatrix::from_fn(20, 20, |i, j| if i / 5 == j / 5 { ky[(i, j)] } else { 0.0 });
    let inv = dense.try_inverse().unwrap();
    let v = vector(20, 32);
    let expect = &inv * DVector::from_vec(v.clone());
    let got = p.apply_inverse_vec(&v).unwrap();
    for i in 0..20 {
        assert!((got[i] - expect[i]).abs() < 1e-8);
    }
    let jac = build_block_jacobi(&spec, &x, 1).unwrap().apply_inverse_vec(&v).unwrap();
    for i in 0..20 {
        assert!((jac[i] - v[i] / 1.1).abs() < 1e-14);
    }
}

#[test]
fn regularized_matches_shifted_cholesky() {
    let spec = KernelSpec::iso(1.0, 0.9, 0.01);
    let x = points(20, 2, 33);
    let inner = SolveConfig::inner_for_dim(20);
    let p = build_regularized(&spec, &x, 1.0, inner).unwrap();
    let mut pk = gram(&spec, &x, true);
    pk.add_diagonal(1.0);
    let v = vector(20, 34);
    let expect = CholeskyFactor::factor(&pk).unwrap().solve(&v).unwrap();
    let got = p.apply_inverse_vec(&v).unwrap();
    // The inner solve stops at ‖r‖² ≤ ε²‖v‖²/n; the error is bounded by ‖P⁻¹‖‖r‖.
    let bound = (inner.epsilon2 * dot(&v, &v) / 20.0).sqrt() / 1.01;
    let err: f64 = got.iter().zip(&expect).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!(err <= bound, "{err} > {bound}");
    assert!(matches!(build_regularized(&spec, &x, 0.0, inner), Err(Error::InvalidDelta(_))));
}

#[test]
fn invalid_budgets_rejected() {
    let spec = KernelSpec::iso(1.0, 1.0, 0.1);
    let x = points(6, 1, 35);
    assert!(matches!(build_nystrom(&spec, &x, 0, 0), Err(Error::InvalidRank { .. })));
    assert!(matches!(build_nystrom(&spec, &x, 7, 0), Err(Error::InvalidRank { .. })));
    assert!(matches!(build_spectral(&spec, &x, 0, 0), Err(Error::InvalidRank { .. })));
    assert!(matches!(build_block_jacobi(&spec, &x, 0), Err(Error::InvalidBlockSize(0))));
    assert!(matches!(build_pitc(&spec, &x, 2, 0, 0), Err(Error::InvalidBlockSize(0))));
}

fn limit_iterations(p: &dyn Preconditioner, spec: &KernelSpec, x: &Matrix) -> usize {
    let n = x.rows();
    let k = gram(spec, x, false);
    let op = ScaledShifted::shifted(&k, spec.noise());
    let y = vector(n, 40);
    let rep = pcg_solve(&op, p, &y, &SolveConfig::for_dim(n)).unwrap();
    assert!(rep.converged);
    rep.iterations
}

#[test]
fn exactness_limits_converge_in_two_iterations() {
    let spec = KernelSpec::iso(1.0, 0.7, 0.02);
    let n = 40;
    let x = points(n, 2, 41);
    let limits: Vec<(&str, Box<dyn Preconditioner>)> = vec![
        ("nystrom m=n", Box::new(build_nystrom(&spec, &x, n, 1).unwrap())),
        ("fitc m=n", Box::new(build_fitc(&spec, &x, n, 1).unwrap())),
        ("pitc block=n", Box::new(build_pitc(&spec, &x, 3, n, 1).unwrap())),
        ("svd rank=n", Box::new(build_partial_svd(&spec, &x, n, 0, 1).unwrap())),
        ("blockjacobi block=n", Box::new(build_block_jacobi(&spec, &x, n).unwrap())),
    ];
    for (label, p) in &limits {
        let it = limit_iterations(p.as_ref(), &spec, &x);
        assert!(it <= 2, "{label}: {it} iterations");
    }
    let bj = build_block_jacobi(&spec, &x, n).unwrap();
    assert_eq!(limit_iterations(&bj, &spec, &x), 1);

    let (xg, cfg) = on_grid(30);
    let ski = Ski::new(&KernelSystem::regression(&spec, &xg), &cfg).unwrap();
    let it = limit_iterations(&ski, &spec, &xg);
    assert!(it <= 2, "ski on grid: {it} iterations");
}

#[test]
fn all_kinds_build_through_the_factory() {
    let spec = KernelSpec::iso(1.0, 0.8, 0.05);
    let x = points(30, 2, 42);
    let system = KernelSystem::regression(&spec, &x);
    let params = PrecondParams::for_dim(30);
    let ky = gram(&spec, &x, true);
    for kind in PreconditionerKind::ALL {
        let p = build(kind, &system, &params, 3).unwrap();
        let v = vector(30, 43);
        let z = p.apply_inverse_vec(&v).unwrap();
        assert!(dot(&z, &v) > 0.0, "{kind}");
        assert!(p.cost_per_apply() >= 0.0 && p.setup_cost() >= 0.0);
        let rep = pcg_solve(&ScaledShifted::shifted(&gram(&spec, &x, false), 0.05), &p, &v, &SolveConfig::for_dim(30)).unwrap();
        assert!(rep.converged, "{kind}");
        let resid: Vec<f64> = ky.matvec(&rep.x).iter().zip(&v).map(|(a, b)| a - b).collect();
        assert!(dot(&resid, &resid) < 1e-6, "{kind}");
    }
}

#[test]
fn laplace_systems_are_preconditioned_too() {
    // B = I + S K S with S = W^{1/2}.
    let spec = KernelSpec::iso(2.0, 0.8, 0.05);
    let x = points(24, 2, 44);
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let sw: Vec<f64> = (0..24).map(|_| rng.random_range(0.1..0.6)).collect();
    let system = KernelSystem::laplace(&spec, &x, &sw);
    let dense = na(&system.dense());
    let mut params = PrecondParams::for_dim(24);
    params.block_size = 24;
    let exact = build(PreconditionerKind::BlockJacobi, &system, &params, 0).unwrap();
    check_against(exact.as_ref(), &dense, 1e-10, "laplace blockjacobi block=n");
    let nys = build(PreconditionerKind::Nystrom, &system, &PrecondParams::for_dim(24).with_m(24), 0).unwrap();
    check_against(nys.as_ref(), &dense, 1e-6, "laplace nystrom m=n");
}

#[test]
fn setup_stays_within_budget() {
    // With m = ⌈√n⌉ the cubic factorizations cost n^{3/2}; the only O(n²) step is
    // forming ΦᵀΦ (n m² flops, 4n m² for the 2m Fourier columns), so setup in
    // matvec units stays bounded as n grows.
    let spec = KernelSpec::iso(1.0, 0.8, 0.05);
    let mut previous: Vec<f64> = Vec::new();
    for n in [100, 400, 900] {
        let x = points(n, 2, n as u64);
        let system = KernelSystem::regression(&spec, &x);
        let params = PrecondParams::for_dim(n);
        assert_eq!(params.m, ceil_sqrt(n));
        let mut current = Vec::new();
        for kind in [
            PreconditionerKind::Nystrom,
            PreconditionerKind::Fitc,
            PreconditionerKind::Pitc,
            PreconditionerKind::Spectral,
            PreconditionerKind::BlockJacobi,
            PreconditionerKind::Ski,
        ] {
            let p = build(kind, &system, &params, 1).unwrap();
            assert!(p.setup_cost() <= 5.0, "{kind} n={n}: setup {}", p.setup_cost());
            assert!(p.cost_per_apply() <= 1.0, "{kind} n={n}: apply {}", p.cost_per_apply());
            current.push(p.setup_cost());
        }
        for (now, before) in current.iter().zip(&previous) {
            assert!(*now <= 1.1 * before, "setup grows faster than n²: {before} -> {now}");
        }
        previous = current;
        let bj = build(PreconditionerKind::BlockJacobi, &system, &params, 1).unwrap();
        // n/b blocks of size b = √n: n b²/3 flops.
        assert!(bj.setup_cost() <= 0.34);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn direct_kinds_are_symmetric_positive(seed in any::<u64>(), l in 0.3..2.0f64, lambda in 0.01..0.5f64) {
        let spec = KernelSpec::iso(1.0, l, lambda);
        let x = points(20, 2, seed);
        let system = KernelSystem::regression(&spec, &x);
        let params = PrecondParams::for_dim(20);
        let u = vector(20, seed ^ 5);
        let v = vector(20, seed ^ 6);
        for kind in [
            PreconditionerKind::Nystrom,
            PreconditionerKind::Fitc,
            PreconditionerKind::Pitc,
            PreconditionerKind::Spectral,
            PreconditionerKind::Svd,
            PreconditionerKind::BlockJacobi,
        ] {
            let p = build(kind, &system, &params, seed).unwrap();
            let pu = p.apply_inverse_vec(&u).unwrap();
            let pv = p.apply_inverse_vec(&v).unwrap();
            let scale = 1.0 + dot(&u, &pv).abs();
            prop_assert!((dot(&u, &pv) - dot(&v, &pu)).abs() < 1e-8 * scale, "{}", kind);
            prop_assert!(dot(&v, &pv) > 0.0);
            let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.0 * a - b).collect();
            let ps = p.apply_inverse_vec(&sum).unwrap();
            for i in 0..20 {
                prop_assert!((ps[i] - (2.0 * pu[i] - pv[i])).abs() < 1e-8 * (1.0 + ps[i].abs()));
            }
        }
    }
}

#[test]
fn inexact_kinds_are_nearly_symmetric() {
    let spec = KernelSpec::iso(1.0, 0.8, 0.05);
    let x = points(25, 2, 50);
    let system = KernelSystem::regression(&spec, &x);
    let mut params = PrecondParams::for_dim(25);
    params.inner = tight_inner(25);
    let u = vector(25, 51);
    let v = vector(25, 52);
    for kind in [PreconditionerKind::Ski, PreconditionerKind::Regularized] {
        let p = build(kind, &system, &params, 0).unwrap();
        assert!(p.is_inexact());
        let a = dot(&u, &p.apply_inverse_vec(&v).unwrap());
        let b = dot(&v, &p.apply_inverse_vec(&u).unwrap());
        assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{kind}");
    }
}

#[test]
fn nested_costs_include_inner_iterations() {
    let spec = KernelSpec::iso(1.0, 0.8, 0.01);
    let x = points(30, 2, 53);
    let system = KernelSystem::regression(&spec, &x);
    let params = PrecondParams::for_dim(30);
    let p = build(PreconditionerKind::Regularized, &system, &params, 0).unwrap();
    let mut z = vec![0.0; 30];
    let cost = p.apply_inverse(&vector(30, 54), &mut z).unwrap();
    // every inner iteration is one full matvec
    assert!(cost >= 2.0 && cost.fract() == 0.0, "{cost}");
}
