//! Error-versus-time tracking of stochastic hyperparameter training.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::adagrad::AdagradState;
use super::report::RunRecord;
use crate::classification::{
    class_nll, error_rate, grad_exact_laplace, grad_stochastic_laplace, laplace_fit, laplace_fit_exact, predict_class,
    predict_class_exact, LaplaceState, NewtonConfig,
};
use crate::error::{Error, Result};
use crate::kernels::{Dataset, KernelMode, KernelSpec};
use crate::precond::{ceil_sqrt, rng, PcgSetup, PrecondParams, PreconditionerKind};
use crate::regression::{grad_exact, grad_stochastic, predict, predict_exact, test_metrics, RegressionGradient};
use crate::trace::sample_probes;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Pcg,
    Cg,
    /// Exact Cholesky gradients, same optimizer.
    Chol,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Pcg => "PCG",
            Method::Cg => "CG",
            Method::Chol => "CHOL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcg" => Ok(Method::Pcg),
            "cg" => Ok(Method::Cg),
            "chol" | "cholesky" => Ok(Method::Chol),
            other => Err(Error::InvalidSpec(format!("unknown method {other:?}"))),
        }
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(Error::InvalidSpec(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackConfig {
    pub task: Task,
    pub method: Method,
    /// Preconditioner for [`Method::Pcg`].
    pub kind: PreconditionerKind,
    pub steps: usize,
    /// Evaluate on the test split every `schedule` steps (and after the last).
    pub schedule: usize,
    pub nr: usize,
    pub step_size: f64,
    /// Preconditioner parameters; `None` uses `m = 4√n` resampled every step.
    pub params: Option<PrecondParams>,
    /// Starting point; `None` uses [`default_theta`].
    pub init: Option<KernelSpec>,
    pub seed: u64,
}

impl TrackConfig {
    pub fn new(task: Task, method: Method) -> Self {
        Self {
            task,
            method,
            kind: PreconditionerKind::Nystrom,
            steps: 100,
            schedule: 10,
            nr: 4,
            step_size: 1.0,
            params: None,
            init: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub records: Vec<RunRecord>,
    pub initial: KernelSpec,
    pub trained: KernelSpec,
    pub train_size: usize,
    pub test_size: usize,
    /// Steps in which some solve hit its cap.
    pub unconverged_steps: usize,
}

/// Seeded split with `round(√n)` held-out points. Returns `(train, test)`.
pub fn split(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.n();
    let n_test = ((n as f64).sqrt().round() as usize).max(1);
    if n_test >= n {
        return Err(Error::InvalidData(format!("{n} points are too few to hold out {n_test}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed));
    let (test, train) = idx.split_at(n_test);
    Ok((data.subset(train), data.subset(test)))
}

/// `log σ² = 0`, `log l = log(median pairwise distance)`, `log λ = -2`
/// (isotropic). The median uses at most the first 500 rows.
pub fn default_theta(data: &Dataset) -> KernelSpec {
    let m = data.n().min(500);
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let d2: f64 = data.x.row(i).iter().zip(data.x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let med = dists.get(dists.len() / 2).copied().filter(|&v| v > 0.0).unwrap_or(1.0);
    KernelSpec {
        log_sigma2: 0.0,
        log_lengthscales: vec![med.ln()],
        log_noise: -2.0,
        mode: KernelMode::Iso,
    }
}

/// Matvec-equivalent work of one dense `n x n` Cholesky factorization.
fn chol_cost(n: usize) -> f64 {
    n as f64 / 3.0
}

struct Evaluation {
    metric: f64,
    nll: f64,
    matvecs: f64,
}

struct Tracker<'a> {
    cfg: &'a TrackConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    setup: PcgSetup,
    newton: NewtonConfig,
}

impl Tracker<'_> {
    fn step_seed(&self, t: usize, salt: u64) -> u64 {
        self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((t as u64) << 2 | salt)
    }

    fn fit(&self, spec: &KernelSpec, t: usize) -> Result<LaplaceState> {
        match self.cfg.method {
            Method::Chol => laplace_fit_exact(spec, self.train, &self.newton),
            _ => laplace_fit(spec, self.train, &self.setup, &self.newton, self.step_seed(t, 0)),
        }
    }

    fn gradient(&self, spec: &KernelSpec, state: Option<&LaplaceState>, t: usize) -> Result<RegressionGradient> {
        let n = self.train.n();
        let seed = self.step_seed(t, 0);
        match (self.cfg.task, self.cfg.method, state) {
            (Task::Regression, Method::Chol, _) => {
                let mut g = grad_exact(spec, self.train)?;
                g.matvecs = chol_cost(n) * 3.0 + spec.n_params() as f64;
                Ok(g)
            }
            (Task::Regression, _, _) => {
                let probes = sample_probes(n, self.cfg.nr, self.step_seed(t, 1));
                grad_stochastic(spec, self.train, &self.setup, &probes, seed)
            }
            (Task::Classification, Method::Chol, Some(st)) => {
                let mut g = grad_exact_laplace(spec, self.train, st)?;
                g.matvecs = chol_cost(n) * 3.0 + n as f64 + 3.0 * spec.n_params() as f64;
                Ok(g)
            }
            (Task::Classification, _, Some(st)) => {
                let trace = sample_probes(n, self.cfg.nr, self.step_seed(t, 1));
                let implicit = sample_probes(n, self.cfg.nr, self.step_seed(t, 2));
                grad_stochastic_laplace(spec, self.train, st, &trace, &implicit, &self.setup, seed)
            }
            (Task::Classification, _, None) => unreachable!("classification gradients need a fitted state"),
        }
    }

    fn evaluate(&self, spec: &KernelSpec, state: Option<&LaplaceState>, t: usize) -> Result<Evaluation> {
        let seed = self.step_seed(t, 3);
        let xs = &self.test.x;
        match (self.cfg.task, state) {
            (Task::Regression, _) => {
                let batch = match self.cfg.method {
                    Method::Chol => {
                        let mut b = predict_exact(spec, self.train, xs, true)?;
                        b.matvecs = chol_cost(self.train.n()) + xs.rows() as f64;
                        b
                    }
                    _ => predict(spec, self.train, xs, &self.setup, seed, true)?,
                };
                let (rmse, nll) = test_metrics(&batch.predictions, &self.test.y)?;
                Ok(Evaluation {
                    metric: rmse,
                    nll,
                    matvecs: batch.matvecs,
                })
            }
            (Task::Classification, Some(st)) => {
                let batch = match self.cfg.method {
                    Method::Chol => {
                        let mut b = predict_class_exact(spec, self.train, st, xs)?;
                        b.matvecs = chol_cost(self.train.n()) + xs.rows() as f64;
                        b
                    }
                    _ => predict_class(spec, self.train, st, xs, &self.setup, seed)?,
                };
                Ok(Evaluation {
                    metric: error_rate(&batch.probabilities, &self.test.y)?,
                    nll: class_nll(&batch.probabilities, &self.test.y)?,
                    matvecs: batch.matvecs,
                })
            }
            (Task::Classification, None) => unreachable!("classification evaluation needs a fitted state"),
        }
    }
}

/// Trains with ADAGRAD on a seeded `n - √n` / `√n` split and records test
/// metrics every `schedule` steps. Wall time covers gradient and metric
/// phases only.
pub fn train_and_track(data: &Dataset, cfg: &TrackConfig) -> Result<TrackResult> {
    if cfg.task == Task::Classification {
        data.require_binary()?;
    }
    if cfg.schedule == 0 {
        return Err(Error::InvalidSpec("schedule must be at least 1".into()));
    }
    let (train, test) = split(data, cfg.seed)?;
    let n = train.n();
    let initial = match &cfg.init {
        Some(s) => s.clone(),
        None => default_theta(&train),
    };
    initial.validate(train.d())?;

    let setup = match cfg.method {
        Method::Cg => PcgSetup::cg(),
        _ => {
            let params = cfg
                .params
                .clone()
                .unwrap_or_else(|| PrecondParams::for_dim(n).with_m((4 * ceil_sqrt(n)).min(n)));
            PcgSetup::pcg(cfg.kind).with_params(params)
        }
    };
    let tracker = Tracker {
        cfg,
        train: &train,
        test: &test,
        setup,
        newton: NewtonConfig::default(),
    };

    let mut spec = initial.clone();
    let mut theta = spec.to_vec();
    let mut opt = AdagradState::new(theta.len(), cfg.step_size);
    let mut records = Vec::new();
    let mut elapsed = 0.0;
    let mut matvecs = 0.0;
    let mut unconverged_steps = 0;

    for t in 0..=cfg.steps {
        let start = Instant::now();
        let state = match cfg.task {
            Task::Classification => {
                let st = tracker.fit(&spec, t)?;
                matvecs += st.matvecs + if cfg.method == Method::Chol { chol_cost(n) * st.newton_iters as f64 } else { 0.0 };
                if !st.solver_converged {
                    unconverged_steps += 1;
                }
                Some(st)
            }
            Task::Regression => None,
        };
        if t % cfg.schedule == 0 || t == cfg.steps {
            let ev = tracker.evaluate(&spec, state.as_ref(), t)?;
            matvecs += ev.matvecs;
            elapsed += start.elapsed().as_secs_f64();
            records.push(RunRecord {
                method: cfg.method.tag().to_string(),
                iteration: t,
                wall_time_s: elapsed,
                matvecs,
                metric: ev.metric,
                nll: ev.nll,
            });
        } else {
            elapsed += start.elapsed().as_secs_f64();
        }
        if t == cfg.steps {
            break;
        }
        let start = Instant::now();
        let g = tracker.gradient(&spec, state.as_ref(), t)?;
        matvecs += g.matvecs;
        if !g.converged {
            unconverged_steps += 1;
        }
        opt.step(&g.g, &mut theta)?;
        spec = spec.with_params(&theta)?;
        elapsed += start.elapsed().as_secs_f64();
    }

    Ok(TrackResult {
        records,
        initial,
        trained: spec,
        train_size: n,
        test_size: test.n(),
        unconverged_steps,
    })
}

/// Element-wise mean of runs recorded on the same schedule.
pub fn average_folds(runs: &[Vec<RunRecord>]) -> Result<Vec<RunRecord>> {
    let first = runs.first().ok_or_else(|| Error::InvalidData("no runs to average".into()))?;
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(Error::InvalidData("runs have different schedules".into()));
    }
    let k = runs.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let mean = |f: fn(&RunRecord) -> f64| runs.iter().map(|r| f(&r[i])).sum::<f64>() / k;
            RunRecord {
                method: first[i].method.clone(),
                iteration: first[i].iteration,
                wall_time_s: mean(|r| r.wall_time_s),
                matvecs: mean(|r| r.matvecs),
                metric: mean(|r| r.metric),
                nll: mean(|r| r.nll),
            }
        })
        .collect())
}
