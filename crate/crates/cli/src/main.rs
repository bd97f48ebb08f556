//! `kpcg`: solve kernel systems, compare preconditioners, train and predict.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kpcg::classification::{self, NewtonConfig};
use kpcg::kernels::{gram, Dataset, KernelMode, KernelSpec};
use kpcg::linalg::ScaledShifted;
use kpcg::precond::{build, KernelSystem, PcgSetup, PrecondParams, PreconditionerKind};
use kpcg::regression;
use kpcg::solvers::{pcg_solve, SolveConfig, DEFAULT_MAX_ITERS};
use kpcg::training::{self, compare, synth, Method, Task, TrackConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "kpcg", version, about = "Preconditioned conjugate gradients for GP kernel machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve K_y z = y once and report the iteration count.
    Solve(SolveArgs),
    /// CG versus PCG over a lengthscale / noise grid.
    Compare(CompareArgs),
    /// ADAGRAD training with periodic test-set evaluation.
    Train(TrainArgs),
    /// Predict at new inputs with fixed hyperparameters.
    Predict(PredictArgs),
    /// Write a synthetic dataset drawn from an RBF GP.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV file, label in the last column.
    #[arg(long)]
    data: PathBuf,
    /// Standardize feature columns.
    #[arg(long)]
    standardize: bool,
}

#[derive(Args, Clone)]
struct KernelArgs {
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    lengthscale: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// JSON file with log_sigma2, log_lengthscales, log_noise and mode (overrides the flags).
    #[arg(long)]
    theta: Option<PathBuf>,
}

impl KernelArgs {
    fn spec(&self) -> Result<KernelSpec> {
        match &self.theta {
            Some(p) => {
                let v: serde_json::Value = serde_json::from_reader(File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
                // Accept either a bare spec or a train metadata file.
                let spec = v.get("trained").cloned().unwrap_or(v);
                let s: ThetaJson = serde_json::from_value(spec).context("parsing hyperparameters")?;
                Ok(s.into())
            }
            None => Ok(KernelSpec::iso(self.sigma2, self.lengthscale, self.noise)),
        }
    }
}

#[derive(serde::Deserialize)]
struct ThetaJson {
    log_sigma2: f64,
    log_lengthscales: Vec<f64>,
    log_noise: f64,
    #[serde(default)]
    mode: Option<String>,
}

impl From<ThetaJson> for KernelSpec {
    fn from(t: ThetaJson) -> Self {
        let mode = match t.mode.as_deref() {
            Some("Ard") | Some("ard") => KernelMode::Ard,
            _ => KernelMode::Iso,
        };
        KernelSpec {
            log_sigma2: t.log_sigma2,
            log_lengthscales: t.log_lengthscales,
            log_noise: t.log_noise,
            mode,
        }
    }
}

fn spec_json(s: &KernelSpec) -> serde_json::Value {
    json!({
        "log_sigma2": s.log_sigma2,
        "log_lengthscales": s.log_lengthscales,
        "log_noise": s.log_noise,
        "mode": format!("{:?}", s.mode),
    })
}

#[derive(Args, Clone)]
struct PrecondArgs {
    /// none | nystrom | fitc | pitc | spectral | svd | ski | blockjacobi | regularized
    #[arg(long, default_value = "nystrom")]
    kind: PreconditionerKind,
    /// Inducing points, random frequencies or SVD rank (default ⌈√n⌉).
    #[arg(long)]
    m: Option<usize>,
    /// Block size for pitc and blockjacobi (default ⌈√n⌉).
    #[arg(long)]
    block: Option<usize>,
    /// Regularization offset δ for the regularized kind (default 100λ).
    #[arg(long)]
    delta: Option<f64>,
    /// SKI grid points per dimension (default: sized to the n^{3/2} budget).
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long, default_value_t = 10)]
    oversample: usize,
}

impl PrecondArgs {
    fn params(&self, n: usize, shift: f64) -> PrecondParams {
        let mut p = PrecondParams::for_dim(n);
        if let Some(m) = self.m {
            p.m = m;
        }
        if let Some(b) = self.block {
            p.block_size = b;
        }
        if let Some(d) = self.delta {
            p.delta_factor = d / shift;
        }
        p.grid_points_per_dim = self.grid;
        p.oversample = self.oversample;
        p
    }

    fn overridden(&self) -> bool {
        self.m.is_some() || self.block.is_some() || self.delta.is_some() || self.grid.is_some()
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    precond: PrecondArgs,
    /// Squared residual threshold (default n·1e-10).
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the solution vector here, one value per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    precond: PrecondArgs,
    /// Comma-separated kinds to compare (default: all eight).
    #[arg(long, value_delimiter = ',')]
    kinds: Vec<PreconditionerKind>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = vec![-0.5, 0.0, 0.5, 1.0])]
    log10_l: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = vec![-3.0, -2.0, -1.0])]
    log10_lambda: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pcg,
    Cg,
    Chol,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "pcg")]
    method: MethodArg,
    #[command(flatten)]
    precond: PrecondArgs,
    #[arg(long, default_value_t = 4)]
    nr: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Evaluate every this many steps.
    #[arg(long, default_value_t = 10)]
    schedule: usize,
    #[arg(long, default_value_t = 1.0)]
    step_size: f64,
    #[arg(long, default_value_t = 1)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report CSV; metadata goes next to it as `<out>.meta.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Test inputs; a label column, if present, is used for metrics.
    #[arg(long)]
    test: PathBuf,
    /// Whether the test CSV has a label in its last column.
    #[arg(long)]
    labelled: bool,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    precond: PrecondArgs,
    /// Use dense Cholesky instead of PCG.
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "regression")]
    task: TaskArg,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    lengthscale: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Label flip probability for classification data.
    #[arg(long, default_value_t = 0.05)]
    flip: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load(args: &DataArgs) -> Result<Dataset> {
    let loaded = training::load_csv(&args.data, args.standardize).with_context(|| format!("loading {}", args.data.display()))?;
    Ok(loaded.data)
}

fn solve(args: SolveArgs) -> Result<()> {
    let data = load(&args.data)?;
    let spec = args.kernel.spec()?;
    spec.validate(data.d())?;
    let n = data.n();
    let cfg = SolveConfig::new(args.eps2.unwrap_or(n as f64 * 1e-10), args.cap)?;
    let k = gram(&spec, &data.x, false);
    let op = ScaledShifted::shifted(&k, spec.noise());
    let system = KernelSystem::regression(&spec, &data.x).with_gram(&k);
    let p = build(args.precond.kind, &system, &args.precond.params(n, spec.noise()), args.seed)?;
    let rep = pcg_solve(&op, &p, &data.y, &cfg)?;
    let summary = json!({
        "n": n,
        "kind": args.precond.kind.name(),
        "iterations": rep.iterations,
        "equivalent_matvecs": rep.equivalent_matvecs,
        "setup_matvecs": p.setup_cost(),
        "final_residual_norm2": rep.final_residual_norm2,
        "converged": rep.converged,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(out) = args.out {
        let mut w = BufWriter::new(File::create(&out)?);
        for v in &rep.x {
            writeln!(w, "{v:.16e}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> Result<()> {
    let data = load(&args.data)?;
    let mut grid = compare::ExperimentGrid::new(args.log10_l.clone(), args.log10_lambda.clone())?;
    grid.cap = args.cap;
    let kinds = if args.kinds.is_empty() { PreconditionerKind::ALL.to_vec() } else { args.kinds.clone() };
    // δ given on the command line is absolute; the harness varies λ, so it is
    // passed through as a multiple of each cell's λ only when not overridden.
    if args.precond.delta.is_some() {
        bail!("--delta is not supported by compare; the offset is 100λ per cell");
    }
    let params = args.precond.overridden().then(|| args.precond.params(data.n(), 1.0));
    let rows = compare::precond_comparison(&data, &grid, &kinds, params.as_ref(), args.seed)?;
    compare::write_comparison(&rows, &args.out)?;
    for r in &rows {
        eprintln!(
            "l={:<8.3} lambda={:<8.1e} {:<12} cg={:<7} pcg={:<10.1} gain={:+.3}",
            r.lengthscale, r.lambda, r.kind.name(), r.cg_iters, r.pcg_equivalent_matvecs, r.gain
        );
    }
    Ok(())
}

fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn train(args: TrainArgs) -> Result<()> {
    let data = load(&args.data)?;
    if args.folds == 0 {
        bail!("--folds must be at least 1");
    }
    let task = match args.task {
        TaskArg::Regression => Task::Regression,
        TaskArg::Classification => Task::Classification,
    };
    let method = match args.method {
        MethodArg::Pcg => Method::Pcg,
        MethodArg::Cg => Method::Cg,
        MethodArg::Chol => Method::Chol,
    };
    let mut runs = Vec::with_capacity(args.folds);
    let mut folds_meta = Vec::new();
    for fold in 0..args.folds {
        let mut cfg = TrackConfig::new(task, method);
        cfg.kind = args.precond.kind;
        cfg.steps = args.steps;
        cfg.schedule = args.schedule;
        cfg.nr = args.nr;
        cfg.step_size = args.step_size;
        cfg.seed = args.seed.wrapping_add(fold as u64);
        if args.precond.overridden() {
            let n_train = data.n() - ((data.n() as f64).sqrt().round() as usize).max(1);
            cfg.params = Some(args.precond.params(n_train, 1.0));
        }
        let res = training::train_and_track(&data, &cfg)?;
        folds_meta.push(json!({
            "seed": cfg.seed,
            "initial": spec_json(&res.initial),
            "trained": spec_json(&res.trained),
            "train_size": res.train_size,
            "test_size": res.test_size,
            "unconverged_steps": res.unconverged_steps,
        }));
        runs.push(res.records);
    }
    let records = training::average_folds(&runs)?;
    training::emit_report(&records, &args.out)?;

    let metric = match task {
        Task::Regression => "rmse",
        Task::Classification => "error_rate",
    };
    let mut meta = json!({
        "task": format!("{task:?}").to_lowercase(),
        "method": method.tag(),
        "kind": args.precond.kind.name(),
        "metric": metric,
        "folds": folds_meta,
        "initial": folds_meta[0]["initial"].clone(),
        "trained": folds_meta[0]["trained"].clone(),
    });
    if method == Method::Chol {
        meta["note"] = json!("CHOL uses exact Cholesky gradients with the same ADAGRAD optimizer, not L-BFGS");
    }
    std::fs::write(meta_path(&args.out), serde_json::to_string_pretty(&meta)? + "\n")?;
    if let Some(last) = records.last() {
        eprintln!("{} after {} steps: {metric}={:.6} nll={:.6}", method.tag(), last.iteration, last.metric, last.nll);
    }
    Ok(())
}

fn predict_cmd(args: PredictArgs) -> Result<()> {
    let data = load(&args.data)?;
    let spec = args.kernel.spec()?;
    spec.validate(data.d())?;
    let test = if args.labelled {
        let l = training::load_csv(&args.test, false)?;
        (l.data.x, Some(l.data.y))
    } else {
        // Append a dummy label column so the loader's layout rules apply.
        let raw = std::fs::read_to_string(&args.test)?;
        let padded: String = raw.lines().map(|l| if l.trim().is_empty() { String::new() } else { format!("{l},0\n") }).collect();
        (training::parse_csv(padded.as_bytes(), false)?.data.x, None)
    };
    let (x_star, y_star) = test;
    if let Some(s) = training::load_csv(&args.data.data, args.data.standardize)?.standardizer {
        let mut xs = x_star.clone();
        s.apply(&mut xs)?;
        return finish_predict(&args, &data, &spec, &xs, y_star.as_deref());
    }
    finish_predict(&args, &data, &spec, &x_star, y_star.as_deref())
}

fn finish_predict(args: &PredictArgs, data: &Dataset, spec: &KernelSpec, x_star: &kpcg::linalg::Matrix, y_star: Option<&[f64]>) -> Result<()> {
    let n = data.n();
    let setup = PcgSetup::pcg(args.precond.kind).with_params(args.precond.params(n, spec.noise()));
    let mut w = BufWriter::new(File::create(&args.out)?);
    match args.task {
        TaskArg::Regression => {
            let batch = if args.exact {
                regression::predict_exact(spec, data, x_star, true)?
            } else {
                regression::predict(spec, data, x_star, &setup, args.seed, true)?
            };
            writeln!(w, "mean,variance")?;
            for p in &batch.predictions {
                writeln!(w, "{:.16e},{:.16e}", p.mean, p.variance)?;
            }
            if let Some(y) = y_star {
                let (rmse, nll) = regression::test_metrics(&batch.predictions, y)?;
                eprintln!("rmse={rmse:.6} nll={nll:.6}");
            }
        }
        TaskArg::Classification => {
            data.require_binary()?;
            let newton = NewtonConfig::default();
            let batch = if args.exact {
                let st = classification::laplace_fit_exact(spec, data, &newton)?;
                classification::predict_class_exact(spec, data, &st, x_star)?
            } else {
                let st = classification::laplace_fit(spec, data, &setup, &newton, args.seed)?;
                classification::predict_class(spec, data, &st, x_star, &setup, args.seed)?
            };
            writeln!(w, "probability,mean,variance")?;
            for ((p, m), v) in batch.probabilities.iter().zip(&batch.means).zip(&batch.variances) {
                writeln!(w, "{p:.16e},{m:.16e},{v:.16e}")?;
            }
            if let Some(y) = y_star {
                let err = classification::error_rate(&batch.probabilities, y)?;
                let nll = classification::class_nll(&batch.probabilities, y)?;
                eprintln!("error_rate={err:.6} nll={nll:.6}");
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    let data = match args.task {
        TaskArg::Regression => {
            let spec = KernelSpec::iso(args.sigma2, args.lengthscale, args.noise);
            synth::gp_regression(args.n, args.d, &spec, args.seed)?
        }
        TaskArg::Classification => synth::gp_classification(args.n, args.d, args.lengthscale, args.flip, args.seed)?,
    };
    training::write_csv(&args.out, &data)?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve(a) => solve(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}
