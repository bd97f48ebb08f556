//! CG versus PCG on `K_y z = y` over a grid of lengthscales and noise levels.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{gram, Dataset, KernelSpec};
use crate::linalg::ScaledShifted;
use crate::precond::{build, KernelSystem, PrecondParams, PreconditionerKind};
use crate::solvers::{cg_solve, pcg_solve, SolveConfig, DEFAULT_MAX_ITERS};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentGrid {
    pub log10_lengthscales: Vec<f64>,
    pub log10_noises: Vec<f64>,
    pub sigma2: f64,
    pub cap: usize,
}

impl ExperimentGrid {
    pub fn new(log10_lengthscales: Vec<f64>, log10_noises: Vec<f64>) -> Result<Self> {
        if log10_lengthscales.is_empty() || log10_noises.is_empty() {
            return Err(Error::InvalidSpec("experiment grid axes must be non-empty".into()));
        }
        Ok(Self {
            log10_lengthscales,
            log10_noises,
            sigma2: 1.0,
            cap: DEFAULT_MAX_ITERS,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub lengthscale: f64,
    pub lambda: f64,
    pub kind: PreconditionerKind,
    pub cg_iters: usize,
    pub pcg_iters: usize,
    pub pcg_equivalent_matvecs: f64,
    /// `log10(pcg_equivalent_matvecs / cg_iters)`, 0 when both hit the cap.
    pub gain: f64,
    pub cg_converged: bool,
    pub pcg_converged: bool,
}

/// `log10(pcg / cg)`, or 0 when neither solver converged.
pub fn gain(cg_iters: usize, cg_converged: bool, pcg_matvecs: f64, pcg_converged: bool) -> f64 {
    if (!cg_converged && !pcg_converged) || cg_iters == 0 || pcg_matvecs <= 0.0 {
        0.0
    } else {
        (pcg_matvecs / cg_iters as f64).log10()
    }
}

/// Runs every cell with `ε² = n·10⁻¹⁰`. Preconditioner parameters default
/// to the `O(n^{3/2})` budgets. Cells are processed concurrently; rows come
/// back in grid order, then in `kinds` order.
pub fn precond_comparison(
    data: &Dataset,
    grid: &ExperimentGrid,
    kinds: &[PreconditionerKind],
    params: Option<&PrecondParams>,
    seed: u64,
) -> Result<Vec<CompareRow>> {
    let n = data.n();
    let cfg = SolveConfig::new(n as f64 * 1e-10, grid.cap)?;
    let params = params.cloned().unwrap_or_else(|| PrecondParams::for_dim(n));
    let cells: Vec<(f64, f64)> = grid
        .log10_lengthscales
        .iter()
        .flat_map(|&l| grid.log10_noises.iter().map(move |&s| (10f64.powf(l), 10f64.powf(s))))
        .collect();

    let per_cell = cells
        .par_iter()
        .map(|&(l, lambda)| -> Result<Vec<CompareRow>> {
            let spec = KernelSpec::iso(grid.sigma2, l, lambda);
            let k = gram(&spec, &data.x, false);
            let op = ScaledShifted::shifted(&k, lambda);
            let cg = cg_solve(&op, &data.y, &cfg)?;
            let system = KernelSystem::regression(&spec, &data.x).with_gram(&k);
            kinds
                .iter()
                .map(|&kind| {
                    let p = build(kind, &system, &params, seed)?;
                    let rep = pcg_solve(&op, &p, &data.y, &cfg)?;
                    Ok(CompareRow {
                        lengthscale: l,
                        lambda,
                        kind,
                        cg_iters: cg.iterations,
                        pcg_iters: rep.iterations,
                        pcg_equivalent_matvecs: rep.equivalent_matvecs,
                        gain: gain(cg.iterations, cg.converged, rep.equivalent_matvecs, rep.converged),
                        cg_converged: cg.converged,
                        pcg_converged: rep.converged,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

pub const COMPARE_HEADER: [&str; 6] = ["l", "lambda", "kind", "cg_iters", "pcg_equivalent_matvecs", "gain"];

pub fn write_comparison_to<W: Write>(rows: &[CompareRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARE_HEADER)?;
    for r in rows {
        w.write_record([
            format!("{:.16e}", r.lengthscale),
            format!("{:.16e}", r.lambda),
            r.kind.name().to_string(),
            r.cg_iters.to_string(),
            format!("{:.16e}", r.pcg_equivalent_matvecs),
            format!("{:.16e}", r.gain),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison(rows: &[CompareRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_comparison_to(rows, &mut out)?;
    out.flush()?;
    Ok(())
}
