//! Experiment drivers: convergence studies on the manufactured problem,
//! local solver comparison and throughput measurement.
//!
//! Drivers run configurations one after another; each solve uses the inner
//! parallelism selected in its multigrid configuration.

use std::io::{Read, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::fields::{assemble_rhs, divergence_norm, l2_error};
use crate::harness::manufactured::ManufacturedSolution;
use crate::local_solver::LocalSolverKind;
use crate::mesh::Level;
use crate::multigrid::{Multigrid, MultigridConfig};
use crate::scalar::Real;
use crate::solver::{solve, Precision, Solution, SolveReport, SolverConfig};
use crate::space::DofLayout;

/// Solves the manufactured problem and fills errors, divergence and the
/// problem parameters into the report.
pub fn solve_manufactured(config: &SolverConfig, ms: &ManufacturedSolution) -> Result<Solution> {
    if ms.dim != config.dim {
        return Err(Error::invalid(format!(
            "manufactured solution is {}-dimensional, solver is {}-dimensional",
            ms.dim, config.dim
        )));
    }
    let lay = DofLayout::new(&Level::new(config.dim, config.level), config.degree)?;
    let rhs = assemble_rhs(&lay, ms);
    let stamp = |r: &mut SolveReport| {
        r.sigma = ms.sigma;
        r.mu = ms.mu;
    };
    let mut sol = match solve(config, rhs.as_slice()) {
        Ok(s) => s,
        Err(Error::NotConverged(mut r)) => {
            stamp(&mut r);
            return Err(Error::NotConverged(r));
        }
        Err(e) => return Err(e),
    };
    stamp(&mut sol.report);
    let (eu, ep) = l2_error(&lay, &sol.x, ms);
    let (div, un) = divergence_norm(&lay, &sol.x);
    sol.report.err_u = Some(eu);
    sol.report.err_p = Some(ep);
    sol.report.divergence_ratio = (un > 0.0).then(|| div / un);
    Ok(sol)
}

/// One line of a study table; the column order is part of the output format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub dim: usize,
    pub degree: usize,
    pub level: usize,
    pub dofs: usize,
    pub iterations: usize,
    pub nu: Option<f64>,
    pub err_u: Option<f64>,
    pub err_p: Option<f64>,
    pub time_total_s: f64,
    pub dofs_per_s: f64,
    pub precision: String,
    pub local_solver: String,
}

impl From<&SolveReport> for StudyRow {
    fn from(r: &SolveReport) -> Self {
        Self {
            dim: r.dim,
            degree: r.degree,
            level: r.level,
            dofs: r.dofs,
            iterations: r.iterations,
            nu: r.nu,
            err_u: r.err_u,
            err_p: r.err_p,
            time_total_s: r.timings.total_s,
            dofs_per_s: r.dofs_per_s,
            precision: r.precision.clone(),
            local_solver: r.local_solver.clone(),
        }
    }
}

/// Rows for the CSV table and full reports for JSON, in run order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
    pub reports: Vec<SolveReport>,
    /// Messages of runs that failed for reasons other than non-convergence.
    pub failures: Vec<String>,
}

impl StudyTable {
    fn push(&mut self, report: SolveReport) {
        self.rows.push(StudyRow::from(&report));
        self.reports.push(report);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows_csv(&self.rows, out)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Whether every recorded run converged and none failed.
    pub fn all_converged(&self) -> bool {
        self.failures.is_empty() && self.reports.iter().all(|r| r.converged)
    }
}

pub fn write_rows_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<StudyRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Degrees and levels of a study with the shared solver options.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub dim: usize,
    pub degrees: Vec<usize>,
    pub levels: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub precision: Precision,
    pub multigrid: MultigridConfig,
    pub sigma: f64,
    pub mu: f64,
}

impl StudyConfig {
    pub fn new(dim: usize, degrees: Vec<usize>, levels: Vec<usize>) -> Self {
        let base = SolverConfig::new(dim, 1, 0);
        Self {
            dim,
            degrees,
            levels,
            tol: base.tol,
            max_iter: base.max_iter,
            precision: base.precision,
            multigrid: base.multigrid,
            sigma: ManufacturedSolution::DEFAULT_SIGMA,
            mu: ManufacturedSolution::DEFAULT_MU,
        }
    }

    pub fn solver_config(&self, degree: usize, level: usize) -> SolverConfig {
        SolverConfig {
            dim: self.dim,
            degree,
            level,
            tol: self.tol,
            max_iter: self.max_iter,
            precision: self.precision,
            multigrid: self.multigrid,
        }
    }

    fn manufactured(&self) -> Result<ManufacturedSolution> {
        ManufacturedSolution::new(self.dim, self.sigma, self.mu)
    }
}

/// Runs one configuration, turning a failure into a recorded entry.
fn run_cell(table: &mut StudyTable, config: &SolverConfig, ms: &ManufacturedSolution) -> SolveReport {
    let report = match solve_manufactured(config, ms) {
        Ok(sol) => sol.report,
        Err(Error::NotConverged(r)) => *r,
        Err(e) => {
            table.failures.push(format!(
                "dim {} degree {} level {}: {e}",
                config.dim, config.degree, config.level
            ));
            SolveReport {
                dim: config.dim,
                degree: config.degree,
                level: config.level,
                precision: config.precision.name().to_string(),
                local_solver: config.multigrid.local_solver.name().to_string(),
                tol: config.tol,
                sigma: ms.sigma,
                mu: ms.mu,
                ..SolveReport::default()
            }
        }
    };
    table.push(report.clone());
    report
}

/// Every (degree, level) pair of `config`, degrees outermost.
pub fn run_convergence_study(config: &StudyConfig) -> Result<StudyTable> {
    run_convergence_study_with(config, |_| {})
}

/// [`run_convergence_study`] calling `progress` after every run.
pub fn run_convergence_study_with(
    config: &StudyConfig,
    mut progress: impl FnMut(&SolveReport),
) -> Result<StudyTable> {
    let ms = config.manufactured()?;
    let mut table = StudyTable::default();
    for &k in &config.degrees {
        for &l in &config.levels {
            let report = run_cell(&mut table, &config.solver_config(k, l), &ms);
            progress(&report);
        }
    }
    Ok(table)
}

/// The study of `config` once per local solver, interleaved per level.
pub fn compare_local_solvers(
    config: &StudyConfig,
    mut progress: impl FnMut(&SolveReport),
) -> Result<StudyTable> {
    let ms = config.manufactured()?;
    let mut table = StudyTable::default();
    for &k in &config.degrees {
        for &l in &config.levels {
            for kind in [LocalSolverKind::Schur, LocalSolverKind::Direct] {
                let mut sc = config.solver_config(k, l);
                sc.multigrid.local_solver = kind;
                let report = run_cell(&mut table, &sc, &ms);
                progress(&report);
            }
        }
    }
    Ok(table)
}

/// Observed `L²` order between two consecutive levels of one degree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedOrder {
    pub degree: usize,
    /// The finer of the two levels.
    pub level: usize,
    pub order_u: f64,
    pub order_p: f64,
}

/// `log₂(e_{ℓ−1}/e_ℓ)` for every pair of rows with equal degree and
/// consecutive levels where both errors are known.
pub fn observed_orders(rows: &[StudyRow]) -> Vec<ObservedOrder> {
    let mut out = Vec::new();
    for fine in rows {
        let coarse = rows
            .iter()
            .find(|r| r.degree == fine.degree && r.dim == fine.dim && r.level + 1 == fine.level);
        if let (Some(c), Some(fu), Some(fp)) = (coarse, fine.err_u, fine.err_p) {
            if let (Some(cu), Some(cp)) = (c.err_u, c.err_p) {
                out.push(ObservedOrder {
                    degree: fine.degree,
                    level: fine.level,
                    order_u: (cu / fu).log2(),
                    order_p: (cp / fp).log2(),
                });
            }
        }
    }
    out
}

/// Options of [`perf_report`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerfConfig {
    pub dim: usize,
    pub degree: usize,
    pub level: usize,
    pub reps: usize,
    pub warmup: usize,
    pub precision: Precision,
    pub multigrid: MultigridConfig,
    pub seed: u64,
}

impl PerfConfig {
    pub fn new(dim: usize, degree: usize, level: usize) -> Self {
        Self {
            dim,
            degree,
            level,
            reps: 5,
            warmup: 1,
            precision: Precision::Double,
            multigrid: MultigridConfig::default(),
            seed: 0,
        }
    }
}

/// Median wall-clock time of one kernel and the derived throughput.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelTiming {
    pub name: String,
    pub median_s: f64,
    /// Total DoF × repetitions / elapsed, the elapsed time being the median
    /// repetition times the repetition count.
    pub dofs_per_s: f64,
    pub ns_per_dof: f64,
}

impl KernelTiming {
    fn new(name: impl Into<String>, dofs: usize, samples: &mut [f64]) -> Self {
        let median_s = median(samples);
        Self {
            name: name.into(),
            median_s,
            dofs_per_s: dofs as f64 / median_s.max(f64::MIN_POSITIVE),
            ns_per_dof: median_s * 1e9 / dofs as f64,
        }
    }
}

fn median(samples: &mut [f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Throughput of the main kernels on the finest level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub dim: usize,
    pub degree: usize,
    pub level: usize,
    pub dofs: usize,
    pub reps: usize,
    pub warmup: usize,
    pub threads: usize,
    pub precision: String,
    pub local_solver: String,
    pub apply: KernelTiming,
    /// One full smoothing sweep.
    pub smoothing: KernelTiming,
    /// Each color of the sweep, residual update included.
    pub smoothing_colors: Vec<KernelTiming>,
    pub vcycle: KernelTiming,
    /// Full preconditioned solve of the manufactured problem, setup excluded.
    pub solve: KernelTiming,
    pub solve_iterations: usize,
}

impl PerfReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Measures operator apply, smoothing sweep (total and per color), V-cycle
/// and full solve with `warmup` discarded and `reps` timed repetitions.
pub fn perf_report(config: &PerfConfig) -> Result<PerfReport> {
    match config.precision {
        Precision::Double => perf_impl::<f64>(config),
        Precision::Mixed => perf_impl::<f32>(config),
    }
}

fn perf_impl<T: Real>(config: &PerfConfig) -> Result<PerfReport> {
    if config.reps == 0 {
        return Err(Error::invalid("at least one timed repetition is required"));
    }
    if config.level == 0 {
        return Err(Error::invalid("level 0 has no smoother; use level ≥ 1"));
    }
    let mg = Multigrid::<T>::new(config.dim, config.degree, config.level, config.multigrid)?;
    let op = mg.fine_operator();
    let n = op.layout.n_dofs();
    let mode = config.multigrid.execution;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut b: Vec<T> = (0..n).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect();
    op.layout.project_zero_mean(&mut b[op.layout.pressure_range()]);
    let mut y = vec![T::zero(); n];
    let total = config.warmup + config.reps;

    let mut apply = Vec::new();
    for i in 0..total {
        let t = Instant::now();
        op.apply(&b, &mut y, mode)?;
        if i >= config.warmup {
            apply.push(t.elapsed().as_secs_f64());
        }
    }

    let sm = mg.smoother(config.level).expect("levels above 0 smooth");
    let mut sweep = Vec::new();
    let mut per_color: Vec<Vec<f64>> = vec![Vec::new(); sm.n_colors()];
    for i in 0..total {
        let t = Instant::now();
        let (_, times) = sm.smooth_timed(op, &mut y, &b, true, mode)?;
        if i >= config.warmup {
            sweep.push(t.elapsed().as_secs_f64());
            for (c, s) in times.into_iter().enumerate() {
                per_color[c].push(s);
            }
        }
    }

    let mut vcycle = Vec::new();
    for i in 0..total {
        let t = Instant::now();
        mg.vcycle(&b, &mut y)?;
        if i >= config.warmup {
            vcycle.push(t.elapsed().as_secs_f64());
        }
    }
    drop(mg);

    let ms = ManufacturedSolution::with_defaults(config.dim)?;
    let sc = SolverConfig {
        precision: config.precision,
        multigrid: config.multigrid,
        ..SolverConfig::new(config.dim, config.degree, config.level)
    };
    let lay = DofLayout::new(&Level::new(config.dim, config.level), config.degree)?;
    let rhs = assemble_rhs(&lay, &ms);
    let mut solve_times = Vec::new();
    let mut iterations = 0;
    for i in 0..total {
        let sol = solve(&sc, rhs.as_slice())?;
        iterations = sol.report.iterations;
        if i >= config.warmup {
            solve_times.push(sol.report.timings.solve_s);
        }
    }

    Ok(PerfReport {
        dim: config.dim,
        degree: config.degree,
        level: config.level,
        dofs: n,
        reps: config.reps,
        warmup: config.warmup,
        threads: rayon::current_num_threads(),
        precision: config.precision.name().to_string(),
        local_solver: config.multigrid.local_solver.name().to_string(),
        apply: KernelTiming::new("apply", n, &mut apply),
        smoothing: KernelTiming::new("smoothing", n, &mut sweep),
        smoothing_colors: per_color
            .iter_mut()
            .enumerate()
            .map(|(c, s)| KernelTiming::new(format!("smoothing color {c}"), n, s))
            .collect(),
        vcycle: KernelTiming::new("vcycle", n, &mut vcycle),
        solve: KernelTiming::new("solve", n, &mut solve_times),
        solve_iterations: iterations,
    })
}

/// Median operator apply cost in ns per DoF for each degree at a fixed mesh.
pub fn apply_cost_by_degree(
    dim: usize,
    level: usize,
    degrees: &[usize],
    reps: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for &k in degrees {
        let op = crate::stokes_op::operator_for::<f64>(&Level::new(dim, level), k)?;
        let n = op.layout.n_dofs();
        let x: Vec<f64> = (0..n).map(|i| (0.37 * i as f64).sin()).collect();
        let mut y = vec![0.0; n];
        op.apply(&x, &mut y, crate::stokes_op::Execution::Serial)?;
        let mut times: Vec<f64> = (0..reps.max(1))
            .map(|_| {
                let t = Instant::now();
                op.apply(&x, &mut y, crate::stokes_op::Execution::Serial)
                    .map(|_| t.elapsed().as_secs_f64())
            })
            .collect::<Result<_>>()?;
        out.push((k, median(&mut times) * 1e9 / n as f64));
    }
    Ok(out)
}

/// Apply cost per DoF grows no faster than linearly in `k+1`, with `slack`:
/// `c_k / c_{k₀} ≤ slack · (k+1)/(k₀+1)` against the lowest degree `k₀`.
pub fn apply_cost_is_linear_in_degree(costs: &[(usize, f64)], slack: f64) -> bool {
    let Some(&(k0, c0)) = costs.iter().min_by_key(|(k, _)| *k) else {
        return true;
    };
    costs
        .iter()
        .all(|&(k, c)| c / c0 <= slack * (k + 1) as f64 / (k0 + 1) as f64)
}
