//! Command line driver: single solves, convergence studies, local solver
//! comparison, throughput measurement and the oracle cross-check suite.
//!
//! Exit code 0 on success, 1 on any solver or verification failure, 2 on
//! invalid arguments.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stokes_mg::harness::{self, ManufacturedSolution, PerfConfig, StudyConfig, StudyTable};
use stokes_mg::{Coloring, Error, Execution, LocalSolverKind, MultigridConfig, Precision, SolveReport, SolverConfig};

#[derive(Parser)]
#[command(name = "stokes-mg", version, about = "Matrix-free multigrid for Stokes with Raviart-Thomas elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the manufactured problem once and report iterations and errors.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Raviart-Thomas index k ≥ 1; pressure is discontinuous of degree k.
        #[arg(long)]
        degree: usize,
        /// Refinement level; level ℓ has 2^(ℓ+1) cells per direction.
        #[arg(long)]
        level: usize,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve over ranges of degrees and levels; writes CSV and a JSON twin.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Inclusive degree range `A..B` or a single degree.
        #[arg(long, value_parser = parse_range)]
        degree_range: Span,
        /// Inclusive level range `A..B` or a single level.
        #[arg(long, value_parser = parse_range)]
        level_range: Span,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every level with both local solvers.
    CompareLocalSolvers {
        #[command(flatten)]
        common: Common,
        /// Raviart-Thomas index k ≥ 1; pressure is discontinuous of degree k.
        #[arg(long)]
        degree: usize,
        #[arg(long, value_parser = parse_range)]
        level_range: Span,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median throughput of apply, smoothing, V-cycle and solve.
    Perf {
        #[command(flatten)]
        common: Common,
        /// Raviart-Thomas index k ≥ 1; pressure is discontinuous of degree k.
        #[arg(long)]
        degree: usize,
        /// Refinement level; level ℓ has 2^(ℓ+1) cells per direction.
        #[arg(long)]
        level: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check the fast kernels against dense oracles.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Spatial dimension, 2 or 3.
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
    dim: u8,
    #[arg(long, value_enum, default_value_t = LocalArg::Schur)]
    local_solver: LocalArg,
    #[arg(long, value_enum, default_value_t = PrecisionArg::Double)]
    precision: PrecisionArg,
    #[arg(long, value_enum, default_value_t = ColoringArg::Parity)]
    coloring: ColoringArg,
    /// Relative residual reduction of the outer FGMRES iteration.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = ManufacturedSolution::DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = ManufacturedSolution::DEFAULT_MU)]
    mu: f64,
    /// Worker threads; 1 runs every loop serially.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum LocalArg {
    Schur,
    Direct,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Double,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ColoringArg {
    Parity,
    Separated,
}

impl Common {
    fn dim(&self) -> usize {
        usize::from(self.dim)
    }

    fn multigrid(&self) -> MultigridConfig {
        MultigridConfig {
            local_solver: match self.local_solver {
                LocalArg::Schur => LocalSolverKind::Schur,
                LocalArg::Direct => LocalSolverKind::Direct,
            },
            coloring: match self.coloring {
                ColoringArg::Parity => Coloring::Parity,
                ColoringArg::Separated => Coloring::Separated,
            },
            execution: if self.threads > 1 {
                Execution::Parallel
            } else {
                Execution::Serial
            },
        }
    }

    fn precision(&self) -> Precision {
        match self.precision {
            PrecisionArg::Double => Precision::Double,
            PrecisionArg::Mixed => Precision::Mixed,
        }
    }

    fn solver(&self, degree: usize, level: usize) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            precision: self.precision(),
            multigrid: self.multigrid(),
            ..SolverConfig::new(self.dim(), degree, level)
        }
    }

    fn study(&self, degrees: Vec<usize>, levels: Vec<usize>) -> StudyConfig {
        StudyConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            precision: self.precision(),
            multigrid: self.multigrid(),
            sigma: self.sigma,
            mu: self.mu,
            ..StudyConfig::new(self.dim(), degrees, levels)
        }
    }

    fn init_threads(&self) -> Result<(), Error> {
        if self.threads == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Values of an inclusive range argument.
#[derive(Clone, Debug)]
struct Span(Vec<usize>);

/// `A..B` (inclusive) or a single number.
fn parse_range(s: &str) -> Result<Span, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let b = b.strip_prefix('=').unwrap_or(b);
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(format!("empty range {s}"));
            }
            Ok(Span((a..=b).collect()))
        }
        None => Ok(Span(vec![num(s)?])),
    }
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$e}"))
}

fn print_report(r: &SolveReport) {
    println!(
        "dim {} k {} level {} dofs {} iterations {} nu {} err_u {} err_p {} div {} local_cg {} time {:.2}s{}",
        r.dim,
        r.degree,
        r.level,
        r.dofs,
        r.iterations,
        r.nu.map_or_else(|| "-".into(), |v| format!("{v:.2}")),
        fmt_opt(r.err_u, 3),
        fmt_opt(r.err_p, 3),
        fmt_opt(r.divergence_ratio, 1),
        r.avg_local_cg_iterations.map_or_else(|| "-".into(), |v| format!("{v:.1}")),
        r.timings.total_s,
        if r.converged { "" } else { "  NOT CONVERGED" }
    );
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(contents.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn write_table(table: &StudyTable, out: &Path) -> Result<(), Error> {
    table.write_csv(BufWriter::new(File::create(out)?))?;
    write_file(&out.with_extension("json"), &table.to_json()?)?;
    eprintln!("wrote {} and {}", out.display(), out.with_extension("json").display());
    Ok(())
}

fn finish_table(table: &StudyTable) -> ExitCode {
    for f in &table.failures {
        eprintln!("failed: {f}");
    }
    if table.all_converged() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Solve {
            common,
            degree,
            level,
            out,
        } => {
            common.init_threads()?;
            let ms = ManufacturedSolution::new(common.dim(), common.sigma, common.mu)?;
            let mut report = match harness::solve_manufactured(&common.solver(degree, level), &ms) {
                Ok(sol) => sol.report,
                Err(Error::NotConverged(r)) => *r,
                Err(e) => return Err(e),
            };
            report.seed = common.seed;
            print_report(&report);
            if let Some(path) = out {
                write_file(&path, &serde_json::to_string_pretty(&report)?)?;
            }
            Ok(if report.converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Convergence {
            common,
            degree_range,
            level_range,
            out,
        } => {
            common.init_threads()?;
            let (degrees, levels) = (degree_range.0, level_range.0);
            let table = harness::run_convergence_study_with(&common.study(degrees, levels), print_report)?;
            for o in harness::observed_orders(&table.rows) {
                println!(
                    "k {} level {}: order u {:.2} order p {:.2}",
                    o.degree, o.level, o.order_u, o.order_p
                );
            }
            write_table(&table, &out)?;
            Ok(finish_table(&table))
        }
        Command::CompareLocalSolvers {
            common,
            degree,
            level_range,
            out,
        } => {
            common.init_threads()?;
            let levels = level_range.0;
            let table = harness::compare_local_solvers(&common.study(vec![degree], levels), |r| {
                print!("{:>6}: ", r.local_solver);
                print_report(r);
            })?;
            write_table(&table, &out)?;
            Ok(finish_table(&table))
        }
        Command::Perf {
            common,
            degree,
            level,
            reps,
            warmup,
            out,
        } => {
            common.init_threads()?;
            let cfg = PerfConfig {
                reps,
                warmup,
                precision: common.precision(),
                multigrid: common.multigrid(),
                seed: common.seed,
                ..PerfConfig::new(common.dim(), degree, level)
            };
            let r = harness::perf_report(&cfg)?;
            println!("dofs {} threads {} solve iterations {}", r.dofs, r.threads, r.solve_iterations);
            for k in [&r.apply, &r.smoothing]
                .into_iter()
                .chain(&r.smoothing_colors)
                .chain([&r.vcycle, &r.solve])
            {
                println!(
                    "{:<20} {:>12.1} ns/DoF {:>12.3e} DoF/s",
                    k.name, k.ns_per_dof, k.dofs_per_s
                );
            }
            if let Some(path) = out {
                write_file(&path, &r.to_json()?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { seed } => {
            let checks = harness::verify(seed);
            for c in &checks {
                println!("{c}");
            }
            Ok(if checks.iter().all(|c| c.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e @ Error::InvalidArgument(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse_inclusive() {
        assert_eq!(parse_range("3..5").unwrap().0, vec![3, 4, 5]);
        assert_eq!(parse_range("3..=4").unwrap().0, vec![3, 4]);
        assert_eq!(parse_range("2").unwrap().0, vec![2]);
        assert!(parse_range("5..3").is_err());
        assert!(parse_range("a..3").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn dimension_outside_two_and_three_is_rejected() {
        let r = Cli::try_parse_from(["stokes-mg", "solve", "--dim", "4", "--degree", "1", "--level", "1"]);
        assert!(r.is_err());
    }
}
