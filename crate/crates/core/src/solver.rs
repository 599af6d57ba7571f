//! Krylov solvers, iteration metrics and the multigrid preconditioned solve.

use serde::{Deserialize, Serialize};

use std::time::Instant;

use crate::error::{Error, Result};
use crate::local_solver::LocalSolverKind;
use crate::multigrid::{Multigrid, MultigridConfig};
use crate::scalar::{axpy, dot, Real};
use crate::smoother::SmootherStats;
use crate::space::project_coefficient_mean;
use crate::stokes_op::OperatorContext;

/// Result of a projected conjugate gradient run.
#[derive(Clone, Debug, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// Final `‖r‖ / ‖b‖` of the recursively updated residual.
    pub relative_residual: f64,
}

/// Conjugate gradients for a symmetric positive semidefinite operator whose
/// kernel is removed by `project`. The projection is applied to the right
/// hand side, the initial residual and every search direction. Starts from
/// `x = 0` and overwrites `x`.
pub fn cg<T, A, P>(apply: A, rhs: &[T], x: &mut [T], rel_tol: f64, max_iter: usize, project: P) -> CgOutcome
where
    T: Real,
    A: FnMut(&[T], &mut [T]),
    P: Fn(&mut [T]),
{
    pcg(apply, |r: &[T], z: &mut [T]| z.copy_from_slice(r), rhs, x, rel_tol, max_iter, project)
}

/// [`cg`] with a symmetric positive definite preconditioner. The stopping
/// test uses the unpreconditioned residual, so the tolerance means the same
/// as for [`cg`].
pub fn pcg<T, A, M, P>(
    mut apply: A,
    mut precond: M,
    rhs: &[T],
    x: &mut [T],
    rel_tol: f64,
    max_iter: usize,
    project: P,
) -> CgOutcome
where
    T: Real,
    A: FnMut(&[T], &mut [T]),
    M: FnMut(&[T], &mut [T]),
    P: Fn(&mut [T]),
{
    let n = rhs.len();
    x.fill(T::zero());
    let mut r = rhs.to_vec();
    project(&mut r);
    let bnorm = dot(&r, &r).as_f64().sqrt();
    if bnorm == 0.0 {
        return CgOutcome {
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
        };
    }
    let mut z = vec![T::zero(); n];
    precond(&r, &mut z);
    project(&mut z);
    let mut p = z.clone();
    let mut q = vec![T::zero(); n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        apply(&p, &mut q);
        project(&mut q);
        let pq = dot(&p, &q);
        if !(pq.as_f64() > 0.0) {
            project(x);
            return CgOutcome {
                iterations: it - 1,
                converged: false,
                relative_residual: rel,
            };
        }
        let alpha = rz / pq;
        axpy(alpha, &p, x);
        axpy(-alpha, &q, &mut r);
        rel = dot(&r, &r).as_f64().sqrt() / bnorm;
        if rel <= rel_tol {
            project(x);
            return CgOutcome {
                iterations: it,
                converged: true,
                relative_residual: rel,
            };
        }
        precond(&r, &mut z);
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, &zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    project(x);
    CgOutcome {
        iterations: max_iter,
        converged: false,
        relative_residual: rel,
    }
}

/// Smallest relative tolerance that CG can reach in the precision `T`.
pub fn cg_tolerance_floor<T: Real>() -> f64 {
    10.0 * T::epsilon().as_f64()
}

/// Fractional iteration count `ν = −8 / log₁₀ r̄` with
/// `r̄ = (‖r_n‖/‖r₀‖)^{1/n}`: the number of steps a solver with constant
/// contraction `r̄` needs for eight digits.
pub fn fractional_count(history: &[f64], n: usize) -> Result<f64> {
    if n == 0 || n >= history.len() {
        return Err(Error::invalid(format!(
            "iteration index {n} outside a history of length {}",
            history.len()
        )));
    }
    let (r0, rn) = (history[0], history[n]);
    if !(r0 > 0.0) {
        return Err(Error::invalid("initial residual must be positive"));
    }
    if rn == 0.0 {
        return Ok(0.0);
    }
    let log_rbar = (rn / r0).log10() / n as f64;
    Ok(-8.0 / log_rbar)
}

/// Convergence data of one Krylov solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KrylovReport {
    pub iterations: usize,
    /// `‖r₀‖, …, ‖r_n‖`.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl KrylovReport {
    pub fn relative_residual(&self) -> f64 {
        match (self.residuals.first(), self.residuals.last()) {
            (Some(&r0), Some(&rn)) if r0 > 0.0 => rn / r0,
            _ => 0.0,
        }
    }

    pub fn nu(&self) -> Option<f64> {
        fractional_count(&self.residuals, self.iterations).ok()
    }
}

/// Flexible GMRES with right preconditioning, modified Gram–Schmidt with
/// selective reorthogonalization and no restart. Starts from `x = 0`; the
/// residual norms in the report are those of the true (unpreconditioned)
/// residual `b − A x_j`.
pub fn fgmres<A, P>(
    mut apply_a: A,
    mut apply_p: P,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, KrylovReport)>
where
    A: FnMut(&[f64], &mut [f64]) -> Result<()>,
    P: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::invalid(format!("relative tolerance {rel_tol} outside (0, 1)")));
    }
    let n = b.len();
    let mut x = vec![0.0; n];
    let beta = dot(b, b).sqrt();
    let mut report = KrylovReport {
        iterations: 0,
        residuals: vec![beta],
        converged: beta == 0.0,
    };
    if beta == 0.0 {
        return Ok((x, report));
    }
    let mut v: Vec<Vec<f64>> = vec![b.iter().map(|&bi| bi / beta).collect()];
    let mut z: Vec<Vec<f64>> = Vec::new();
    // Hessenberg columns after Givens rotations
    let mut hcols: Vec<Vec<f64>> = Vec::new();
    let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let mut g = vec![beta];
    let mut w = vec![0.0; n];
    for j in 0..max_iter {
        let mut zj = vec![0.0; n];
        apply_p(&v[j], &mut zj)?;
        apply_a(&zj, &mut w)?;
        z.push(zj);
        let mut h = vec![0.0; j + 2];
        let wnorm0 = dot(&w, &w).sqrt();
        for (i, vi) in v.iter().enumerate() {
            h[i] = dot(&w, vi);
            axpy(-h[i], vi, &mut w);
        }
        // second pass only where orthogonality was lost
        let wnorm = dot(&w, &w).sqrt();
        let lost = v.iter().map(|vi| dot(&w, vi).abs()).fold(0.0, f64::max);
        if lost > 1e-10 * wnorm.max(f64::MIN_POSITIVE) {
            for (i, vi) in v.iter().enumerate() {
                let c = dot(&w, vi);
                h[i] += c;
                axpy(-c, vi, &mut w);
            }
        }
        let wnorm = dot(&w, &w).sqrt();
        h[j + 1] = wnorm;
        for i in 0..j {
            let t = cs[i] * h[i] + sn[i] * h[i + 1];
            h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
            h[i] = t;
        }
        let denom = h[j].hypot(h[j + 1]);
        let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (h[j] / denom, h[j + 1] / denom) };
        cs.push(c);
        sn.push(s);
        h[j] = denom;
        h[j + 1] = 0.0;
        g.push(-s * g[j]);
        g[j] *= c;
        hcols.push(h);
        let res = g[j + 1].abs();
        report.iterations = j + 1;
        report.residuals.push(res);
        let breakdown = wnorm <= 1e-14 * wnorm0.max(f64::MIN_POSITIVE);
        if res <= rel_tol * beta || breakdown {
            report.converged = res <= rel_tol * beta;
            break;
        }
        v.push(w.iter().map(|&wi| wi / wnorm).collect());
    }
    // back substitution
    let m = report.iterations;
    let mut y = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = g[i];
        for (k, yk) in y.iter().enumerate().take(m).skip(i + 1) {
            s -= hcols[k][i] * yk;
        }
        y[i] = s / hcols[i][i];
    }
    for (k, yk) in y.iter().enumerate() {
        axpy(*yk, &z[k], &mut x);
    }
    if !report.converged {
        return Err(Error::NotConverged(Box::new(SolveReport {
            iterations: report.iterations,
            residuals: report.residuals.clone(),
            nu: report.nu(),
            ..SolveReport::default()
        })));
    }
    Ok((x, report))
}

/// Wall-clock time per phase in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub setup_s: f64,
    pub solve_s: f64,
    pub total_s: f64,
}

/// Everything recorded about one solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub dim: usize,
    pub degree: usize,
    pub level: usize,
    pub dofs: usize,
    pub precision: String,
    pub local_solver: String,
    pub coloring: String,
    pub tol: f64,
    pub sigma: f64,
    pub mu: f64,
    pub seed: u64,
    pub threads: usize,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub nu: Option<f64>,
    pub converged: bool,
    pub err_u: Option<f64>,
    pub err_p: Option<f64>,
    /// `‖∇·u_h‖ / ‖u_h‖` in `L²`.
    pub divergence_ratio: Option<f64>,
    /// Average inner CG iterations per patch solve (Schur local solver).
    pub avg_local_cg_iterations: Option<f64>,
    pub timings: Timings,
    pub dofs_per_s: f64,
}

/// Arithmetic of the V-cycle. The outer FGMRES iteration is always `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    Double,
    /// V-cycle in `f32`.
    Mixed,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Double => "double",
            Precision::Mixed => "mixed",
        }
    }
}

/// Problem size and solver options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub dim: usize,
    pub degree: usize,
    pub level: usize,
    /// Relative residual reduction of the outer iteration.
    pub tol: f64,
    pub max_iter: usize,
    pub precision: Precision,
    pub multigrid: MultigridConfig,
}

impl SolverConfig {
    pub fn new(dim: usize, degree: usize, level: usize) -> Self {
        Self {
            dim,
            degree,
            level,
            tol: 1e-8,
            max_iter: 100,
            precision: Precision::Double,
            multigrid: MultigridConfig::default(),
        }
    }
}

/// Coefficients of the discrete solution with the solve report.
#[derive(Clone, Debug)]
pub struct Solution {
    pub x: Vec<f64>,
    pub report: SolveReport,
}

/// Solves `𝒜x = b` by FGMRES preconditioned with one V-cycle per iteration.
/// The pressure part of `x` has zero coefficient mean.
pub fn solve(config: &SolverConfig, rhs: &[f64]) -> Result<Solution> {
    match config.precision {
        Precision::Double => run::<f64>(config, rhs),
        Precision::Mixed => run::<f32>(config, rhs),
    }
}

/// [`solve`] with the V-cycle in single precision.
pub fn solve_mixed(config: &SolverConfig, rhs: &[f64]) -> Result<Solution> {
    run::<f32>(config, rhs)
}

fn run<T: Real>(config: &SolverConfig, rhs: &[f64]) -> Result<Solution> {
    let start = Instant::now();
    let mg = Multigrid::<T>::new(config.dim, config.degree, config.level, config.multigrid)?;
    // outer operator in f64; the context only holds 1D tables
    let op = OperatorContext::<f64>::new(mg.fine_operator().layout.clone())?;
    let lay = &op.layout;
    if rhs.len() != lay.n_dofs() {
        return Err(Error::DimensionMismatch {
            expected: lay.n_dofs(),
            found: rhs.len(),
        });
    }
    let setup_s = start.elapsed().as_secs_f64();
    let mode = config.multigrid.execution;
    let mut stats = SmootherStats::default();
    let mut r_t = vec![T::zero(); rhs.len()];
    let mut z_t = vec![T::zero(); rhs.len()];
    let solve_start = Instant::now();
    let result = fgmres(
        |x, y| op.apply(x, y, mode),
        |v, z| {
            for (a, &b) in r_t.iter_mut().zip(v) {
                *a = T::of(b);
            }
            stats.add(mg.vcycle(&r_t, &mut z_t)?);
            for (a, &b) in z.iter_mut().zip(&z_t) {
                *a = b.as_f64();
            }
            Ok(())
        },
        rhs,
        config.tol,
        config.max_iter,
    );
    let solve_s = solve_start.elapsed().as_secs_f64();
    let (x, kr) = match result {
        Ok((x, kr)) => (Some(x), kr),
        Err(Error::NotConverged(partial)) => (
            None,
            KrylovReport {
                iterations: partial.iterations,
                residuals: partial.residuals,
                converged: false,
            },
        ),
        Err(e) => return Err(e),
    };
    let report = SolveReport {
        dim: config.dim,
        degree: config.degree,
        level: config.level,
        dofs: lay.n_dofs(),
        precision: config.precision.name().to_string(),
        local_solver: config.multigrid.local_solver.name().to_string(),
        coloring: format!("{:?}", config.multigrid.coloring).to_lowercase(),
        tol: config.tol,
        threads: rayon::current_num_threads(),
        iterations: kr.iterations,
        nu: kr.nu(),
        converged: kr.converged,
        residuals: kr.residuals,
        avg_local_cg_iterations: match config.multigrid.local_solver {
            LocalSolverKind::Schur => stats.average_cg_iterations(),
            LocalSolverKind::Direct => None,
        },
        timings: Timings {
            setup_s,
            solve_s,
            total_s: start.elapsed().as_secs_f64(),
        },
        dofs_per_s: lay.n_dofs() as f64 / solve_s.max(f64::MIN_POSITIVE),
        ..SolveReport::default()
    };
    match x {
        Some(mut x) => {
            project_coefficient_mean(&mut x[lay.pressure_range()]);
            Ok(Solution { x, report })
        }
        None => Err(Error::NotConverged(Box::new(report))),
    }
}
