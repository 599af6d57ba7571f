//! Cross-checks of the fast kernels against dense oracles.
//!
//! Every check returns the measured discrepancy; [`verify`] compares it with
//! a fixed tolerance and reports one line per invariant.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::fields::divergence_norm;
use crate::harness::manufactured::ManufacturedSolution;
use crate::local_solver::{
    build_patch_matrices, fast_diag_prepare, patch_kind, LocalSolver, LocalSolverKind, PatchSolverData,
};
use crate::mesh::{enumerate_patches, Level, VertexPatch};
use crate::multigrid::Transfer;
use crate::oracle::{deflated_inverse, dense_assemble, dense_patch_assemble, pressure_kernel};
use crate::solver::SolverConfig;
use crate::space::{project_coefficient_mean, DofLayout};
use crate::stokes_op::{operator_for, Execution};

fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// First, a middle and the last patch of a level: every boundary situation
/// on small meshes.
fn sample_patches(level: &Level) -> Vec<VertexPatch> {
    let mut all = enumerate_patches(level);
    if all.len() <= 3 {
        return all;
    }
    let last = all.pop().expect("nonempty");
    let mid = all.swap_remove(all.len() / 2);
    vec![all.swap_remove(0), mid, last]
}

/// `max |𝒜_ij − O_ij| / max |O_ij|` with `𝒜` probed by unit vectors and `O`
/// the dense oracle assembly.
pub fn operator_oracle_error(dim: usize, level: usize, degree: usize) -> Result<f64> {
    let op = operator_for::<f64>(&Level::new(dim, level), degree)?;
    let oracle = dense_assemble(&op.layout)?;
    let n = op.layout.n_dofs();
    let mut e = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut err = 0.0f64;
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut y, Execution::Serial)?;
        e[j] = 0.0;
        for (i, &v) in y.iter().enumerate() {
            err = err.max((v - oracle[(i, j)]).abs());
        }
    }
    Ok(err / oracle.amax())
}

/// Largest relative deviation of the Kronecker-built patch velocity and
/// divergence blocks from the oracle patch matrix, over sample patches.
pub fn patch_kronecker_error(dim: usize, level: usize, degree: usize) -> Result<f64> {
    let lay = DofLayout::new(&Level::new(dim, level), degree)?;
    let starts = lay.patch_starts().to_vec();
    let nv = starts[dim];
    let mut err = 0.0f64;
    for patch in sample_patches(&lay.level()) {
        let pm = build_patch_matrices(&lay, patch_kind(&lay, patch.vertex))?;
        let oracle = dense_patch_assemble(&lay, &patch)?;
        let np = oracle.nrows() - nv;
        for c in 0..dim {
            let (o, n) = (starts[c], starts[c + 1] - starts[c]);
            let a = oracle.view((o, o), (n, n));
            err = err.max((pm.velocity_block(c) - a).amax() / a.amax());
            let b = oracle.view((nv, o), (np, n));
            err = err.max((pm.divergence_block(c) - b).amax() / b.amax());
        }
    }
    Ok(err)
}

/// Relative deviation of the fast-diagonalization inverse from a dense LU
/// solve with the oracle velocity blocks, random right-hand sides.
pub fn ainv_error(dim: usize, degree: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lay = DofLayout::new(&Level::new(dim, 1), degree)?;
    let starts = lay.patch_starts().to_vec();
    let mut err = 0.0f64;
    for patch in sample_patches(&lay.level()) {
        let pm = build_patch_matrices(&lay, patch_kind(&lay, patch.vertex))?;
        let data: PatchSolverData<f64> = fast_diag_prepare(&pm)?;
        let mut s = crate::local_solver::LocalScratch::new(lay.patch_len());
        let oracle = dense_patch_assemble(&lay, &patch)?;
        for c in 0..dim {
            let (o, n) = (starts[c], starts[c + 1] - starts[c]);
            let a: DMatrix<f64> = oracle.view((o, o), (n, n)).into_owned();
            let r = random(n, &mut rng);
            let exact = a
                .lu()
                .solve(&DVector::from_column_slice(&r))
                .ok_or(crate::error::Error::NotPositiveDefinite("patch velocity block".into()))?;
            let mut ours = vec![0.0; n];
            data.apply_ainv(c, &r, &mut ours, &mut s);
            err = err.max(max_diff(&ours, exact.as_slice()) / amax(exact.as_slice()));
        }
    }
    Ok(err)
}

/// Relative deviation of the Schur complement patch solve (inner CG at
/// `cg_tol`) from the pseudo-inverse of the oracle patch matrix, velocity
/// and mean-free pressure, on random compatible data.
pub fn local_solver_error(dim: usize, degree: usize, cg_tol: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lay = DofLayout::new(&Level::new(dim, 1), degree)?;
    let mut solver = LocalSolver::<f64>::new(&lay, LocalSolverKind::Schur)?;
    solver.cg_tol = cg_tol;
    let mut s = solver.scratch();
    let nv = lay.patch_starts()[dim];
    let mut err = 0.0f64;
    for patch in sample_patches(&lay.level()) {
        let oracle = dense_patch_assemble(&lay, &patch)?;
        let n = oracle.nrows();
        let pinv = deflated_inverse(&oracle, &pressure_kernel(n, n - nv))?;
        let mut rhs = random(n, &mut rng);
        project_coefficient_mean(&mut rhs[nv..]);
        let exact = pinv * DVector::from_column_slice(&rhs);
        let mut exact = exact.as_slice().to_vec();
        let mut ours = vec![0.0; n];
        solver.solve(patch.vertex, &rhs, &mut ours, &mut s);
        project_coefficient_mean(&mut exact[nv..]);
        project_coefficient_mean(&mut ours[nv..]);
        let ev = max_diff(&ours[..nv], &exact[..nv]) / amax(&exact[..nv]);
        let ep = max_diff(&ours[nv..], &exact[nv..]) / amax(&exact[nv..]);
        err = err.max(ev).max(ep);
    }
    Ok(err)
}

/// `|⟨P x, y⟩ − ⟨x, R y⟩| / max(|⟨P x, y⟩|, 1)` for random vectors.
pub fn transfer_adjoint_error(dim: usize, degree: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = DofLayout::new(&Level::new(dim, 0), degree)?;
    let fine = DofLayout::new(&Level::new(dim, 1), degree)?;
    let t = Transfer::<f64>::new(&coarse, &fine)?;
    let xc = random(coarse.n_dofs(), &mut rng);
    let yf = random(fine.n_dofs(), &mut rng);
    let mut pxc = vec![0.0; fine.n_dofs()];
    let mut ryf = vec![0.0; coarse.n_dofs()];
    t.prolongate(&xc, &mut pxc);
    t.restrict(&yf, &mut ryf);
    let a: f64 = pxc.iter().zip(&yf).map(|(p, q)| p * q).sum();
    let b: f64 = ryf.iter().zip(&xc).map(|(p, q)| p * q).sum();
    Ok((a - b).abs() / a.abs().max(1.0))
}

/// Largest `|∇·u|` of the manufactured velocity at random points.
pub fn manufactured_divergence(dim: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ms = ManufacturedSolution::with_defaults(dim)?;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        worst = worst.max(ms.div_u(&x).abs());
    }
    Ok(worst)
}

/// `‖∇·u_h‖ / ‖u_h‖` of the converged solution of the manufactured problem.
pub fn solution_divergence(dim: usize, level: usize, degree: usize) -> Result<f64> {
    let ms = ManufacturedSolution::with_defaults(dim)?;
    let sol = crate::harness::experiments::solve_manufactured(&SolverConfig::new(dim, degree, level), &ms)?;
    let lay = DofLayout::new(&Level::new(dim, level), degree)?;
    let (div, un) = divergence_norm(&lay, &sol.x);
    Ok(div / un)
}

/// Outcome of one invariant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: Result<f64>, tolerance: f64) -> Self {
        let (value, pass) = match value {
            Ok(v) => (v, v <= tolerance),
            Err(_) => (f64::NAN, false),
        };
        Self {
            name: name.into(),
            value,
            tolerance,
            pass,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {:.3e} (tolerance {:.0e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

/// The oracle cross-check suite, sized to finish in seconds.
pub fn verify(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    for (d, l, k) in [(2, 1, 1), (2, 1, 2), (3, 0, 1), (3, 1, 1)] {
        out.push(Check::new(
            format!("operator equals dense oracle, {d}D {m}^{d} cells, k={k}", m = 2usize << l),
            operator_oracle_error(d, l, k),
            1e-12,
        ));
    }
    for (d, k) in [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)] {
        out.push(Check::new(
            format!("patch blocks are Kronecker sums, {d}D k={k}"),
            patch_kronecker_error(d, 1, k),
            1e-12,
        ));
    }
    for (d, k) in [(2, 1), (2, 3), (3, 1), (3, 3)] {
        out.push(Check::new(
            format!("fast diagonalization inverse equals dense solve, {d}D k={k}"),
            ainv_error(d, k, seed),
            1e-10,
        ));
    }
    for (d, k) in [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2)] {
        out.push(Check::new(
            format!("Schur patch solve equals pseudo-inverse, {d}D k={k}"),
            local_solver_error(d, k, 1e-14, seed),
            1e-8,
        ));
    }
    for (d, k) in [(2, 2), (3, 1)] {
        out.push(Check::new(
            format!("restriction is the transpose of prolongation, {d}D k={k}"),
            transfer_adjoint_error(d, k, seed),
            1e-12,
        ));
    }
    for d in [2, 3] {
        out.push(Check::new(
            format!("manufactured velocity is divergence free, {d}D"),
            manufactured_divergence(d, seed),
            1e-12,
        ));
    }
    out.push(Check::new(
        "solved velocity is discretely divergence free, 2D k=2",
        solution_divergence(2, 3, 2),
        1e-6,
    ));
    out
}
