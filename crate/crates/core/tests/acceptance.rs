//! Acceptance criteria 1–9. Every criterion prints one `PASS`/`FAIL` line on
//! stderr (written past the test harness capture) and then asserts it.
//! Tolerances are pinned as constants next to each criterion.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use proptest::prelude::*;
use stokes_mg::harness::verify::{
    ainv_error, local_solver_error, operator_oracle_error, patch_kronecker_error,
};
use stokes_mg::harness::{
    apply_cost_by_degree, apply_cost_is_linear_in_degree, observed_orders, perf_report, run_convergence_study_with,
    solve_manufactured, ManufacturedSolution, PerfConfig, StudyConfig, StudyTable,
};
use stokes_mg::oracle::dense_assemble;
use stokes_mg::stokes_op::operator_for;
use stokes_mg::{Execution, Level, Precision, SolveReport, SolverConfig};

fn line(text: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
}

fn verdict(n: usize, pass: bool, detail: &str) {
    line(&format!("{} criterion {n}: {detail}", if pass { "PASS" } else { "FAIL" }));
    assert!(pass, "criterion {n} failed: {detail}");
}

fn progress(r: &SolveReport) {
    line(&format!(
        "  run {}D k={} level={} dofs={} iterations={} nu={} err_u={} err_p={} div={} time={:.1}s{}",
        r.dim,
        r.degree,
        r.level,
        r.dofs,
        r.iterations,
        r.nu.map_or("-".into(), |v| format!("{v:.2}")),
        r.err_u.map_or("-".into(), |v| format!("{v:.3e}")),
        r.err_p.map_or("-".into(), |v| format!("{v:.3e}")),
        r.divergence_ratio.map_or("-".into(), |v| format!("{v:.1e}")),
        r.timings.total_s,
        if r.converged { "" } else { " NOT CONVERGED" },
    ));
}

/// Runs shared by several criteria, with the wall-clock time of the batch.
struct Batch {
    table: StudyTable,
    seconds: f64,
}

impl Batch {
    fn run(dim: usize, degrees: Vec<usize>, levels: Vec<usize>) -> Self {
        let start = Instant::now();
        let cfg = StudyConfig::new(dim, degrees, levels);
        let table = run_convergence_study_with(&cfg, progress).expect("study configuration is valid");
        Self {
            table,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn get(&self, degree: usize, level: usize) -> Option<&SolveReport> {
        self.table
            .reports
            .iter()
            .find(|r| r.degree == degree && r.level == level)
    }
}

const LEVELS_2D: [usize; 5] = [3, 4, 5, 6, 7];
const LEVELS_3D: [usize; 3] = [2, 3, 4];

/// 2D, Schur local solver, degrees 1–5 (the ±1 offsets of three columns).
fn runs_2d() -> &'static Batch {
    static CELL: OnceLock<Batch> = OnceLock::new();
    CELL.get_or_init(|| Batch::run(2, (1..=5).collect(), LEVELS_2D.to_vec()))
}

/// 3D, Schur local solver, degrees 1–3.
fn runs_3d() -> &'static Batch {
    static CELL: OnceLock<Batch> = OnceLock::new();
    CELL.get_or_init(|| Batch::run(3, (1..=3).collect(), LEVELS_3D.to_vec()))
}

// ---------------------------------------------------------------- criterion 1

const OPERATOR_TOL: f64 = 1e-12;
const OPERATOR_SECONDS: f64 = 60.0;

#[test]
fn criterion_1_operator_matches_dense_oracle() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (d, l, k) in [(2, 1, 1), (2, 1, 2), (3, 0, 1), (3, 1, 1)] {
        let e = operator_oracle_error(d, l, k).expect("oracle assembly");
        parts.push(format!("{d}D {}^{d} k={k}: {e:.1e}", 2usize << l));
        worst = worst.max(e);
    }
    // property: y = 𝒜x agrees with the oracle product for arbitrary x
    let op = operator_for::<f64>(&Level::new(2, 1), 2).unwrap();
    let dense = dense_assemble(&op.layout).unwrap();
    let n = op.layout.n_dofs();
    let scale = dense.amax();
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    });
    let prop_worst = std::cell::Cell::new(0.0f64);
    runner
        .run(&proptest::collection::vec(-1.0f64..1.0, n), |x| {
            let mut y = vec![0.0; n];
            op.apply(&x, &mut y, Execution::Serial).unwrap();
            let o = &dense * nalgebra::DVector::from_column_slice(&x);
            let xmax = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            let err = y.iter().zip(o.iter()).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            let rel = err / (scale * xmax);
            prop_worst.set(prop_worst.get().max(rel));
            prop_assert!(rel <= OPERATOR_TOL);
            Ok(())
        })
        .ok();
    let prop_worst = prop_worst.get();
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= OPERATOR_TOL && prop_worst <= OPERATOR_TOL && secs <= OPERATOR_SECONDS;
    verdict(
        1,
        pass,
        &format!(
            "entrywise relative error {worst:.1e} (max {OPERATOR_TOL:.0e}) ({}); random-vector property {prop_worst:.1e}; {secs:.1}s (max {OPERATOR_SECONDS}s)",
            parts.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

const KRONECKER_TOL: f64 = 1e-12;
const AINV_TOL: f64 = 1e-10;

#[test]
fn criterion_2_kronecker_and_fast_diagonalization_identities() {
    let mut kron = 0.0f64;
    for (d, k) in [(2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (3, 3)] {
        kron = kron.max(patch_kronecker_error(d, 1, k).expect("patch assembly"));
    }
    let mut ainv = 0.0f64;
    for d in [2, 3] {
        for k in 1..=3 {
            ainv = ainv.max(ainv_error(d, k, 0).expect("dense solve"));
        }
    }
    verdict(
        2,
        kron <= KRONECKER_TOL && ainv <= AINV_TOL,
        &format!(
            "patch blocks vs Kronecker sums {kron:.1e} (max {KRONECKER_TOL:.0e}); fast diagonalization inverse vs dense solve {ainv:.1e} (max {AINV_TOL:.0e}) (k=1..3, 2D and 3D)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 3

const LOCAL_CG_TOL: f64 = 1e-14;
const LOCAL_TOL: f64 = 1e-8;

#[test]
fn criterion_3_schur_local_solve_matches_pseudo_inverse() {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for d in [2, 3] {
        for k in 1..=3 {
            let e = local_solver_error(d, k, LOCAL_CG_TOL, 7).expect("dense patch inverse");
            parts.push(format!("{d}D k={k}: {e:.1e}"));
            worst = worst.max(e);
        }
    }
    verdict(
        3,
        worst <= LOCAL_TOL,
        &format!("max relative deviation {worst:.1e} (max {LOCAL_TOL:.0e}) ({})", parts.join(", ")),
    );
}

// ---------------------------------------------------------------- criterion 4

/// Published fractional iteration counts with the Schur local solver, the
/// first three degree columns (ℚ₃, ℚ₄, ℚ₅), levels 3–7.
const PUBLISHED_NU: [(usize, [f64; 5]); 3] = [
    (3, [2.6, 3.2, 3.3, 3.3, 3.3]),
    (4, [2.3, 2.5, 2.5, 2.5, 2.5]),
    (5, [2.0, 2.4, 2.5, 2.5, 2.4]),
];
const NU_BAND: f64 = 0.7;
const NU_LEVEL_SPREAD: f64 = 1.0;
const TABLE_SECONDS: f64 = 600.0;

/// Column `ℚ_m` ↔ `RT_{m−1+offset}`.
fn mapped_degree(column: usize, offset: i64) -> usize {
    (column as i64 - 1 + offset) as usize
}

#[test]
fn criterion_4_fractional_iteration_counts_2d() {
    let batch = runs_2d();
    let nu = |k: usize, l: usize| batch.get(k, l).and_then(|r| r.nu).unwrap_or(f64::INFINITY);
    let mut grid = String::new();
    for k in 1..=5 {
        let row: Vec<String> = LEVELS_2D.iter().map(|&l| format!("{:.2}", nu(k, l))).collect();
        grid.push_str(&format!(" k={k}: [{}]", row.join(", ")));
    }
    line(&format!("  nu by degree over levels {LEVELS_2D:?}:{grid}"));

    let mut by_offset = BTreeMap::new();
    for offset in [-1i64, 0, 1] {
        let mut dev = 0.0f64;
        for (column, published) in PUBLISHED_NU {
            let k = mapped_degree(column, offset);
            for (i, &l) in LEVELS_2D.iter().enumerate() {
                dev = dev.max((nu(k, l) - published[i]).abs());
            }
        }
        line(&format!("  offset {offset:+}: max |nu − published| = {dev:.2}"));
        by_offset.insert(offset, dev);
    }
    let (&best, &dev) = by_offset
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("three offsets");
    let mut spread = 0.0f64;
    for (column, _) in PUBLISHED_NU {
        let k = mapped_degree(column, best);
        let vals: Vec<f64> = LEVELS_2D.iter().filter(|&&l| l >= 4).map(|&l| nu(k, l)).collect();
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        spread = spread.max(hi - lo);
    }
    let secs = batch.seconds;
    let pass = dev <= NU_BAND && spread <= NU_LEVEL_SPREAD && secs <= TABLE_SECONDS;
    verdict(
        4,
        pass,
        &format!(
            "best offset {best:+}: max |nu − published| {dev:.2} (max {NU_BAND}); level spread (levels ≥ 4) {spread:.2} (max {NU_LEVEL_SPREAD}); {secs:.0}s (max {TABLE_SECONDS}s)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 5

const NU_MAX_K1: f64 = 5.0;
const NU_MAX_K3: f64 = 3.5;
const ROBUSTNESS_SECONDS: f64 = 1200.0;

#[test]
fn criterion_5_iteration_robustness_3d() {
    let batch = runs_3d();
    let worst = |k: usize| {
        LEVELS_3D
            .iter()
            .map(|&l| batch.get(k, l).and_then(|r| r.nu).unwrap_or(f64::INFINITY))
            .fold(0.0f64, f64::max)
    };
    let (w1, w2, w3) = (worst(1), worst(2), worst(3));
    let secs = batch.seconds;
    let pass = w1 <= NU_MAX_K1 && w3 <= NU_MAX_K3 && secs <= ROBUSTNESS_SECONDS;
    verdict(
        5,
        pass,
        &format!(
            "max nu over levels {LEVELS_3D:?}: k=1 {w1:.2} (max {NU_MAX_K1}), k=2 {w2:.2} (unbounded), k=3 {w3:.2} (max {NU_MAX_K3}); {secs:.0}s (max {ROBUSTNESS_SECONDS}s)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

const ORDER_MARGIN: f64 = 0.7;

#[test]
fn criterion_6_optimal_convergence_orders() {
    let mut pass = true;
    let mut parts = Vec::new();
    for (dim, batch, finest) in [(2, runs_2d(), 7), (3, runs_3d(), 4)] {
        let orders = observed_orders(&batch.table.rows);
        for k in [1, 2] {
            let need = k as f64 + ORDER_MARGIN;
            match orders.iter().find(|o| o.degree == k && o.level == finest) {
                Some(o) => {
                    let ok = o.order_u >= need && o.order_p >= need;
                    pass &= ok;
                    parts.push(format!(
                        "{dim}D k={k} levels {}→{finest}: u {:.2}, p {:.2} (min {need:.1})",
                        finest - 1,
                        o.order_u,
                        o.order_p
                    ));
                }
                None => {
                    pass = false;
                    parts.push(format!("{dim}D k={k}: errors missing"));
                }
            }
        }
    }
    verdict(6, pass, &parts.join("; "));
}

// ---------------------------------------------------------------- criterion 7

const DIVERGENCE_RATIO: f64 = 1e-6;

#[test]
fn criterion_7_divergence_free_solutions() {
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut missing = 0;
    for batch in [runs_2d(), runs_3d()] {
        for r in batch.table.reports.iter().filter(|r| r.converged) {
            match r.divergence_ratio {
                Some(v) => {
                    worst = worst.max(v);
                    count += 1;
                }
                None => missing += 1,
            }
        }
    }
    verdict(
        7,
        count > 0 && missing == 0 && worst <= DIVERGENCE_RATIO,
        &format!("max ‖div u_h‖/‖u_h‖ over {count} converged runs {worst:.1e} (max {DIVERGENCE_RATIO:.0e})"),
    );
}

// ---------------------------------------------------------------- criterion 8

const MIXED_ERROR_REL: f64 = 0.01;
const MIXED_EXTRA_ITERATIONS: usize = 2;
const MIXED_SECONDS: f64 = 300.0;

#[test]
fn criterion_8_mixed_precision_matches_double() {
    let ms = ManufacturedSolution::with_defaults(3).unwrap();
    let double = runs_3d().get(2, 3).expect("3D level 3 k=2 run").clone();
    let start = Instant::now();
    let mixed = SolverConfig {
        precision: Precision::Mixed,
        ..SolverConfig::new(3, 2, 3)
    };
    let mixed = match solve_manufactured(&mixed, &ms) {
        Ok(s) => s.report,
        Err(stokes_mg::Error::NotConverged(r)) => *r,
        Err(e) => panic!("mixed solve failed: {e}"),
    };
    progress(&mixed);
    let secs = start.elapsed().as_secs_f64() + double.timings.total_s;
    let rel = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() / b,
        _ => f64::INFINITY,
    };
    let (du, dp) = (rel(mixed.err_u, double.err_u), rel(mixed.err_p, double.err_p));
    let ok_div = mixed.divergence_ratio.is_some_and(|v| v <= DIVERGENCE_RATIO);
    let pass = mixed.converged
        && du <= MIXED_ERROR_REL
        && dp <= MIXED_ERROR_REL
        && mixed.iterations <= double.iterations + MIXED_EXTRA_ITERATIONS
        && ok_div
        && secs <= MIXED_SECONDS;
    verdict(
        8,
        pass,
        &format!(
            "3D level 3 k=2: error deviation u {du:.1e}, p {dp:.1e} (max {MIXED_ERROR_REL}); iterations {} vs {} (max +{MIXED_EXTRA_ITERATIONS}); divergence {}; {secs:.0}s (max {MIXED_SECONDS}s)",
            mixed.iterations,
            double.iterations,
            mixed.divergence_ratio.map_or("-".into(), |v| format!("{v:.1e}")),
        ),
    );
}

// ---------------------------------------------------------------- criterion 9

const APPLY_SLACK: f64 = 2.0;

#[test]
fn criterion_9_structural_performance_checks() {
    line(
        "  not reproducible at desk scale: GPU TFLOP/s and roofline figures, GDoF/s throughput, \
         GPU ns/DoF timings, the mixed-precision GPU speedup",
    );
    let mut pass = true;
    let mut parts = Vec::new();
    for (dim, level) in [(2, 4), (3, 1)] {
        let costs = apply_cost_by_degree(dim, level, &[1, 2, 3, 4], 5).expect("apply timing");
        let ok = apply_cost_is_linear_in_degree(&costs, APPLY_SLACK);
        pass &= ok;
        let c: Vec<String> = costs.iter().map(|(k, c)| format!("k={k} {c:.0}")).collect();
        parts.push(format!("{dim}D apply ns/DoF [{}] linear in k+1 within {APPLY_SLACK}×: {ok}", c.join(", ")));
    }
    for (dim, degree, level) in [(2, 3, 4), (3, 2, 2)] {
        let r = perf_report(&PerfConfig {
            reps: 3,
            ..PerfConfig::new(dim, degree, level)
        })
        .expect("perf report");
        let ok = r.smoothing.ns_per_dof > r.apply.ns_per_dof;
        pass &= ok;
        parts.push(format!(
            "{dim}D k={degree} smoothing {:.0} > apply {:.0} ns/DoF: {ok}",
            r.smoothing.ns_per_dof, r.apply.ns_per_dof
        ));
    }
    verdict(9, pass, &parts.join("; "));
}
