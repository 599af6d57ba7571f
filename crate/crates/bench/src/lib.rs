//! Shared fixtures for the kernel benchmarks.

use stokes_mg::{DofLayout, Level, Multigrid, MultigridConfig, OperatorContext, Result};

/// Deterministic input vector with a mean-free pressure block.
pub fn input(layout: &DofLayout) -> Vec<f64> {
    let mut x: Vec<f64> = (0..layout.n_dofs()).map(|i| (0.37 * i as f64).sin()).collect();
    layout.project_zero_mean(&mut x[layout.pressure_range()]);
    x
}

pub fn operator(dim: usize, degree: usize, level: usize) -> Result<OperatorContext<f64>> {
    OperatorContext::new(DofLayout::new(&Level::new(dim, level), degree)?)
}

pub fn multigrid(dim: usize, degree: usize, level: usize) -> Result<Multigrid<f64>> {
    Multigrid::new(dim, degree, level, MultigridConfig::default())
}

/// Benchmark label `"{dim}d_k{degree}_l{level}"`.
pub fn label(dim: usize, degree: usize, level: usize) -> String {
    format!("{dim}d_k{degree}_l{level}")
}
