//! Multiplicative vertex patch smoother.
//!
//! One sweep visits the patch colors in order. Within a color every patch
//! problem is solved against the residual left by the previous colors and
//! the corrections are added together; the colors act multiplicatively.
//! The residual is formed once per sweep and afterwards only updated on the
//! cells touched by the corrections of a color.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::local_solver::{LocalInfo, LocalSolver, LocalSolverKind};
use crate::mesh::{color_patches, enumerate_patches_with, Coloring, Index};
use crate::scalar::Real;
use crate::stokes_op::{Execution, OperatorContext};

/// Patch solves per parallel batch.
const BATCH: usize = 64;

/// Counters of the inner patch solves.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SmootherStats {
    pub solves: usize,
    pub cg_iterations: usize,
    /// Patch solves whose inner CG hit its iteration cap.
    pub unconverged: usize,
}

impl SmootherStats {
    pub fn add(&mut self, other: SmootherStats) {
        self.solves += other.solves;
        self.cg_iterations += other.cg_iterations;
        self.unconverged += other.unconverged;
    }

    pub fn average_cg_iterations(&self) -> Option<f64> {
        (self.solves > 0).then(|| self.cg_iterations as f64 / self.solves as f64)
    }
}

/// Patches grouped by color with the solvers of one level.
#[derive(Clone, Debug)]
pub struct Smoother<T> {
    coloring: Coloring,
    colors: Vec<Vec<Index>>,
    /// Cells covered by the patches of each color.
    masks: Vec<Vec<bool>>,
    solver: LocalSolver<T>,
}

impl<T: Real> Smoother<T> {
    pub fn new(op: &OperatorContext<T>, local: LocalSolverKind, coloring: Coloring) -> Result<Self> {
        let level = op.layout.level();
        let patches = enumerate_patches_with(&level, coloring);
        let groups = color_patches(&patches, coloring.n_colors(level.dim));
        let mut colors = Vec::new();
        let mut masks = Vec::new();
        for g in groups.into_iter().filter(|g| !g.is_empty()) {
            let mut mask = vec![false; level.n_cells()];
            for &i in &g {
                for &c in &patches[i].cells {
                    mask[c] = true;
                }
            }
            colors.push(g.iter().map(|&i| patches[i].vertex).collect());
            masks.push(mask);
        }
        Ok(Self {
            coloring,
            colors,
            masks,
            solver: LocalSolver::new(&op.layout, local)?,
        })
    }

    pub fn coloring(&self) -> Coloring {
        self.coloring
    }

    pub fn local_solver(&self) -> &LocalSolver<T> {
        &self.solver
    }

    pub fn n_colors(&self) -> usize {
        self.colors.len()
    }

    /// One sweep on `𝒜x = b`. With `zero_start` the incoming `x` is ignored
    /// and taken as zero, which saves the initial residual evaluation.
    pub fn smooth(
        &self,
        op: &OperatorContext<T>,
        x: &mut [T],
        b: &[T],
        zero_start: bool,
        mode: Execution,
    ) -> Result<SmootherStats> {
        self.sweep(op, x, b, zero_start, mode, None)
    }

    /// [`Smoother::smooth`] that also returns the wall-clock seconds spent
    /// on each color, residual update included.
    pub fn smooth_timed(
        &self,
        op: &OperatorContext<T>,
        x: &mut [T],
        b: &[T],
        zero_start: bool,
        mode: Execution,
    ) -> Result<(SmootherStats, Vec<f64>)> {
        let mut times = Vec::with_capacity(self.colors.len());
        let stats = self.sweep(op, x, b, zero_start, mode, Some(&mut times))?;
        Ok((stats, times))
    }

    fn sweep(
        &self,
        op: &OperatorContext<T>,
        x: &mut [T],
        b: &[T],
        zero_start: bool,
        mode: Execution,
        mut times: Option<&mut Vec<f64>>,
    ) -> Result<SmootherStats> {
        let lay = &op.layout;
        let n = lay.n_dofs();
        if x.len() != n || b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if x.len() != n { x.len() } else { b.len() },
            });
        }
        let mut r = b.to_vec();
        if zero_start {
            x.fill(T::zero());
        } else {
            let mut ax = vec![T::zero(); n];
            op.apply(x, &mut ax, mode)?;
            for (ri, a) in r.iter_mut().zip(&ax) {
                *ri -= *a;
            }
        }
        let mut stats = SmootherStats::default();
        let mut dx = vec![T::zero(); n];
        let pl = lay.patch_len();
        let last = self.colors.len().saturating_sub(1);
        for (ci, vertices) in self.colors.iter().enumerate() {
            let start = Instant::now();
            let mut buf = vec![T::zero(); BATCH.min(vertices.len()) * pl];
            let mut infos = vec![LocalInfo::default(); BATCH.min(vertices.len())];
            for chunk in vertices.chunks(BATCH) {
                let out = &mut buf[..chunk.len() * pl];
                let inf = &mut infos[..chunk.len()];
                let work = |s: &mut (Vec<T>, crate::local_solver::LocalScratch<T>),
                            v: &Index,
                            o: &mut [T],
                            info: &mut LocalInfo| {
                    lay.gather_patch(&r, *v, &mut s.0);
                    *info = self.solver.solve(*v, &s.0, o, &mut s.1);
                };
                let init = || (vec![T::zero(); pl], self.solver.scratch());
                match mode {
                    Execution::Serial => {
                        let mut s = init();
                        for ((o, v), info) in out.chunks_mut(pl).zip(chunk).zip(inf.iter_mut()) {
                            work(&mut s, v, o, info);
                        }
                    }
                    Execution::Parallel => {
                        out.par_chunks_mut(pl)
                            .zip(chunk.par_iter())
                            .zip(inf.par_iter_mut())
                            .for_each_init(init, |s, ((o, v), info)| work(s, v, o, info));
                    }
                }
                for ((o, v), info) in out.chunks_mut(pl).zip(chunk).zip(inf.iter()) {
                    stats.solves += 1;
                    stats.cg_iterations += info.cg_iterations;
                    stats.unconverged += usize::from(!info.converged);
                    lay.scatter_add_patch(o, *v, x);
                    if ci != last {
                        o.iter_mut().for_each(|e| *e = -*e);
                        lay.scatter_add_patch(o, *v, &mut dx);
                    }
                }
            }
            if ci != last {
                // r ← r − 𝒜 δx
                op.apply_add_on_cells(&dx, &mut r, &self.masks[ci], mode)?;
                dx.fill(T::zero());
            }
            if let Some(t) = times.as_deref_mut() {
                t.push(start.elapsed().as_secs_f64());
            }
        }
        Ok(stats)
    }
}
