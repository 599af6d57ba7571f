//! Geometric multigrid V-cycle with vertex patch smoothing.
//!
//! Transfers are the natural embeddings of the nested spaces, applied as
//! Kronecker products of 1D prolongations; restriction is the transpose.
//! The coarsest level is a single vertex patch and is solved exactly.

use crate::error::{Error, Result};
use crate::fem1d::{prolongation_1d, EndCondition, Space1D};
use crate::local_solver::{LocalScratch, LocalSolver, LocalSolverKind};
use crate::mesh::{Coloring, Level};
use crate::scalar::Real;
use crate::smoother::{Smoother, SmootherStats};
use crate::space::{project_coefficient_mean, DofLayout};
use crate::stokes_op::{Execution, OperatorContext};
use crate::tensor::{tensor_len, Sparse1D};

/// Options shared by all levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MultigridConfig {
    pub local_solver: LocalSolverKind,
    pub coloring: Coloring,
    pub execution: Execution,
}

/// Level-to-level transfer for all blocks.
#[derive(Clone, Debug)]
pub struct Transfer<T> {
    dim: usize,
    coarse_dims: Vec<[usize; 3]>,
    fine_dims: Vec<[usize; 3]>,
    coarse_starts: Vec<usize>,
    fine_starts: Vec<usize>,
    /// `p[b][j]`: 1D prolongation of block `b` (components, then pressure).
    p: Vec<[Sparse1D<T>; 3]>,
    r: Vec<[Sparse1D<T>; 3]>,
}

fn block_dims(lay: &DofLayout, b: usize) -> [usize; 3] {
    let src = if b < lay.dim { lay.component_dims(b) } else { lay.pressure_dims() };
    let mut out = [1; 3];
    out[..lay.dim].copy_from_slice(src);
    out
}

impl<T: Real> Transfer<T> {
    /// Transfer between `coarse` and its refinement `fine`.
    pub fn new(coarse: &DofLayout, fine: &DofLayout) -> Result<Self> {
        let d = coarse.dim;
        if fine.dim != d || fine.degree != coarse.degree || fine.m != 2 * coarse.m {
            return Err(Error::invalid("fine layout is not the refinement of the coarse layout"));
        }
        let k = coarse.degree;
        let (m, h) = (coarse.m, coarse.h);
        let none = EndCondition::None;
        let mut p = Vec::with_capacity(d + 1);
        let mut r = Vec::with_capacity(d + 1);
        for b in 0..=d {
            let mut pb: [Sparse1D<T>; 3] = std::array::from_fn(|_| Sparse1D::from_rows(1, &[vec![(0, 1.0)]]));
            let mut rb = pb.clone();
            for j in 0..d {
                let cs = if j == b {
                    Space1D::continuous_zero(k + 1, m, h)?
                } else {
                    Space1D::discontinuous(k, m, h, none, none)?
                };
                let rows = prolongation_1d(&cs, &cs.refined())?;
                pb[j] = Sparse1D::from_rows(cs.n_dofs(), &rows);
                rb[j] = pb[j].transpose();
            }
            p.push(pb);
            r.push(rb);
        }
        Ok(Self {
            dim: d,
            coarse_dims: (0..=d).map(|b| block_dims(coarse, b)).collect(),
            fine_dims: (0..=d).map(|b| block_dims(fine, b)).collect(),
            coarse_starts: coarse.block_starts().to_vec(),
            fine_starts: fine.block_starts().to_vec(),
            p,
            r,
        })
    }

    fn chain(&self, mats: &[Sparse1D<T>; 3], input: &[T], dims: [usize; 3], out: &mut [T]) {
        let d = self.dim;
        let mut shape = dims;
        let mut cur = input.to_vec();
        for (j, mat) in mats.iter().enumerate().take(d) {
            let mut next_shape = shape;
            next_shape[j] = mat.rows();
            let mut next = vec![T::zero(); tensor_len(&next_shape[..d])];
            mat.contract(&cur, &shape[..d], j, &mut next);
            cur = next;
            shape = next_shape;
        }
        out.copy_from_slice(&cur);
    }

    /// `fine = P coarse`.
    pub fn prolongate(&self, coarse: &[T], fine: &mut [T]) {
        let (cs, fs) = (&self.coarse_starts, &self.fine_starts);
        for b in 0..=self.dim {
            self.chain(
                &self.p[b],
                &coarse[cs[b]..cs[b + 1]],
                self.coarse_dims[b],
                &mut fine[fs[b]..fs[b + 1]],
            );
        }
    }

    /// `coarse = Pᵀ fine`.
    pub fn restrict(&self, fine: &[T], coarse: &mut [T]) {
        let (cs, fs) = (&self.coarse_starts, &self.fine_starts);
        for b in 0..=self.dim {
            self.chain(
                &self.r[b],
                &fine[fs[b]..fs[b + 1]],
                self.fine_dims[b],
                &mut coarse[cs[b]..cs[b + 1]],
            );
        }
    }
}

/// Free-function form of [`Transfer::prolongate`].
pub fn prolongate<T: Real>(t: &Transfer<T>, coarse: &[T], fine: &mut [T]) {
    t.prolongate(coarse, fine)
}

/// Free-function form of [`Transfer::restrict`].
pub fn restrict<T: Real>(t: &Transfer<T>, fine: &[T], coarse: &mut [T]) {
    t.restrict(fine, coarse)
}

struct MgLevel<T> {
    op: OperatorContext<T>,
    smoother: Option<Smoother<T>>,
    /// Transfer from the next coarser level.
    transfer: Option<Transfer<T>>,
}

/// V-cycle preconditioner over levels `0..=max_level`.
pub struct Multigrid<T> {
    config: MultigridConfig,
    levels: Vec<MgLevel<T>>,
    coarse: LocalSolver<T>,
}

impl<T: Real> Multigrid<T> {
    pub fn new(dim: usize, degree: usize, max_level: usize, config: MultigridConfig) -> Result<Self> {
        let hierarchy = crate::mesh::build_hierarchy(dim, max_level)?;
        let mut levels: Vec<MgLevel<T>> = Vec::with_capacity(max_level + 1);
        for l in 0..=max_level {
            let level: Level = hierarchy.level(l)?;
            let op = OperatorContext::new(DofLayout::new(&level, degree)?)?;
            let smoother = if l > 0 {
                Some(Smoother::new(&op, config.local_solver, config.coloring)?)
            } else {
                None
            };
            let transfer = match levels.last() {
                Some(prev) => Some(Transfer::new(&prev.op.layout, &op.layout)?),
                None => None,
            };
            levels.push(MgLevel {
                op,
                smoother,
                transfer,
            });
        }
        let coarse = LocalSolver::new(&levels[0].op.layout, LocalSolverKind::Direct)?;
        Ok(Self {
            config,
            levels,
            coarse,
        })
    }

    pub fn config(&self) -> MultigridConfig {
        self.config
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn operator(&self, level: usize) -> &OperatorContext<T> {
        &self.levels[level].op
    }

    pub fn fine_operator(&self) -> &OperatorContext<T> {
        &self.levels[self.max_level()].op
    }

    pub fn smoother(&self, level: usize) -> Option<&Smoother<T>> {
        self.levels[level].smoother.as_ref()
    }

    /// Exact solve on the coarsest level; the pressure part of the result
    /// has zero coefficient mean.
    pub fn coarse_solve(&self, b: &[T], x: &mut [T]) {
        let mut s: LocalScratch<T> = self.coarse.scratch();
        self.coarse.solve([1, 1, 1], b, x, &mut s);
    }

    /// One V-cycle for `𝒜x = b` on the finest level, starting from zero.
    pub fn vcycle(&self, b: &[T], x: &mut [T]) -> Result<SmootherStats> {
        let mut stats = SmootherStats::default();
        self.vcycle_level(self.max_level(), b, x, &mut stats)?;
        let lay = &self.fine_operator().layout;
        project_coefficient_mean(&mut x[lay.pressure_range()]);
        Ok(stats)
    }

    fn vcycle_level(&self, l: usize, b: &[T], x: &mut [T], stats: &mut SmootherStats) -> Result<()> {
        if l == 0 {
            self.coarse_solve(b, x);
            return Ok(());
        }
        let lvl = &self.levels[l];
        let mode = self.config.execution;
        let smoother = lvl.smoother.as_ref().expect("levels above 0 smooth");
        stats.add(smoother.smooth(&lvl.op, x, b, true, mode)?);
        let n = b.len();
        let mut r = vec![T::zero(); n];
        lvl.op.apply(x, &mut r, mode)?;
        for (ri, &bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let transfer = lvl.transfer.as_ref().expect("levels above 0 have a transfer");
        let nc = self.levels[l - 1].op.layout.n_dofs();
        let mut rc = vec![T::zero(); nc];
        transfer.restrict(&r, &mut rc);
        let mut ec = vec![T::zero(); nc];
        self.vcycle_level(l - 1, &rc, &mut ec, stats)?;
        transfer.prolongate(&ec, &mut r);
        for (xi, &ei) in x.iter_mut().zip(&r) {
            *xi += ei;
        }
        stats.add(smoother.smooth(&lvl.op, x, b, false, mode)?);
        Ok(())
    }
}

/// Free-function form of [`Multigrid::vcycle`].
pub fn v_cycle<T: Real>(mg: &Multigrid<T>, b: &[T], x: &mut [T]) -> Result<SmootherStats> {
    mg.vcycle(b, x)
}
