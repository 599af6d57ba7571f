//! Matrix-free evaluation of the Stokes operator.
//!
//! `y = 𝒜x` with `𝒜 = [[A, Bᵀ], [B, 0]]` is computed by three loops: cell
//! integrals, interior faces (each visited once, owned by the lower cell) and
//! boundary faces. All interpolation to and integration from quadrature
//! points uses direction-wise contractions with `k+2` Gauss points; cell
//! gradients are taken by collocation on that grid.
//!
//! Only tangential velocity components see face terms: the normal component
//! is continuous, so its jump and the jump of its test function vanish.
//!
//! Work is done in batches. Local results of a batch are computed into a
//! buffer (in parallel if enabled) and then added to the global vector in a
//! fixed serial order, so the result is bit-identical across runs and modes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem1d::{gauss_quadrature, penalty, Basis1D};
use crate::mesh::{Index, Level};
use crate::scalar::Real;
use crate::space::DofLayout;
use crate::tensor::{contract, contract_t, contract_t_add, tensor_len, SmallMat};

const BATCH: usize = 256;

/// Univariate tables of one level and degree.
#[derive(Clone, Debug)]
pub struct OperatorContext<T> {
    pub layout: DofLayout,
    pub gamma: f64,
    /// Reference quadrature weights (tensor product built on the fly).
    weights: Vec<T>,
    /// Degree-`k` values, `(quad × basis)`.
    val: SmallMat<T>,
    /// Degree-`k+1` values for the parallel direction.
    val_par: SmallMat<T>,
    /// Derivatives of the Lagrange basis on the quadrature points, exact on
    /// the interpolants of both degrees since `k+1 < k+2`.
    colloc: SmallMat<T>,
    /// Degree-`k` trace rows at the left (0) and right (1) end; the
    /// derivative rows include the `1/h` factor.
    trace: [SmallMat<T>; 2],
    trace_deriv: [SmallMat<T>; 2],
    cell_starts: Vec<usize>,
    w_grad: Vec<T>,
    w_div: Vec<T>,
    w_face: Vec<T>,
}

impl<T: Real> OperatorContext<T> {
    pub fn new(layout: DofLayout) -> Result<Self> {
        let k = layout.degree;
        let h = layout.h;
        let quad = gauss_quadrature(k + 2)?;
        let b = Basis1D::lagrange(k);
        let bp = Basis1D::lagrange(k + 1);
        let table = |m: nalgebra::DMatrix<f64>| SmallMat::from_dmatrix(&m);
        let row = |f: &dyn Fn(usize) -> f64| SmallMat::from_fn(1, k + 1, |_, j| f(j));
        let mut ctx = Self {
            gamma: penalty(k, h),
            weights: quad.weights.iter().map(|&w| T::of(w)).collect(),
            val: table(b.values_at(&quad.points)),
            val_par: table(bp.values_at(&quad.points)),
            colloc: table(
                Basis1D {
                    degree: k + 1,
                    nodes: quad.points.clone(),
                }
                .derivatives_at(&quad.points),
            ),
            trace: [row(&|j| b.value(j, 0.0)), row(&|j| b.value(j, 1.0))],
            trace_deriv: [
                row(&|j| b.derivative(j, 0.0) / h),
                row(&|j| b.derivative(j, 1.0) / h),
            ],
            cell_starts: layout.cell_starts().to_vec(),
            w_grad: Vec::new(),
            w_div: Vec::new(),
            w_face: Vec::new(),
            layout,
        };
        let d = ctx.dim();
        ctx.w_grad = ctx.weight_grid(d, h.powi(d as i32 - 2));
        ctx.w_div = ctx.weight_grid(d, h.powi(d as i32 - 1));
        ctx.w_face = ctx.weight_grid(d - 1, h.powi(d as i32 - 1));
        Ok(ctx)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn n_quad(&self) -> usize {
        self.weights.len()
    }

    /// Value table for component `c` in direction `j`.
    fn values(&self, c: usize, j: usize) -> &SmallMat<T> {
        if c == j {
            &self.val_par
        } else {
            &self.val
        }
    }

    /// Per-direction tables with a trace row in direction `dir`.
    #[inline]
    fn face_mats<'a>(&'a self, c: usize, dir: usize, row: &'a SmallMat<T>) -> [&'a SmallMat<T>; 3] {
        std::array::from_fn(|i| if i == dir { row } else { self.values(c, i) })
    }

    /// Tensor-product quadrature weight times `scale` at every point of a
    /// `q^n` grid.
    fn weight_grid(&self, n: usize, scale: f64) -> Vec<T> {
        let q = self.n_quad();
        let total = q.pow(n as u32);
        (0..total)
            .map(|i| {
                let mut w = T::of(scale);
                let mut rest = i;
                for _ in 0..n {
                    w *= self.weights[rest % q];
                    rest /= q;
                }
                w
            })
            .collect()
    }
}

/// Per-worker buffers.
pub struct Scratch<T> {
    local: Vec<T>,
    other: Vec<T>,
    grads: Vec<Vec<T>>,
    pq: Vec<T>,
    vq: Vec<T>,
    div: Vec<T>,
    t1: Vec<T>,
    t2: Vec<T>,
    face: [Vec<T>; 4],
}

/// Ping-pong application of one matrix per direction: `out = (⊗_j mats[j]) input`.
/// `dims` is the input shape; returns the output shape.
fn chain<T: Real>(
    mats: &[&SmallMat<T>],
    input: &[T],
    dims: [usize; 3],
    t1: &mut [T],
    t2: &mut [T],
    out: &mut [T],
) -> [usize; 3] {
    let d = mats.len();
    let mut dims = dims;
    let mut src: &[T] = input;
    let (mut a, mut b) = (t1, t2);
    for (j, m) in mats.iter().enumerate() {
        let mut nd = dims;
        nd[j] = m.rows();
        let len = tensor_len(&nd[..d]);
        if j + 1 == d {
            contract(m, src, &dims[..d], j, &mut out[..len]);
        } else {
            contract(m, src, &dims[..d], j, &mut a[..len]);
            std::mem::swap(&mut a, &mut b);
            src = &b[..len];
        }
        dims = nd;
    }
    dims
}

/// Transposed chain accumulated into `out`: `out += (⊗_j mats[j]ᵀ) input`.
fn chain_t_add<T: Real>(
    mats: &[&SmallMat<T>],
    input: &[T],
    dims: [usize; 3],
    t1: &mut [T],
    t2: &mut [T],
    out: &mut [T],
) {
    let d = mats.len();
    let mut dims = dims;
    let mut src: &[T] = input;
    let (mut a, mut b) = (t1, t2);
    for (j, m) in mats.iter().enumerate() {
        let mut nd = dims;
        nd[j] = m.cols();
        let len = tensor_len(&nd[..d]);
        if j + 1 == d {
            contract_t_add(m, src, &dims[..d], j, &mut out[..len]);
        } else {
            contract_t(m, src, &dims[..d], j, &mut a[..len]);
            std::mem::swap(&mut a, &mut b);
            src = &b[..len];
        }
        dims = nd;
    }
}

pub type StokesOperator<T> = OperatorContext<T>;

impl<T: Real> OperatorContext<T> {
    pub fn scratch(&self) -> Scratch<T> {
        let d = self.dim();
        let k = self.layout.degree;
        let q = self.n_quad();
        let big = (q.max(k + 2)).pow(d as u32);
        let cl = self.layout.cell_len();
        Scratch {
            local: vec![T::zero(); cl],
            other: vec![T::zero(); cl],
            grads: vec![vec![T::zero(); big]; d],
            pq: vec![T::zero(); big],
            vq: vec![T::zero(); big],
            div: vec![T::zero(); big],
            t1: vec![T::zero(); big],
            t2: vec![T::zero(); big],
            face: std::array::from_fn(|_| vec![T::zero(); big]),
        }
    }

    /// Cell integrals `y_i = (∇u, ∇φ_i)_K + (p, ∇·φ_i)_K`,
    /// `z_i = (ψ_i, ∇·u)_K` for one cell-local vector `[u_0, …, p]`.
    /// Writes the result (same layout) into `out`.
    pub fn cell_integrals(&self, input: &[T], out: &mut [T], s: &mut Scratch<T>) {
        let d = self.dim();
        let q = self.n_quad();
        let nq = q.pow(d as u32);
        let starts = &self.cell_starts;
        let (wq_grad, wq_div) = (&self.w_grad, &self.w_div);
        out.fill(T::zero());

        // pressure at quadrature points
        let pdims = self.layout.cell_pressure_dims();
        let pmats = [&self.val; 3];
        let pmats = &pmats[..d];
        chain(pmats, &input[starts[d]..], pdims, &mut s.t1, &mut s.t2, &mut s.pq);
        s.div[..nq].fill(T::zero());

        let mut qdims = [1; 3];
        qdims[..d].fill(q);
        for c in 0..d {
            let dims = self.layout.cell_component_dims(c);
            let u = &input[starts[c]..starts[c + 1]];
            let vals: [&SmallMat<T>; 3] = std::array::from_fn(|i| self.values(c, i));
            chain(&vals[..d], u, dims, &mut s.t1, &mut s.t2, &mut s.vq);
            for j in 0..d {
                contract(&self.colloc, &s.vq[..nq], &qdims[..d], j, &mut s.grads[j][..nq]);
            }
            for qi in 0..nq {
                s.div[qi] += s.grads[c][qi];
            }
            for j in 0..d {
                let g = &mut s.grads[j];
                for qi in 0..nq {
                    g[qi] *= wq_grad[qi];
                }
                if j == c {
                    for qi in 0..nq {
                        g[qi] += wq_div[qi] * s.pq[qi];
                    }
                }
            }
            contract_t(&self.colloc, &s.grads[0][..nq], &qdims[..d], 0, &mut s.vq[..nq]);
            for j in 1..d {
                contract_t_add(&self.colloc, &s.grads[j][..nq], &qdims[..d], j, &mut s.vq[..nq]);
            }
            let y = &mut out[starts[c]..starts[c + 1]];
            chain_t_add(&vals[..d], &s.vq, qdims, &mut s.t1, &mut s.t2, y);
        }
        for qi in 0..nq {
            s.div[qi] *= wq_div[qi];
        }
        chain_t_add(pmats, &s.div, qdims, &mut s.t1, &mut s.t2, &mut out[starts[d]..]);
    }

    /// Interpolates the trace (`deriv = false`) or normal derivative of a
    /// cell tensor of component `c` on its `side` face in direction `dir` to
    /// the face quadrature points.
    fn face_eval(
        &self,
        c: usize,
        dir: usize,
        side: usize,
        deriv: bool,
        u: &[T],
        t1: &mut [T],
        t2: &mut [T],
        out: &mut [T],
    ) {
        let d = self.dim();
        let row = if deriv {
            &self.trace_deriv[side]
        } else {
            &self.trace[side]
        };
        let mats = self.face_mats(c, dir, row);
        chain(&mats[..d], u, self.layout.cell_component_dims(c), t1, t2, out);
    }

    /// Adds `(trace row)ᵀ s + (derivative row)ᵀ t` integrated against the test
    /// functions of component `c` on face `side` in direction `dir`.
    fn face_integrate(
        &self,
        c: usize,
        dir: usize,
        side: usize,
        sv: &[T],
        tv: &[T],
        t1: &mut [T],
        t2: &mut [T],
        out: &mut [T],
    ) {
        let d = self.dim();
        let mut fdims = [1; 3];
        for (i, f) in fdims.iter_mut().enumerate().take(d) {
            *f = if i == dir { 1 } else { self.n_quad() };
        }
        for (row, v) in [(&self.trace[side], sv), (&self.trace_deriv[side], tv)] {
            let mats = self.face_mats(c, dir, row);
            chain_t_add(&mats[..d], v, fdims, t1, t2, out);
        }
    }

    /// Interior face with normal `dir` between cell-local velocity vectors
    /// `um` (lower cell) and `up` (upper cell). Adds into `ym`, `yp`.
    pub fn face_integrals(
        &self,
        dir: usize,
        um: &[T],
        up: &[T],
        ym: &mut [T],
        yp: &mut [T],
        s: &mut Scratch<T>,
    ) {
        let d = self.dim();
        let nf = self.n_quad().pow(d as u32 - 1);
        let starts = &self.cell_starts;
        let w = &self.w_face;
        let gamma = T::of(self.gamma);
        let half = T::of(0.5);
        for c in (0..d).filter(|&c| c != dir) {
            let r = starts[c]..starts[c + 1];
            let [vm, dm, vp, dp] = &mut s.face;
            self.face_eval(c, dir, 1, false, &um[r.clone()], &mut s.t1, &mut s.t2, vm);
            self.face_eval(c, dir, 1, true, &um[r.clone()], &mut s.t1, &mut s.t2, dm);
            self.face_eval(c, dir, 0, false, &up[r.clone()], &mut s.t1, &mut s.t2, vp);
            self.face_eval(c, dir, 0, true, &up[r.clone()], &mut s.t1, &mut s.t2, dp);
            // s = (γ[[u]] − {{∂u}}) w,  t = −½[[u]] w
            for qi in 0..nf {
                let jump = vm[qi] - vp[qi];
                let avg = half * (dm[qi] + dp[qi]);
                vm[qi] = (gamma * jump - avg) * w[qi];
                dm[qi] = -half * jump * w[qi];
                vp[qi] = -vm[qi];
            }
            self.face_integrate(c, dir, 1, vm, dm, &mut s.t1, &mut s.t2, &mut ym[r.clone()]);
            self.face_integrate(c, dir, 0, vp, dm, &mut s.t1, &mut s.t2, &mut yp[r]);
        }
    }

    /// Boundary face with normal `dir` on the `upper` or lower side of a cell.
    /// Adds the Nitsche terms `2γ⟨u,v⟩ − ⟨∂ₙu,v⟩ − ⟨u,∂ₙv⟩` into `y`.
    pub fn boundary_integrals(&self, dir: usize, upper: bool, u: &[T], y: &mut [T], s: &mut Scratch<T>) {
        let d = self.dim();
        let nf = self.n_quad().pow(d as u32 - 1);
        let starts = &self.cell_starts;
        let w = &self.w_face;
        let gamma2 = T::of(2.0 * self.gamma);
        let side = usize::from(upper);
        // ∂ₙ = −∂_dir on the lower side, +∂_dir on the upper side
        let sign = if upper { T::one() } else { -T::one() };
        for c in (0..d).filter(|&c| c != dir) {
            let r = starts[c]..starts[c + 1];
            let [v, dv, ..] = &mut s.face;
            self.face_eval(c, dir, side, false, &u[r.clone()], &mut s.t1, &mut s.t2, v);
            self.face_eval(c, dir, side, true, &u[r.clone()], &mut s.t1, &mut s.t2, dv);
            for qi in 0..nf {
                let (val, dn) = (v[qi], sign * dv[qi]);
                v[qi] = (gamma2 * val - dn) * w[qi];
                dv[qi] = -sign * val * w[qi];
            }
            self.face_integrate(c, dir, side, v, dv, &mut s.t1, &mut s.t2, &mut y[r]);
        }
    }
}

/// Execution mode of the level loops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Serial,
    Parallel,
}

/// Computes one local result per item into a batch buffer and hands each to
/// `scatter` in item order.
pub(crate) fn batched<T, C, S>(
    mode: Execution,
    items: &[usize],
    width: usize,
    make_scratch: impl Fn() -> Scratch<T> + Sync,
    compute: C,
    mut scatter: S,
) where
    T: Real,
    C: Fn(&mut Scratch<T>, usize, &mut [T]) + Sync,
    S: FnMut(usize, &[T]),
{
    let mut buf = vec![T::zero(); BATCH.min(items.len()) * width];
    let mut serial_scratch = (mode == Execution::Serial).then(&make_scratch);
    for chunk in items.chunks(BATCH) {
        let out = &mut buf[..chunk.len() * width];
        match serial_scratch.as_mut() {
            Some(s) => {
                for (o, &it) in out.chunks_mut(width).zip(chunk) {
                    compute(s, it, o);
                }
            }
            None => {
                out.par_chunks_mut(width)
                    .zip(chunk.par_iter())
                    .for_each_init(&make_scratch, |s, (o, &it)| compute(s, it, o));
            }
        }
        for (o, &it) in out.chunks(width).zip(chunk) {
            scatter(it, o);
        }
    }
}

impl<T: Real> OperatorContext<T> {
    /// `y = 𝒜x`.
    pub fn apply(&self, x: &[T], y: &mut [T], mode: Execution) -> Result<()> {
        self.check_len(x, y)?;
        y.fill(T::zero());
        self.accumulate(x, y, None, mode);
        Ok(())
    }

    /// `y += 𝒜x` for an `x` that vanishes outside the cells flagged in
    /// `cells`: only those cells, their faces and their boundary faces are
    /// visited.
    pub fn apply_add_on_cells(&self, x: &[T], y: &mut [T], cells: &[bool], mode: Execution) -> Result<()> {
        self.check_len(x, y)?;
        if cells.len() != self.layout.level().n_cells() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.level().n_cells(),
                found: cells.len(),
            });
        }
        self.accumulate(x, y, Some(cells), mode);
        Ok(())
    }

    fn check_len(&self, x: &[T], y: &[T]) -> Result<()> {
        let n = self.layout.n_dofs();
        if x.len() != n || y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if x.len() != n { x.len() } else { y.len() },
            });
        }
        Ok(())
    }

    fn accumulate(&self, x: &[T], y: &mut [T], mask: Option<&[bool]>, mode: Execution) {
        let lay = &self.layout;
        let level = lay.level();
        let d = level.dim;
        let cl = lay.cell_len();
        let nv = self.cell_starts[d];
        let on = |c: Index| mask.is_none_or(|m| m[level.cell_index(c)]);
        let all: Vec<usize> = (0..level.n_cells())
            .filter(|&i| mask.is_none_or(|m| m[i]))
            .collect();

        batched(
            mode,
            &all,
            cl,
            || self.scratch(),
            |s, cell, out| {
                let c = level.cell_coords(cell);
                let mut local = std::mem::take(&mut s.local);
                lay.gather_cell(x, c, &mut local);
                self.cell_integrals(&local, out, s);
                s.local = local;
            },
            |cell, out| lay.scatter_add_cell(out, level.cell_coords(cell), y),
        );

        for dir in 0..d {
            let faces: Vec<usize> = level
                .interior_faces(dir)
                .filter(|&c| on(c) || on(level.neighbor(c, dir, true).expect("interior face")))
                .map(|c| level.cell_index(c))
                .collect();
            batched(
                mode,
                &faces,
                2 * nv,
                || self.scratch(),
                |s, lower, out| {
                    let cm = level.cell_coords(lower);
                    let cp = level.neighbor(cm, dir, true).expect("interior face");
                    let (mut um, mut up) = (std::mem::take(&mut s.local), std::mem::take(&mut s.other));
                    gather_velocity(lay, x, cm, dir, &mut um);
                    gather_velocity(lay, x, cp, dir, &mut up);
                    out.fill(T::zero());
                    let (ym, yp) = out.split_at_mut(nv);
                    self.face_integrals(dir, &um, &up, ym, yp, s);
                    s.local = um;
                    s.other = up;
                },
                |lower, out| {
                    let cm = level.cell_coords(lower);
                    let cp = level.neighbor(cm, dir, true).expect("interior face");
                    scatter_velocity(lay, &out[..nv], cm, dir, y);
                    scatter_velocity(lay, &out[nv..], cp, dir, y);
                },
            );
        }

        for dir in 0..d {
            for upper in [false, true] {
                let cells: Vec<usize> = level
                    .boundary_cells(dir, upper)
                    .filter(|&c| on(c))
                    .map(|c| level.cell_index(c))
                    .collect();
                batched(
                    mode,
                    &cells,
                    nv,
                    || self.scratch(),
                    |s, cell, out| {
                        let c = level.cell_coords(cell);
                        let mut u = std::mem::take(&mut s.local);
                        gather_velocity(lay, x, c, dir, &mut u);
                        out.fill(T::zero());
                        self.boundary_integrals(dir, upper, &u, out, s);
                        s.local = u;
                    },
                    |cell, out| scatter_velocity(lay, out, level.cell_coords(cell), dir, y),
                );
            }
        }
    }
}

/// Gathers the velocity components tangential to `dir` into the cell-local
/// layout; other entries are left untouched.
fn gather_velocity<T: Real>(lay: &DofLayout, x: &[T], cell: Index, dir: usize, local: &mut [T]) {
    let starts = lay.cell_starts();
    for c in (0..lay.dim).filter(|&c| c != dir) {
        lay.gather_component(c, &x[lay.component_range(c)], cell, &mut local[starts[c]..starts[c + 1]]);
    }
}

fn scatter_velocity<T: Real>(lay: &DofLayout, local: &[T], cell: Index, dir: usize, y: &mut [T]) {
    let starts = lay.cell_starts();
    for c in (0..lay.dim).filter(|&c| c != dir) {
        let r = lay.component_range(c);
        lay.scatter_add_component(c, &local[starts[c]..starts[c + 1]], cell, &mut y[r]);
    }
}

/// Convenience wrapper allocating the result.
pub fn apply_stokes<T: Real>(ctx: &OperatorContext<T>, x: &[T]) -> Result<Vec<T>> {
    let mut y = vec![T::zero(); x.len()];
    ctx.apply(x, &mut y, Execution::Serial)?;
    Ok(y)
}

/// Builds the operator of `level` for degree `k`.
pub fn operator_for<T: Real>(level: &Level, degree: usize) -> Result<OperatorContext<T>> {
    OperatorContext::new(DofLayout::new(level, degree)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense_assemble;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probe_matrix(op: &OperatorContext<f64>) -> DMatrix<f64> {
        let n = op.layout.n_dofs();
        let mut a = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut y = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            op.apply(&e, &mut y, Execution::Serial).unwrap();
            e[j] = 0.0;
            for i in 0..n {
                a[(i, j)] = y[i];
            }
        }
        a
    }

    fn check_against_oracle(dim: usize, level: usize, k: usize) {
        let op = operator_for::<f64>(&Level::new(dim, level), k).unwrap();
        let a = probe_matrix(&op);
        let o = dense_assemble(&op.layout).unwrap();
        let err = (&a - &o).amax() / o.amax();
        assert!(err <= 1e-12, "dim {dim} level {level} k {k}: {err:e}");
    }

    #[test]
    fn matches_oracle_2d() {
        check_against_oracle(2, 0, 1);
        check_against_oracle(2, 1, 1);
        check_against_oracle(2, 1, 2);
        check_against_oracle(2, 0, 3);
    }

    #[test]
    fn matches_oracle_3d_single_level() {
        check_against_oracle(3, 0, 1);
    }

    #[test]
    fn zero_in_zero_out() {
        let op = operator_for::<f64>(&Level::new(2, 1), 2).unwrap();
        let y = apply_stokes(&op, &vec![0.0; op.layout.n_dofs()]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(apply_stokes(&op, &[0.0; 3]).is_err());
    }

    #[test]
    fn parallel_mode_is_bit_identical() {
        let op = operator_for::<f64>(&Level::new(3, 1), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..op.layout.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; x.len()];
        let mut b = vec![0.0; x.len()];
        op.apply(&x, &mut a, Execution::Serial).unwrap();
        op.apply(&x, &mut b, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        op.apply(&x, &mut b, Execution::Serial).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_pressure_cell_integrals() {
        // u = 0, p = const: z = 0 and y_i = p ∫ ∇·φ_i
        let op = operator_for::<f64>(&Level::new(2, 1), 2).unwrap();
        let lay = &op.layout;
        let starts = lay.cell_starts();
        let mut input = vec![0.0; lay.cell_len()];
        input[starts[2]..].fill(2.5);
        let mut out = vec![0.0; lay.cell_len()];
        let mut s = op.scratch();
        op.cell_integrals(&input, &mut out, &mut s);
        assert!(out[starts[2]..].iter().all(|v| v.abs() < 1e-14));
        // ∫_K ∂_x φ_i = h^{d-1} ∫ φ̂_i' (x̂) dx̂ ∫ φ̂_j = h (φ̂_i(1) − φ̂_i(0)) w_j
        let bp = Basis1D::lagrange(3);
        let ints = Basis1D::lagrange(2).integrals();
        let dims = lay.cell_component_dims(0);
        for a1 in 0..dims[1] {
            for a0 in 0..dims[0] {
                let expect = 2.5 * lay.h * (bp.value(a0, 1.0) - bp.value(a0, 0.0)) * ints[a1];
                assert!((out[a0 + dims[0] * a1] - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn constant_velocity_has_no_gradient_term() {
        let op = operator_for::<f64>(&Level::new(3, 0), 2).unwrap();
        let lay = &op.layout;
        let starts = lay.cell_starts();
        let mut input = vec![0.0; lay.cell_len()];
        input[..starts[3]].fill(1.0);
        let mut out = vec![0.0; lay.cell_len()];
        let mut s = op.scratch();
        op.cell_integrals(&input, &mut out, &mut s);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn face_terms_are_bilinear_and_penalty_free_for_smooth_continuation() {
        let op = operator_for::<f64>(&Level::new(2, 1), 2).unwrap();
        let lay = &op.layout;
        let nv = lay.cell_starts()[2];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let um: Vec<f64> = (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut s = op.scratch();
        let (mut ym, mut yp) = (vec![0.0; nv], vec![0.0; nv]);
        op.face_integrals(0, &um, &up, &mut ym, &mut yp, &mut s);
        let um2: Vec<f64> = um.iter().map(|v| 2.0 * v).collect();
        let up2: Vec<f64> = up.iter().map(|v| 2.0 * v).collect();
        let (mut ym2, mut yp2) = (vec![0.0; nv], vec![0.0; nv]);
        op.face_integrals(0, &um2, &up2, &mut ym2, &mut yp2, &mut s);
        for i in 0..nv {
            assert!((ym2[i] - 2.0 * ym[i]).abs() < 1e-12);
            assert!((yp2[i] - 2.0 * yp[i]).abs() < 1e-12);
        }

        // a globally linear tangential field y ↦ y has zero jump and zero
        // normal derivative: every face contribution vanishes
        let starts = lay.cell_starts();
        let dims = lay.cell_component_dims(1);
        let nodes = Basis1D::lagrange(3).nodes;
        let mut lin = vec![0.0; nv];
        for a1 in 0..dims[1] {
            for a0 in 0..dims[0] {
                lin[starts[1] + a0 + dims[0] * a1] = nodes[a1];
            }
        }
        let (mut y1, mut y2) = (vec![0.0; nv], vec![0.0; nv]);
        op.face_integrals(0, &lin, &lin, &mut y1, &mut y2, &mut s);
        assert!(y1.iter().chain(&y2).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn boundary_terms_vanish_for_zero_trace_and_derivative() {
        let op = operator_for::<f64>(&Level::new(2, 1), 1).unwrap();
        let nv = op.layout.cell_starts()[2];
        let mut s = op.scratch();
        let mut y = vec![0.0; nv];
        op.boundary_integrals(0, false, &vec![0.0; nv], &mut y, &mut s);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn penalty_part_scales_with_gamma() {
        let lay = DofLayout::new(&Level::new(2, 1), 1).unwrap();
        let op1 = OperatorContext::<f64>::new(lay.clone()).unwrap();
        let mut op2 = op1.clone();
        op2.gamma *= 2.0;
        let mut op0 = op1.clone();
        op0.gamma = 0.0;
        let nv = lay.cell_starts()[2];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u: Vec<f64> = (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut s = op1.scratch();
        let run = |op: &OperatorContext<f64>, s: &mut Scratch<f64>| {
            let mut y = vec![0.0; nv];
            op.boundary_integrals(1, true, &u, &mut y, s);
            y
        };
        let (y0, y1, y2) = (run(&op0, &mut s), run(&op1, &mut s), run(&op2, &mut s));
        for i in 0..nv {
            assert!(((y2[i] - y0[i]) - 2.0 * (y1[i] - y0[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn masked_apply_matches_full_apply_on_supported_input() {
        let level = Level::new(2, 1);
        let op = operator_for::<f64>(&level, 2).unwrap();
        let lay = &op.layout;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mask = vec![false; level.n_cells()];
        for i in [0, 5, 6, 15] {
            mask[i] = true;
        }
        // random values on the cell-owned coefficients of the flagged cells only
        let mut x = vec![0.0; lay.n_dofs()];
        let mut local = vec![0.0; lay.cell_len()];
        for (i, &on) in mask.iter().enumerate() {
            if on {
                local.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                let c = level.cell_coords(i);
                let mut owned = vec![0.0; lay.n_dofs()];
                lay.scatter_add_cell(&local, c, &mut owned);
                // keep only coefficients not shared with unflagged cells
                for dir in 0..2 {
                    for upper in [false, true] {
                        if let Some(nb) = level.neighbor(c, dir, upper) {
                            if !mask[level.cell_index(nb)] {
                                let mut shared = vec![0.0; lay.n_dofs()];
                                lay.scatter_add_cell(&vec![1.0; lay.cell_len()], nb, &mut shared);
                                for (o, s) in owned.iter_mut().zip(&shared) {
                                    if *s != 0.0 {
                                        *o = 0.0;
                                    }
                                }
                            }
                        }
                    }
                }
                for (xi, o) in x.iter_mut().zip(&owned) {
                    *xi += o;
                }
            }
        }
        let full = apply_stokes(&op, &x).unwrap();
        let mut part = vec![1.0; x.len()];
        op.apply_add_on_cells(&x, &mut part, &mask, Execution::Serial).unwrap();
        for (a, b) in full.iter().zip(&part) {
            assert!((a + 1.0 - b).abs() < 1e-12);
        }
    }
}
