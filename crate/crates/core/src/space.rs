//! Degree-of-freedom layout of `RT_k × Q_k` on one level.
//!
//! Only free coefficients are stored. Velocity component `c` is a global tensor
//! with `m(k+1) − 1` entries in direction `c` (continuous nodes of degree
//! `k+1`, boundary nodes removed) and `m(k+1)` entries in every other
//! direction (discontinuous nodes of degree `k`). The pressure is a global
//! tensor with `m(k+1)` entries per direction. All tensors are lexicographic
//! with the first index running fastest; blocks are stored one after another
//! as `[u_0, …, u_{d−1}, p]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem1d::Basis1D;
use crate::mesh::{Index, Level};
use crate::scalar::Real;
use crate::tensor::tensor_len;

/// Largest supported degree `k`.
pub const MAX_DEGREE: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct DofLayout {
    pub dim: usize,
    pub degree: usize,
    /// Cells per direction.
    pub m: usize,
    pub h: f64,
    comp_dims: [[usize; 3]; 3],
    pressure_dims: [usize; 3],
    starts: Vec<usize>,
    cell_starts: Vec<usize>,
    patch_starts: Vec<usize>,
    /// `∫ψ_a` on the reference interval for the pressure basis.
    pressure_integrals: Vec<f64>,
}

/// Shorthand for [`DofLayout::new`].
pub fn build_layout(level: &Level, degree: usize) -> Result<DofLayout> {
    DofLayout::new(level, degree)
}

impl DofLayout {
    pub fn new(level: &Level, degree: usize) -> Result<Self> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::invalid(format!(
                "degree must be in 1..={MAX_DEGREE}, got {degree}"
            )));
        }
        let (d, m, k) = (level.dim, level.m, degree);
        let n = m * (k + 1);
        let mut comp_dims = [[1; 3]; 3];
        for (c, dims) in comp_dims.iter_mut().enumerate().take(d) {
            for (j, dj) in dims.iter_mut().enumerate().take(d) {
                *dj = if j == c { n - 1 } else { n };
            }
        }
        let mut pressure_dims = [1; 3];
        pressure_dims[..d].fill(n);
        let mut starts = vec![0];
        for dims in comp_dims.iter().take(d) {
            starts.push(starts.last().unwrap() + tensor_len(dims));
        }
        starts.push(starts.last().unwrap() + tensor_len(&pressure_dims));
        let mut layout = Self {
            dim: d,
            degree: k,
            m,
            h: level.h(),
            comp_dims,
            pressure_dims,
            starts,
            cell_starts: Vec::new(),
            patch_starts: Vec::new(),
            pressure_integrals: Basis1D::lagrange(k).integrals(),
        };
        layout.cell_starts = layout.compute_cell_starts();
        layout.patch_starts = layout.compute_patch_starts();
        Ok(layout)
    }

    pub fn level(&self) -> Level {
        Level {
            dim: self.dim,
            level: self.m.trailing_zeros() as usize - 1,
            m: self.m,
        }
    }

    /// Global tensor shape of velocity component `c`.
    pub fn component_dims(&self, c: usize) -> &[usize] {
        &self.comp_dims[c][..self.dim]
    }

    pub fn pressure_dims(&self) -> &[usize] {
        &self.pressure_dims[..self.dim]
    }

    pub fn component_range(&self, c: usize) -> std::ops::Range<usize> {
        self.starts[c]..self.starts[c + 1]
    }

    pub fn velocity_range(&self) -> std::ops::Range<usize> {
        0..self.starts[self.dim]
    }

    pub fn pressure_range(&self) -> std::ops::Range<usize> {
        self.starts[self.dim]..self.starts[self.dim + 1]
    }

    pub fn n_velocity(&self) -> usize {
        self.starts[self.dim]
    }

    pub fn n_pressure(&self) -> usize {
        self.pressure_range().len()
    }

    pub fn n_dofs(&self) -> usize {
        self.starts[self.dim + 1]
    }

    /// Block boundaries `[0, end(u_0), …, end(u_{d−1}), end(p)]`.
    pub fn block_starts(&self) -> &[usize] {
        &self.starts
    }

    /// Velocity coefficients of component `c` including the constrained
    /// boundary-normal ones.
    pub fn component_total(&self, c: usize) -> usize {
        tensor_len(self.component_dims(c)) / (self.m * (self.degree + 1) - 1)
            * (self.m * (self.degree + 1) + 1)
    }

    /// Number of constrained boundary-normal coefficients of component `c`.
    pub fn constrained(&self, c: usize) -> usize {
        self.component_total(c) - tensor_len(self.component_dims(c))
    }

    /// Local tensor shape of velocity component `c` on a cell.
    pub fn cell_component_dims(&self, c: usize) -> [usize; 3] {
        let mut dims = [1; 3];
        for (j, dj) in dims.iter_mut().enumerate().take(self.dim) {
            *dj = self.degree + 1 + usize::from(j == c);
        }
        dims
    }

    pub fn cell_pressure_dims(&self) -> [usize; 3] {
        let mut dims = [1; 3];
        dims[..self.dim].fill(self.degree + 1);
        dims
    }

    /// Offsets of the cell-local blocks `[u_0, …, u_{d−1}, p]` and the total size.
    pub fn cell_starts(&self) -> &[usize] {
        &self.cell_starts
    }

    fn compute_cell_starts(&self) -> Vec<usize> {
        let mut s = vec![0];
        for c in 0..self.dim {
            s.push(s.last().unwrap() + tensor_len(&self.cell_component_dims(c)));
        }
        s.push(s.last().unwrap() + tensor_len(&self.cell_pressure_dims()));
        s
    }

    pub fn cell_len(&self) -> usize {
        *self.cell_starts().last().unwrap()
    }

    /// Global 1D index of local node `a` of cell `e` in direction `j` for
    /// velocity component `c`; `None` for a removed boundary node.
    #[inline]
    pub fn velocity_index_1d(&self, c: usize, j: usize, e: usize, a: usize) -> Option<usize> {
        let g = e * (self.degree + 1) + a;
        if j == c {
            (g >= 1 && g < self.m * (self.degree + 1)).then(|| g - 1)
        } else {
            Some(g)
        }
    }

    /// Calls `f(local, global)` for every free velocity coefficient of
    /// component `c` on `cell`; `local` is the index inside the component's
    /// cell tensor.
    pub fn for_each_component_dof(&self, c: usize, cell: Index, mut f: impl FnMut(usize, usize)) {
        let ld = self.cell_component_dims(c);
        let gd = self.comp_dims[c];
        let mut idx1 = [[None; MAX_DEGREE + 2]; 3];
        for j in 0..self.dim {
            for a in 0..ld[j] {
                idx1[j][a] = self.velocity_index_1d(c, j, cell[j], a);
            }
        }
        if self.dim == 2 {
            idx1[2][0] = Some(0);
        }
        let mut local = 0;
        for a2 in 0..ld[2] {
            for a1 in 0..ld[1] {
                for a0 in 0..ld[0] {
                    if let (Some(g0), Some(g1), Some(g2)) = (idx1[0][a0], idx1[1][a1], idx1[2][a2]) {
                        f(local, g0 + gd[0] * (g1 + gd[1] * g2));
                    }
                    local += 1;
                }
            }
        }
    }

    /// Calls `f(local, global)` for every pressure coefficient of `cell`.
    pub fn for_each_pressure_dof(&self, cell: Index, mut f: impl FnMut(usize, usize)) {
        let n = self.degree + 1;
        let gd = self.pressure_dims;
        let nz = if self.dim == 3 { n } else { 1 };
        let mut local = 0;
        for a2 in 0..nz {
            for a1 in 0..n {
                for a0 in 0..n {
                    let g = cell[0] * n + a0 + gd[0] * (cell[1] * n + a1 + gd[1] * (cell[2] * n + a2));
                    f(local, g);
                    local += 1;
                }
            }
        }
    }

    /// Reads the cell-local vector (all velocity components, then pressure).
    /// Constrained coefficients read as zero.
    pub fn gather_cell<T: Real>(&self, global: &[T], cell: Index, local: &mut [T]) {
        let starts = self.cell_starts();
        for c in 0..self.dim {
            let (lo, go) = (starts[c], self.starts[c]);
            local[lo..starts[c + 1]].fill(T::zero());
            self.for_each_component_dof(c, cell, |l, g| local[lo + l] = global[go + g]);
        }
        let (lo, go) = (starts[self.dim], self.starts[self.dim]);
        self.for_each_pressure_dof(cell, |l, g| local[lo + l] = global[go + g]);
    }

    /// Adds a cell-local vector into the global vector. Entries belonging to
    /// constrained coefficients are dropped.
    pub fn scatter_add_cell<T: Real>(&self, local: &[T], cell: Index, global: &mut [T]) {
        let starts = self.cell_starts();
        for c in 0..self.dim {
            let (lo, go) = (starts[c], self.starts[c]);
            self.for_each_component_dof(c, cell, |l, g| global[go + g] += local[lo + l]);
        }
        let (lo, go) = (starts[self.dim], self.starts[self.dim]);
        self.for_each_pressure_dof(cell, |l, g| global[go + g] += local[lo + l]);
    }

    /// Reads the cell tensor of velocity component `c` from the component block.
    pub fn gather_component<T: Real>(&self, c: usize, block: &[T], cell: Index, local: &mut [T]) {
        local.fill(T::zero());
        self.for_each_component_dof(c, cell, |l, g| local[l] = block[g]);
    }

    /// Adds a cell tensor of velocity component `c` into the component block.
    pub fn scatter_add_component<T: Real>(&self, c: usize, local: &[T], cell: Index, block: &mut [T]) {
        self.for_each_component_dof(c, cell, |l, g| block[g] += local[l]);
    }

    /// Quadrature weights `∫_Ω ψ_i` of the pressure basis functions.
    pub fn pressure_weights(&self) -> Vec<f64> {
        let n = self.degree + 1;
        let hd = self.h.powi(self.dim as i32);
        let gd = self.pressure_dims;
        let mut w = vec![0.0; self.n_pressure()];
        for (g, wg) in w.iter_mut().enumerate() {
            let mut v = hd;
            let mut rest = g;
            for &len in gd.iter().take(self.dim) {
                v *= self.pressure_integrals[(rest % len) % n];
                rest /= len;
            }
            *wg = v;
        }
        w
    }

    /// Subtracts the mass-weighted mean so that `∫ p_h = 0`.
    pub fn project_zero_mean<T: Real>(&self, pressure: &mut [T]) {
        let w = self.pressure_weights();
        let mean: f64 = pressure.iter().zip(&w).map(|(p, w)| p.as_f64() * w).sum();
        let mean = T::of(mean);
        pressure.iter_mut().for_each(|p| *p -= mean);
    }
}

/// Axis-aligned sub-box of a global tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorBox {
    pub start: [usize; 3],
    pub dims: [usize; 3],
}

impl TensorBox {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Calls `f(local_offset, global_offset, run)` for every contiguous run
    /// along the first direction of a global tensor of shape `global`.
    #[inline]
    fn for_each_run(&self, global: &[usize], mut f: impl FnMut(usize, usize, usize)) {
        let g1 = if global.len() > 1 { global[1] } else { 1 };
        let mut local = 0;
        for i2 in 0..self.dims[2] {
            for i1 in 0..self.dims[1] {
                let g = self.start[0]
                    + global[0] * ((self.start[1] + i1) + g1 * (self.start[2] + i2));
                f(local, g, self.dims[0]);
                local += self.dims[0];
            }
        }
    }

    /// Copies the box out of a global tensor.
    pub fn gather<T: Copy>(&self, global_dims: &[usize], global: &[T], out: &mut [T]) {
        self.for_each_run(global_dims, |l, g, n| out[l..l + n].copy_from_slice(&global[g..g + n]));
    }

    /// Adds box values into a global tensor.
    pub fn scatter_add<T: Real>(&self, global_dims: &[usize], local: &[T], global: &mut [T]) {
        self.for_each_run(global_dims, |l, g, n| {
            for (y, &x) in global[g..g + n].iter_mut().zip(&local[l..l + n]) {
                *y += x;
            }
        });
    }

    /// Global indices of the box entries in box order.
    pub fn indices(&self, global_dims: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each_run(global_dims, |_, g, n| out.extend(g..g + n));
        out
    }
}

impl DofLayout {
    /// Free coefficients of component `c` supported on the vertex patch
    /// around `vertex`: `2k+1` nodes strictly inside the patch in direction
    /// `c`, `2k+2` discontinuous nodes in the other directions.
    pub fn patch_component_box(&self, c: usize, vertex: Index) -> TensorBox {
        let n = self.degree + 1;
        let mut b = TensorBox {
            start: [0; 3],
            dims: [1; 3],
        };
        for j in 0..self.dim {
            b.start[j] = (vertex[j] - 1) * n;
            b.dims[j] = 2 * n - usize::from(j == c);
        }
        b
    }

    /// Pressure coefficients of the `2^d` patch cells.
    pub fn patch_pressure_box(&self, vertex: Index) -> TensorBox {
        let n = self.degree + 1;
        let mut b = TensorBox {
            start: [0; 3],
            dims: [1; 3],
        };
        for j in 0..self.dim {
            b.start[j] = (vertex[j] - 1) * n;
            b.dims[j] = 2 * n;
        }
        b
    }

    /// Offsets of the patch-local blocks `[u_0, …, u_{d−1}, p]` and the total size.
    pub fn patch_starts(&self) -> &[usize] {
        &self.patch_starts
    }

    pub fn patch_len(&self) -> usize {
        *self.patch_starts.last().unwrap()
    }

    fn compute_patch_starts(&self) -> Vec<usize> {
        let v = [1; 3];
        let mut s = vec![0];
        for c in 0..self.dim {
            s.push(s.last().unwrap() + self.patch_component_box(c, v).len());
        }
        s.push(s.last().unwrap() + self.patch_pressure_box(v).len());
        s
    }

    /// Global indices of the patch coefficients in patch-local order.
    pub fn patch_indices(&self, vertex: Index) -> Vec<usize> {
        let mut out = Vec::new();
        for c in 0..self.dim {
            let off = self.starts[c];
            let b = self.patch_component_box(c, vertex);
            out.extend(b.indices(self.component_dims(c)).into_iter().map(|g| g + off));
        }
        let off = self.starts[self.dim];
        let b = self.patch_pressure_box(vertex);
        out.extend(b.indices(self.pressure_dims()).into_iter().map(|g| g + off));
        out
    }

    /// Restriction `R_j x` onto the patch around `vertex`.
    pub fn gather_patch<T: Real>(&self, global: &[T], vertex: Index, local: &mut [T]) {
        let ps = self.patch_starts();
        for c in 0..self.dim {
            let b = self.patch_component_box(c, vertex);
            b.gather(self.component_dims(c), &global[self.component_range(c)], &mut local[ps[c]..ps[c + 1]]);
        }
        let b = self.patch_pressure_box(vertex);
        b.gather(self.pressure_dims(), &global[self.pressure_range()], &mut local[ps[self.dim]..]);
    }

    /// Prolongation `R_jᵀ y` added into the global vector.
    pub fn scatter_add_patch<T: Real>(&self, local: &[T], vertex: Index, global: &mut [T]) {
        let ps = self.patch_starts();
        for c in 0..self.dim {
            let b = self.patch_component_box(c, vertex);
            let r = self.component_range(c);
            b.scatter_add(self.component_dims(c), &local[ps[c]..ps[c + 1]], &mut global[r]);
        }
        let b = self.patch_pressure_box(vertex);
        let r = self.pressure_range();
        b.scatter_add(self.pressure_dims(), &local[ps[self.dim]..], &mut global[r]);
    }
}

/// Subtracts the arithmetic mean of the coefficients. The constant pressure
/// is the all-ones coefficient vector, which spans the kernel of `Bᵀ`, and the
/// range of `B` is Euclidean-orthogonal to it.
pub fn project_coefficient_mean<T: Real>(pressure: &mut [T]) {
    if pressure.is_empty() {
        return;
    }
    let mean = pressure.iter().copied().sum::<T>() / T::of(pressure.len() as f64);
    pressure.iter_mut().for_each(|p| *p -= mean);
}

/// Global coefficient vector split into velocity components and pressure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockVector<T> {
    data: Vec<T>,
    starts: Vec<usize>,
}

impl<T: Real> BlockVector<T> {
    pub fn zeros(layout: &DofLayout) -> Self {
        Self {
            data: vec![T::zero(); layout.n_dofs()],
            starts: layout.block_starts().to_vec(),
        }
    }

    pub fn from_vec(layout: &DofLayout, data: Vec<T>) -> Result<Self> {
        if data.len() != layout.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: layout.n_dofs(),
                found: data.len(),
            });
        }
        Ok(Self {
            data,
            starts: layout.block_starts().to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.starts.len() - 2
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[T] {
        &self.data[self.starts[c]..self.starts[c + 1]]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.data[self.starts[c]..self.starts[c + 1]]
    }

    pub fn velocity(&self) -> &[T] {
        &self.data[..self.starts[self.dim()]]
    }

    pub fn pressure(&self) -> &[T] {
        &self.data[self.starts[self.dim()]..]
    }

    pub fn pressure_mut(&mut self) -> &mut [T] {
        let s = self.starts[self.dim()];
        &mut self.data[s..]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Precision label of the scalar type.
    pub fn precision(&self) -> &'static str {
        T::NAME
    }

    pub fn cast<U: Real>(&self) -> BlockVector<U> {
        BlockVector {
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            starts: self.starts.clone(),
        }
    }
}
