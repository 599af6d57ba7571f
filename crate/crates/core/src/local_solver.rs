//! Exact solvers for the vertex patch problems `𝒜_j = R_j 𝒜 R_jᵀ`.
//!
//! On a patch the velocity block of every component is a Kronecker sum
//! `A_c = Σ_j ⊗_i (i = j ? L_{c,i} : M_{c,i})` of 1D interior penalty
//! Laplacians and mass matrices, and `B_c = ⊗_i (i = c ? D_c : M′_i)`.
//! `A_c⁻¹` is applied by fast diagonalization; the Schur solver runs CG on
//! `B A⁻¹ Bᵀ` in the complement of the constant pressure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem1d::{penalty, EndCondition, Space1D};
use crate::mesh::Index;
use crate::oracle::{deflated_inverse, pressure_kernel};
use crate::scalar::Real;
use crate::solver::{cg_tolerance_floor, pcg};
use crate::space::{project_coefficient_mean, DofLayout};
use crate::tensor::{contract, kron, tensor_len, SmallMat};

/// Relative tolerance of the inner Schur complement CG. The smoother only
/// needs an approximate patch solve; tighter values leave the multigrid
/// contraction unchanged.
pub const SCHUR_CG_TOL: f64 = 1e-6;
/// Iteration cap of the inner Schur complement CG.
pub const SCHUR_CG_MAX_ITER: usize = 100;

/// Per direction: bit 0 set if the patch touches the lower domain boundary,
/// bit 1 if it touches the upper one.
pub type PatchKind = [u8; 3];

/// Boundary kind of the patch around `vertex`.
pub fn patch_kind(layout: &DofLayout, vertex: Index) -> PatchKind {
    let mut kind = [0u8; 3];
    for (j, kj) in kind.iter_mut().enumerate().take(layout.dim) {
        *kj = u8::from(vertex[j] == 1) | (u8::from(vertex[j] + 1 == layout.m) << 1);
    }
    kind
}

fn kind_code(kind: PatchKind) -> usize {
    kind[0] as usize + 4 * kind[1] as usize + 16 * kind[2] as usize
}

/// Which local solver the smoother uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalSolverKind {
    /// Fast diagonalization plus CG on the pressure Schur complement.
    #[default]
    Schur,
    /// Dense pseudo-inverse of the patch matrix, one per patch kind.
    Direct,
}

impl LocalSolverKind {
    pub fn name(self) -> &'static str {
        match self {
            LocalSolverKind::Schur => "schur",
            LocalSolverKind::Direct => "direct",
        }
    }
}

/// The 1D factors of one patch kind.
#[derive(Clone, Debug)]
pub struct PatchMatrices {
    pub dim: usize,
    pub degree: usize,
    pub kind: PatchKind,
    /// `lap[c][j]`: 1D Laplacian of component `c` in direction `j`.
    pub lap: Vec<[DMatrix<f64>; 3]>,
    /// `mass[c][j]`: 1D mass matrix of component `c` in direction `j`.
    pub mass: Vec<[DMatrix<f64>; 3]>,
    /// `div[c][j]`: pressure-by-velocity factor of `B_c` in direction `j`.
    pub div: Vec<[DMatrix<f64>; 3]>,
}

/// 1D factors for the patches of kind `kind` on the level of `layout`.
pub fn build_patch_matrices(layout: &DofLayout, kind: PatchKind) -> Result<PatchMatrices> {
    let (d, k, h) = (layout.dim, layout.degree, layout.h);
    let gamma = penalty(k, h);
    let end = |at_boundary: bool| {
        if at_boundary {
            EndCondition::WeakNitsche
        } else {
            EndCondition::Interface
        }
    };
    let empty = || [DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)];
    let mut lap = vec![empty(); d];
    let mut mass = vec![empty(); d];
    let mut div = vec![empty(); d];
    for c in 0..d {
        for j in 0..d {
            let pressure = Space1D::discontinuous(k, 2, h, EndCondition::None, EndCondition::None)?;
            let space = if j == c {
                Space1D::continuous_zero(k + 1, 2, h)?
            } else {
                Space1D::discontinuous(k, 2, h, end(kind[j] & 1 != 0), end(kind[j] & 2 != 0))?
            };
            lap[c][j] = space.laplace(gamma)?;
            mass[c][j] = space.mass();
            div[c][j] = if j == c {
                pressure.mixed_derivative(&space)?
            } else {
                pressure.mixed_mass(&space)?
            };
        }
    }
    Ok(PatchMatrices {
        dim: d,
        degree: k,
        kind,
        lap,
        mass,
        div,
    })
}

impl PatchMatrices {
    /// Kronecker product `⊗_i f(i)` with direction 0 running fastest.
    fn kron_all(&self, f: impl Fn(usize) -> DMatrix<f64>) -> DMatrix<f64> {
        let mut out = f(0);
        for j in 1..self.dim {
            out = kron(&f(j), &out);
        }
        out
    }

    /// Dense velocity block `A_c`.
    pub fn velocity_block(&self, c: usize) -> DMatrix<f64> {
        let mut out: Option<DMatrix<f64>> = None;
        for j in 0..self.dim {
            let term = self.kron_all(|i| {
                if i == j {
                    self.lap[c][i].clone()
                } else {
                    self.mass[c][i].clone()
                }
            });
            out = Some(match out {
                Some(o) => o + term,
                None => term,
            });
        }
        out.expect("dim >= 1")
    }

    /// Dense divergence block `B_c` (pressure rows, component `c` columns).
    pub fn divergence_block(&self, c: usize) -> DMatrix<f64> {
        self.kron_all(|i| self.div[c][i].clone())
    }

    /// Dense patch saddle point matrix in patch-local order.
    pub fn dense(&self) -> DMatrix<f64> {
        let blocks: Vec<DMatrix<f64>> = (0..self.dim).map(|c| self.velocity_block(c)).collect();
        let divs: Vec<DMatrix<f64>> = (0..self.dim).map(|c| self.divergence_block(c)).collect();
        let nv: usize = blocks.iter().map(|b| b.nrows()).sum();
        let np = divs[0].nrows();
        let mut out = DMatrix::zeros(nv + np, nv + np);
        let mut off = 0;
        for (a, b) in blocks.iter().zip(&divs) {
            let n = a.nrows();
            out.view_mut((off, off), (n, n)).copy_from(a);
            out.view_mut((nv, off), (np, n)).copy_from(b);
            out.view_mut((off, nv), (n, np)).copy_from(&b.transpose());
            off += n;
        }
        out
    }
}

/// Generalized eigendecomposition `L S = M S Λ` with `Sᵀ M S = I`.
#[derive(Clone, Debug)]
pub struct FastDiag1D {
    pub eigenvectors: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

/// Fast diagonalization factors of a symmetric `l` and an SPD `m`.
pub fn fast_diag_1d(l: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<FastDiag1D> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("1D mass matrix".into()))?;
    let r_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("1D mass matrix factor".into()))?;
    let c = &r_inv * l * r_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    Ok(FastDiag1D {
        eigenvectors: r_inv.transpose() * eig.eigenvectors,
        eigenvalues: eig.eigenvalues,
    })
}

/// Tensor factors of one patch kind in working precision.
#[derive(Clone, Debug)]
pub struct PatchSolverData<T> {
    dim: usize,
    comp_dims: Vec<[usize; 3]>,
    p_dims: [usize; 3],
    /// `s[c][j]` and its transpose.
    s: Vec<[SmallMat<T>; 3]>,
    st: Vec<[SmallMat<T>; 3]>,
    /// `1 / Σ_j λ_{c,j}` on the tensor grid of component `c`.
    inv_diag: Vec<Vec<T>>,
    lap: Vec<[SmallMat<T>; 3]>,
    mass: Vec<[SmallMat<T>; 3]>,
    b: Vec<[SmallMat<T>; 3]>,
    bt: Vec<[SmallMat<T>; 3]>,
    /// Inverse 1D pressure mass matrices, the Schur CG preconditioner.
    p_mass_inv: [SmallMat<T>; 3],
    /// `g[c][j] = S_{c,j}ᵀ B_{c,j}ᵀ` and its transpose, so that
    /// `B_c A_c⁻¹ B_cᵀ = (⊗gᵀ) diag (⊗g)`.
    g: Vec<[SmallMat<T>; 3]>,
    gt: Vec<[SmallMat<T>; 3]>,
    offsets: Vec<usize>,
}

/// Eigen factors and Kronecker data for the Schur local solver.
pub fn fast_diag_prepare<T: Real>(pm: &PatchMatrices) -> Result<PatchSolverData<T>> {
    let d = pm.dim;
    let one = || [SmallMat::identity(1), SmallMat::identity(1), SmallMat::identity(1)];
    let mut out = PatchSolverData {
        dim: d,
        comp_dims: vec![[1; 3]; d],
        p_dims: [1; 3],
        s: vec![one(); d],
        st: vec![one(); d],
        inv_diag: Vec::with_capacity(d),
        lap: vec![one(); d],
        mass: vec![one(); d],
        b: vec![one(); d],
        bt: vec![one(); d],
        p_mass_inv: one(),
        g: vec![one(); d],
        gt: vec![one(); d],
        offsets: vec![0],
    };
    // for j ≠ c the mixed factor pairs two copies of the discontinuous
    // degree k basis, so it is the pressure mass matrix in direction j
    for j in 0..d {
        let mp = &pm.div[(j + 1) % d][j];
        let inv = mp
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite(format!("patch pressure mass in direction {j}")))?
            .inverse();
        out.p_mass_inv[j] = SmallMat::from_dmatrix(&inv);
    }
    for c in 0..d {
        let mut lambdas = Vec::with_capacity(d);
        for j in 0..d {
            let fd = fast_diag_1d(&pm.lap[c][j], &pm.mass[c][j])?;
            out.comp_dims[c][j] = fd.eigenvalues.len();
            out.p_dims[j] = pm.div[c][j].nrows();
            out.s[c][j] = SmallMat::from_dmatrix(&fd.eigenvectors);
            out.st[c][j] = SmallMat::from_dmatrix(&fd.eigenvectors.transpose());
            out.lap[c][j] = SmallMat::from_dmatrix(&pm.lap[c][j]);
            out.mass[c][j] = SmallMat::from_dmatrix(&pm.mass[c][j]);
            out.b[c][j] = SmallMat::from_dmatrix(&pm.div[c][j]);
            out.bt[c][j] = SmallMat::from_dmatrix(&pm.div[c][j].transpose());
            let g = fd.eigenvectors.transpose() * pm.div[c][j].transpose();
            out.g[c][j] = SmallMat::from_dmatrix(&g);
            out.gt[c][j] = SmallMat::from_dmatrix(&g.transpose());
            lambdas.push(fd.eigenvalues);
        }
        let dims = out.comp_dims[c];
        let mut diag = Vec::with_capacity(tensor_len(&dims));
        for i2 in 0..dims[2] {
            for i1 in 0..dims[1] {
                for i0 in 0..dims[0] {
                    let idx = [i0, i1, i2];
                    let sum: f64 = (0..d).map(|j| lambdas[j][idx[j]]).sum();
                    if !(sum > 0.0) {
                        return Err(Error::NotPositiveDefinite(format!(
                            "patch velocity block of component {c}"
                        )));
                    }
                    diag.push(T::of(1.0 / sum));
                }
            }
        }
        out.inv_diag.push(diag);
        out.offsets.push(out.offsets[c] + tensor_len(&out.comp_dims[c][..d]));
    }
    Ok(out)
}

/// Work buffers for patch solves.
#[derive(Clone, Debug)]
pub struct LocalScratch<T> {
    w1: Vec<T>,
    w2: Vec<T>,
    vel: Vec<T>,
    vel2: Vec<T>,
    comp: Vec<T>,
    pres: Vec<T>,
}

impl<T: Real> LocalScratch<T> {
    /// Buffers for patches of up to `len` entries.
    pub fn new(len: usize) -> Self {
        Self {
            w1: vec![T::zero(); len],
            w2: vec![T::zero(); len],
            vel: vec![T::zero(); len],
            vel2: vec![T::zero(); len],
            comp: vec![T::zero(); len],
            pres: vec![T::zero(); len],
        }
    }
}

/// `out = (⊗_j mats[j]) input` for a tensor of shape `dims`.
fn kron_apply<T: Real>(
    mats: &[SmallMat<T>; 3],
    dim: usize,
    input: &[T],
    dims: [usize; 3],
    out: &mut [T],
    w1: &mut [T],
    w2: &mut [T],
) {
    let mut shape = dims;
    let n_in = tensor_len(&shape[..dim]);
    w1[..n_in].copy_from_slice(&input[..n_in]);
    let (mut src, mut dst) = (w1, w2);
    for (j, mat) in mats.iter().enumerate().take(dim) {
        let n_out = tensor_len(&shape[..dim]) / shape[j] * mat.rows();
        contract(mat, &src[..tensor_len(&shape[..dim])], &shape[..dim], j, &mut dst[..n_out]);
        shape[j] = mat.rows();
        std::mem::swap(&mut src, &mut dst);
    }
    let n = tensor_len(&shape[..dim]);
    out[..n].copy_from_slice(&src[..n]);
}

impl<T: Real> PatchSolverData<T> {
    pub fn component_len(&self, c: usize) -> usize {
        tensor_len(&self.comp_dims[c][..self.dim])
    }

    pub fn pressure_len(&self) -> usize {
        tensor_len(&self.p_dims[..self.dim])
    }

    pub fn velocity_len(&self) -> usize {
        (0..self.dim).map(|c| self.component_len(c)).sum()
    }

    fn comp_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// `y = B A⁻¹ Bᵀ v` with the 1D factors of `Bᵀ` merged into the
    /// eigenvector transforms.
    pub fn apply_schur(&self, v: &[T], y: &mut [T], s: &mut LocalScratch<T>) {
        let np = self.pressure_len();
        y[..np].fill(T::zero());
        for c in 0..self.dim {
            let n = self.component_len(c);
            kron_apply(&self.g[c], self.dim, v, self.p_dims, &mut s.comp, &mut s.w1, &mut s.w2);
            for (w, &dg) in s.comp[..n].iter_mut().zip(&self.inv_diag[c]) {
                *w *= dg;
            }
            kron_apply(&self.gt[c], self.dim, &s.comp, self.comp_dims[c], &mut s.pres, &mut s.w1, &mut s.w2);
            for (o, &p) in y[..np].iter_mut().zip(&s.pres[..np]) {
                *o += p;
            }
        }
    }

    /// `out = A_c u` through the Kronecker sum.
    pub fn apply_a(&self, c: usize, u: &[T], out: &mut [T], s: &mut LocalScratch<T>) {
        let n = self.component_len(c);
        out[..n].fill(T::zero());
        for j in 0..self.dim {
            let mut mats = self.mass[c].clone();
            mats[j] = self.lap[c][j].clone();
            kron_apply(&mats, self.dim, u, self.comp_dims[c], &mut s.vel2, &mut s.w1, &mut s.w2);
            for (o, &v) in out[..n].iter_mut().zip(&s.vel2[..n]) {
                *o += v;
            }
        }
    }

    /// `out = A_c⁻¹ r = (⊗S) diag(1/Σλ) (⊗Sᵀ) r`.
    pub fn apply_ainv(&self, c: usize, r: &[T], out: &mut [T], s: &mut LocalScratch<T>) {
        let dims = self.comp_dims[c];
        let n = self.component_len(c);
        kron_apply(&self.st[c], self.dim, r, dims, &mut s.vel2, &mut s.w1, &mut s.w2);
        for (v, &w) in s.vel2[..n].iter_mut().zip(&self.inv_diag[c]) {
            *v *= w;
        }
        kron_apply(&self.s[c], self.dim, &s.vel2, dims, out, &mut s.w1, &mut s.w2);
    }

    /// `out = Σ_c B_c u_c` for the stacked velocity `u`.
    pub fn apply_b(&self, u: &[T], out: &mut [T], s: &mut LocalScratch<T>) {
        let np = self.pressure_len();
        let off = self.comp_offsets();
        out[..np].fill(T::zero());
        for c in 0..self.dim {
            kron_apply(
                &self.b[c],
                self.dim,
                &u[off[c]..off[c + 1]],
                self.comp_dims[c],
                &mut s.vel2,
                &mut s.w1,
                &mut s.w2,
            );
            for (o, &v) in out[..np].iter_mut().zip(&s.vel2[..np]) {
                *o += v;
            }
        }
    }

    /// `out = Bᵀ p` for the stacked velocity `out`.
    pub fn apply_bt(&self, p: &[T], out: &mut [T], s: &mut LocalScratch<T>) {
        let off = self.comp_offsets();
        for c in 0..self.dim {
            kron_apply(
                &self.bt[c],
                self.dim,
                p,
                self.p_dims,
                &mut out[off[c]..off[c + 1]],
                &mut s.w1,
                &mut s.w2,
            );
        }
    }

    /// Stacked `A⁻¹` on the velocity.
    pub fn apply_ainv_all(&self, r: &[T], out: &mut [T], s: &mut LocalScratch<T>) {
        let off = self.comp_offsets();
        for c in 0..self.dim {
            let (lo, hi) = (off[c], off[c + 1]);
            // the output slice is disjoint from the scratch buffers
            self.apply_ainv(c, &r[lo..hi], &mut out[lo..hi], s);
        }
    }

    /// Solves the patch saddle point problem for `rhs = [F; G]` in
    /// patch-local order. The pressure part of the solution has zero
    /// coefficient mean and the compatible part of `G` is used, so the result
    /// equals the pseudo-inverse solution.
    pub fn schur_solve(
        &self,
        rhs: &[T],
        out: &mut [T],
        tol: f64,
        max_iter: usize,
        s: &mut LocalScratch<T>,
    ) -> crate::solver::CgOutcome {
        let nv = self.velocity_len();
        let np = self.pressure_len();
        let (f, g) = rhs.split_at(nv);
        let (u, p) = out.split_at_mut(nv);
        // g̃ = B A⁻¹ F − G
        let mut au = std::mem::take(&mut s.vel);
        self.apply_ainv_all(f, &mut au, s);
        let mut schur_rhs = vec![T::zero(); np];
        self.apply_b(&au, &mut schur_rhs, s);
        for (r, &gi) in schur_rhs.iter_mut().zip(g) {
            *r -= gi;
        }
        let mut t1 = vec![T::zero(); nv];
        let (mut m1, mut m2) = (vec![T::zero(); np], vec![T::zero(); np]);
        // S is spectrally equivalent to the pressure mass matrix
        let outcome = pcg(
            |v: &[T], y: &mut [T]| self.apply_schur(v, y, s),
            |r: &[T], z: &mut [T]| kron_apply(&self.p_mass_inv, self.dim, r, self.p_dims, z, &mut m1, &mut m2),
            &schur_rhs,
            p,
            tol,
            max_iter,
            project_coefficient_mean,
        );
        // U = A⁻¹ (F − Bᵀ P)
        self.apply_bt(p, &mut t1, s);
        for (t, &fi) in t1.iter_mut().zip(f) {
            *t = fi - *t;
        }
        self.apply_ainv_all(&t1, u, s);
        s.vel = au;
        outcome
    }
}

/// Convergence data of one patch solve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalInfo {
    pub cg_iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
enum Entry<T> {
    Schur(PatchSolverData<T>),
    Direct(SmallMat<T>),
}

/// Patch solvers for every patch kind of one level.
#[derive(Clone, Debug)]
pub struct LocalSolver<T> {
    kind: LocalSolverKind,
    dim: usize,
    m: usize,
    patch_len: usize,
    entries: Vec<Option<Entry<T>>>,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl<T: Real> LocalSolver<T> {
    /// Builds the data of every patch kind present on the level of `layout`.
    pub fn new(layout: &DofLayout, kind: LocalSolverKind) -> Result<Self> {
        let d = layout.dim;
        if layout.m < 2 {
            return Err(Error::invalid("a level needs at least one interior vertex"));
        }
        let mut entries: Vec<Option<Entry<T>>> = vec![None; 64];
        // per direction the reachable kinds: 3 = both ends (m = 2), else 0, 1, 2
        let options: Vec<u8> = if layout.m == 2 {
            vec![3]
        } else if layout.m == 3 {
            vec![1, 2]
        } else {
            vec![0, 1, 2]
        };
        let mut kinds = vec![[0u8; 3]];
        for j in 0..d {
            kinds = kinds
                .into_iter()
                .flat_map(|k| {
                    options.iter().map(move |&o| {
                        let mut k = k;
                        k[j] = o;
                        k
                    })
                })
                .collect();
        }
        for pk in kinds {
            let pm = build_patch_matrices(layout, pk)?;
            let entry = match kind {
                LocalSolverKind::Schur => Entry::Schur(fast_diag_prepare(&pm)?),
                LocalSolverKind::Direct => {
                    let a = pm.dense();
                    let np = tensor_len(&[2 * (layout.degree + 1)].repeat(d));
                    let z = pressure_kernel(a.nrows(), np);
                    Entry::Direct(SmallMat::from_dmatrix(&deflated_inverse(&a, &z)?))
                }
            };
            entries[kind_code(pk)] = Some(entry);
        }
        Ok(Self {
            kind,
            dim: d,
            m: layout.m,
            patch_len: layout.patch_len(),
            entries,
            cg_tol: SCHUR_CG_TOL.max(cg_tolerance_floor::<T>()),
            cg_max_iter: SCHUR_CG_MAX_ITER,
        })
    }

    pub fn kind(&self) -> LocalSolverKind {
        self.kind
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn scratch(&self) -> LocalScratch<T> {
        LocalScratch::new(self.patch_len)
    }

    fn entry(&self, vertex: Index) -> &Entry<T> {
        let mut kind = [0u8; 3];
        for (j, kj) in kind.iter_mut().enumerate().take(self.dim) {
            *kj = u8::from(vertex[j] == 1) | (u8::from(vertex[j] + 1 == self.m) << 1);
        }
        self.entries[kind_code(kind)]
            .as_ref()
            .expect("every reachable patch kind is prepared")
    }

    /// Schur factors for the patch around `vertex`, if this is a Schur solver.
    pub fn schur_data(&self, vertex: Index) -> Option<&PatchSolverData<T>> {
        match self.entry(vertex) {
            Entry::Schur(d) => Some(d),
            Entry::Direct(_) => None,
        }
    }

    /// `out = 𝒜_j⁺ rhs` for the patch around `vertex`.
    pub fn solve(&self, vertex: Index, rhs: &[T], out: &mut [T], s: &mut LocalScratch<T>) -> LocalInfo {
        match self.entry(vertex) {
            Entry::Schur(data) => {
                let o = data.schur_solve(rhs, out, self.cg_tol, self.cg_max_iter, s);
                LocalInfo {
                    cg_iterations: o.iterations,
                    converged: o.converged,
                }
            }
            Entry::Direct(inv) => {
                let n = inv.cols();
                for (i, o) in out[..n].iter_mut().enumerate() {
                    *o = (0..n).map(|j| inv.get(i, j) * rhs[j]).sum();
                }
                LocalInfo {
                    cg_iterations: 0,
                    converged: true,
                }
            }
        }
    }
}

/// Dense direct patch solve for the patch around `vertex`: `𝒜_j⁺ rhs` from the
/// deflated inverse of the Kronecker-assembled patch matrix.
pub fn local_solve_direct(layout: &DofLayout, vertex: Index, rhs: &[f64]) -> Result<Vec<f64>> {
    let pm = build_patch_matrices(layout, patch_kind(layout, vertex))?;
    let a = pm.dense();
    if rhs.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: rhs.len(),
        });
    }
    let np = layout.patch_len() - layout.patch_starts()[layout.dim];
    let z = pressure_kernel(a.nrows(), np);
    let inv = deflated_inverse(&a, &z)?;
    Ok((inv * DVector::from_column_slice(rhs)).as_slice().to_vec())
}
