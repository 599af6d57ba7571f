//! Brute-force dense assembly of the Stokes matrix.
//!
//! Every entry is computed by evaluating pairs of full vector-valued basis
//! functions at quadrature points and plugging them into the interior penalty
//! form written with dyadic products and own-side normals. Nothing here uses
//! the tensor contraction code, so the dense matrices are an independent
//! reference for the matrix-free operator and the patch solvers.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem1d::{gauss_quadrature, penalty, Basis1D};
use crate::mesh::{Index, Level, VertexPatch};
use crate::space::DofLayout;

/// Default row limit for dense assembly.
pub const DEFAULT_CAP: usize = 20_000;

/// A basis function restricted to one cell.
struct CellFunction {
    /// Velocity component, `None` for pressure.
    comp: Option<usize>,
    mi: [usize; 3],
    row: usize,
}

/// Value and physical gradient of a scalar basis function at one point.
#[derive(Clone, Copy, Default)]
struct Eval {
    val: f64,
    grad: [f64; 3],
}

struct Assembler<'a> {
    layout: &'a DofLayout,
    level: Level,
    vel: Basis1D,
    vel_parallel: Basis1D,
    pre: Basis1D,
    gamma: f64,
    quad_points: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl<'a> Assembler<'a> {
    fn new(layout: &'a DofLayout) -> Result<Self> {
        let k = layout.degree;
        // one point more than the matrix-free path
        let q = gauss_quadrature(k + 3)?;
        Ok(Self {
            layout,
            level: layout.level(),
            vel: Basis1D::lagrange(k),
            vel_parallel: Basis1D::lagrange(k + 1),
            pre: Basis1D::lagrange(k),
            gamma: penalty(k, layout.h),
            quad_points: q.points,
            quad_weights: q.weights,
        })
    }

    fn basis_1d(&self, comp: Option<usize>, dir: usize) -> &Basis1D {
        match comp {
            Some(c) if c == dir => &self.vel_parallel,
            Some(_) => &self.vel,
            None => &self.pre,
        }
    }

    /// Basis functions of `cell` whose global index is accepted by `map`.
    fn functions(&self, cell: Index, map: &dyn Fn(usize) -> Option<usize>) -> Vec<CellFunction> {
        let l = self.layout;
        let d = l.dim;
        let mut out = Vec::new();
        for c in 0..d {
            let ld = l.cell_component_dims(c);
            let off = l.component_range(c).start;
            l.for_each_component_dof(c, cell, |loc, g| {
                if let Some(row) = map(off + g) {
                    let mi = [loc % ld[0], (loc / ld[0]) % ld[1], loc / (ld[0] * ld[1])];
                    out.push(CellFunction {
                        comp: Some(c),
                        mi,
                        row,
                    });
                }
            });
        }
        let n = l.degree + 1;
        let off = l.pressure_range().start;
        l.for_each_pressure_dof(cell, |loc, g| {
            if let Some(row) = map(off + g) {
                let mi = [loc % n, (loc / n) % n, loc / (n * n)];
                out.push(CellFunction { comp: None, mi, row });
            }
        });
        out
    }

    /// Evaluates a scalar tensor-product basis function at a reference point.
    fn eval(&self, f: &CellFunction, xhat: [f64; 3]) -> Eval {
        let d = self.layout.dim;
        let h = self.layout.h;
        let mut vals = [1.0; 3];
        let mut ders = [0.0; 3];
        for j in 0..d {
            let b = self.basis_1d(f.comp, j);
            vals[j] = b.value(f.mi[j], xhat[j]);
            ders[j] = b.derivative(f.mi[j], xhat[j]) / h;
        }
        let mut e = Eval {
            val: vals[..d].iter().product(),
            grad: [0.0; 3],
        };
        for j in 0..d {
            e.grad[j] = (0..d).map(|i| if i == j { ders[i] } else { vals[i] }).product();
        }
        e
    }

    fn cell_points(&self) -> Vec<([f64; 3], f64)> {
        let d = self.layout.dim;
        let n = self.quad_points.len();
        let total = n.pow(d as u32);
        (0..total)
            .map(|q| {
                let mut x = [0.0; 3];
                let mut w = 1.0;
                let mut rest = q;
                for xj in x.iter_mut().take(d) {
                    *xj = self.quad_points[rest % n];
                    w *= self.quad_weights[rest % n];
                    rest /= n;
                }
                (x, w)
            })
            .collect()
    }

    /// Points on the face `x_dir = const` with the normal coordinate left at 0.
    fn face_points(&self, dir: usize) -> Vec<([f64; 3], f64)> {
        let d = self.layout.dim;
        let n = self.quad_points.len();
        let total = n.pow(d as u32 - 1);
        (0..total)
            .map(|q| {
                let mut x = [0.0; 3];
                let mut w = 1.0;
                let mut rest = q;
                for (j, xj) in x.iter_mut().enumerate().take(d) {
                    if j == dir {
                        continue;
                    }
                    *xj = self.quad_points[rest % n];
                    w *= self.quad_weights[rest % n];
                    rest /= n;
                }
                (x, w)
            })
            .collect()
    }

    fn cell_term(&self, cell: Index, map: &dyn Fn(usize) -> Option<usize>, a: &mut DMatrix<f64>) {
        let d = self.layout.dim;
        let measure = self.layout.h.powi(d as i32);
        let funcs = self.functions(cell, map);
        for (x, w) in self.cell_points() {
            let ev: Vec<Eval> = funcs.iter().map(|f| self.eval(f, x)).collect();
            let jw = w * measure;
            for (fi, ei) in funcs.iter().zip(&ev) {
                for (fj, ej) in funcs.iter().zip(&ev) {
                    let v = match (fi.comp, fj.comp) {
                        // (∇u, ∇v): only equal components interact
                        (Some(ci), Some(cj)) if ci == cj => {
                            (0..d).map(|j| ei.grad[j] * ej.grad[j]).sum::<f64>()
                        }
                        // (p, ∇·v)
                        (Some(ci), None) => ej.val * ei.grad[ci],
                        // (q, ∇·u)
                        (None, Some(cj)) => ei.val * ej.grad[cj],
                        _ => 0.0,
                    };
                    if v != 0.0 {
                        a[(fi.row, fj.row)] += jw * v;
                    }
                }
            }
        }
    }

    /// Vector trace `u` and gradient `∇u` (row = component) of every velocity
    /// function of a cell at a face point, keyed by matrix row.
    fn traces(
        &self,
        cell: Option<Index>,
        xhat: [f64; 3],
        map: &dyn Fn(usize) -> Option<usize>,
    ) -> HashMap<usize, ([f64; 3], [[f64; 3]; 3])> {
        let mut out: HashMap<usize, ([f64; 3], [[f64; 3]; 3])> = HashMap::new();
        let Some(cell) = cell else { return out };
        for f in self.functions(cell, map) {
            let Some(c) = f.comp else { continue };
            let e = self.eval(&f, xhat);
            let entry = out.entry(f.row).or_default();
            entry.0[c] += e.val;
            entry.1[c] = e.grad;
        }
        out
    }

    /// Face with normal `dir` between `lower` and `upper`; either may be
    /// missing at the boundary.
    fn face_term(
        &self,
        dir: usize,
        lower: Option<Index>,
        upper: Option<Index>,
        map: &dyn Fn(usize) -> Option<usize>,
        a: &mut DMatrix<f64>,
    ) {
        let d = self.layout.dim;
        let area = self.layout.h.powi(d as i32 - 1);
        let mut n_minus = [0.0; 3];
        n_minus[dir] = 1.0;
        let n_plus = n_minus.map(|v| -v);
        for (x, w) in self.face_points(dir) {
            let mut xl = x;
            xl[dir] = 1.0;
            let mut xu = x;
            xu[dir] = 0.0;
            let tm = self.traces(lower, xl, map);
            let tp = self.traces(upper, xu, map);
            let mut rows: Vec<usize> = tm.keys().chain(tp.keys()).copied().collect();
            rows.sort_unstable();
            rows.dedup();
            let zero = ([0.0; 3], [[0.0; 3]; 3]);
            let get = |t: &HashMap<usize, ([f64; 3], [[f64; 3]; 3])>, r: usize| *t.get(&r).unwrap_or(&zero);
            let jw = w * area;
            if lower.is_some() && upper.is_some() {
                // {{u ⊗ n}} and {{∇u}} with own-side normals
                let avg_un = |r: usize| {
                    let (um, _) = get(&tm, r);
                    let (up, _) = get(&tp, r);
                    let mut m = [[0.0; 3]; 3];
                    for c in 0..d {
                        for i in 0..d {
                            m[c][i] = 0.5 * (um[c] * n_minus[i] + up[c] * n_plus[i]);
                        }
                    }
                    m
                };
                let avg_grad = |r: usize| {
                    let (_, gm) = get(&tm, r);
                    let (_, gp) = get(&tp, r);
                    let mut m = [[0.0; 3]; 3];
                    for c in 0..d {
                        for i in 0..d {
                            m[c][i] = 0.5 * (gm[c][i] + gp[c][i]);
                        }
                    }
                    m
                };
                let un: Vec<_> = rows.iter().map(|&r| avg_un(r)).collect();
                let gr: Vec<_> = rows.iter().map(|&r| avg_grad(r)).collect();
                let frob = |x: &[[f64; 3]; 3], y: &[[f64; 3]; 3]| {
                    let mut s = 0.0;
                    for c in 0..d {
                        for i in 0..d {
                            s += x[c][i] * y[c][i];
                        }
                    }
                    s
                };
                for (ii, &ri) in rows.iter().enumerate() {
                    for (jj, &rj) in rows.iter().enumerate() {
                        // test ri, trial rj
                        let v = 4.0 * self.gamma * frob(&un[jj], &un[ii])
                            - 2.0 * frob(&gr[jj], &un[ii])
                            - 2.0 * frob(&gr[ii], &un[jj]);
                        if v != 0.0 {
                            a[(ri, rj)] += jw * v;
                        }
                    }
                }
            } else {
                let (t, n) = if lower.is_some() { (&tm, n_minus) } else { (&tp, n_plus) };
                let vals: Vec<_> = rows.iter().map(|&r| get(t, r)).collect();
                let dn = |g: &[[f64; 3]; 3]| {
                    let mut out = [0.0; 3];
                    for c in 0..d {
                        out[c] = (0..d).map(|i| g[c][i] * n[i]).sum();
                    }
                    out
                };
                let dot = |x: &[f64; 3], y: &[f64; 3]| (0..d).map(|c| x[c] * y[c]).sum::<f64>();
                for (ii, &ri) in rows.iter().enumerate() {
                    let (vi, gi) = &vals[ii];
                    let dvi = dn(gi);
                    for (jj, &rj) in rows.iter().enumerate() {
                        let (uj, gj) = &vals[jj];
                        let v = 2.0 * self.gamma * dot(uj, vi) - dot(&dn(gj), vi) - dot(uj, &dvi);
                        if v != 0.0 {
                            a[(ri, rj)] += jw * v;
                        }
                    }
                }
            }
        }
    }

    /// Assembles the contributions of `cells` and of every face touching one
    /// of them into an `n × n` matrix with rows selected by `map`.
    fn assemble(&self, cells: &[usize], n: usize, map: &dyn Fn(usize) -> Option<usize>) -> DMatrix<f64> {
        let lvl = self.level;
        let d = lvl.dim;
        let mut a = DMatrix::zeros(n, n);
        let in_set: std::collections::HashSet<usize> = cells.iter().copied().collect();
        for &ci in cells {
            self.cell_term(lvl.cell_coords(ci), map, &mut a);
        }
        // faces are keyed by their lower cell (or the boundary cell); each once
        let mut faces = std::collections::BTreeSet::new();
        for &ci in cells {
            let c = lvl.cell_coords(ci);
            for dir in 0..d {
                for upper in [false, true] {
                    let nb = lvl.neighbor(c, dir, upper);
                    let key = match (upper, nb) {
                        (false, Some(lo)) => (dir, Some(lo), Some(c)),
                        (true, Some(hi)) => (dir, Some(c), Some(hi)),
                        (false, None) => (dir, None, Some(c)),
                        (true, None) => (dir, Some(c), None),
                    };
                    faces.insert(key);
                }
            }
        }
        for (dir, lo, hi) in faces {
            debug_assert!(lo.is_none_or(|c| in_set.contains(&lvl.cell_index(c)))
                || hi.is_none_or(|c| in_set.contains(&lvl.cell_index(c))));
            self.face_term(dir, lo, hi, map, &mut a);
        }
        a
    }
}

/// Dense global matrix, rows ordered as the global block vector.
pub fn dense_assemble(layout: &DofLayout) -> Result<DMatrix<f64>> {
    dense_assemble_capped(layout, DEFAULT_CAP)
}

pub fn dense_assemble_capped(layout: &DofLayout, cap: usize) -> Result<DMatrix<f64>> {
    let n = layout.n_dofs();
    if n > cap {
        return Err(Error::TooLarge { rows: n, cap });
    }
    let asm = Assembler::new(layout)?;
    let cells: Vec<usize> = (0..asm.level.n_cells()).collect();
    Ok(asm.assemble(&cells, n, &|g| Some(g)))
}

/// Dense patch matrix `R_j 𝒜 R_jᵀ` in patch-local order
/// ([`DofLayout::patch_indices`]).
pub fn dense_patch_assemble(layout: &DofLayout, patch: &VertexPatch) -> Result<DMatrix<f64>> {
    let idx = layout.patch_indices(patch.vertex);
    let pos: HashMap<usize, usize> = idx.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let asm = Assembler::new(layout)?;
    Ok(asm.assemble(&patch.cells, idx.len(), &|g| pos.get(&g).copied()))
}

/// Moore–Penrose inverse from the SVD with singular values below
/// `threshold · σ_max` dropped.
pub fn pseudo_inverse(a: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > threshold * smax && s > 0.0 {
            out += (vt.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

/// Number of singular values below `threshold · σ_max`.
pub fn null_count(a: &DMatrix<f64>, threshold: f64) -> usize {
    let s = a.clone().singular_values();
    let smax = s.max();
    s.iter().filter(|&&v| v <= threshold * smax).count()
}

/// Pseudo-inverse of a symmetric matrix whose kernel is spanned by the unit
/// vector `z`: `A⁺ = (A + zzᵀ)⁻¹ (I − zzᵀ)`. Fails if `A + zzᵀ` is singular,
/// which happens exactly when the kernel is larger than `span{z}`.
pub fn deflated_inverse(a: &DMatrix<f64>, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || z.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: z.len(),
        });
    }
    let zn = z / z.norm();
    let zzt = &zn * zn.transpose();
    let shifted = a + &zzt * a.amax().max(1.0);
    let lu = shifted.lu();
    let inv = lu
        .try_inverse()
        .ok_or(Error::RankDeficient { expected: 1, found: 2 })?;
    let proj = DMatrix::identity(n, n) - &zzt;
    let out = inv * proj;
    // (A + αzzᵀ)⁻¹ on z⊥ equals A⁺ for any α > 0; verify A A⁺ A = A
    let check = a * &out * a - a;
    if check.amax() > 1e-8 * a.amax().max(1.0) * n as f64 {
        return Err(Error::RankDeficient { expected: 1, found: 2 });
    }
    Ok(out)
}

/// Unit vector along the constant pressure mode of a system whose last
/// `n_pressure` rows are pressure.
pub fn pressure_kernel(n: usize, n_pressure: usize) -> DVector<f64> {
    let mut z = DVector::zeros(n);
    let v = 1.0 / (n_pressure as f64).sqrt();
    for i in n - n_pressure..n {
        z[i] = v;
    }
    z
}

/// Writes the nonzero entries as `row col value` lines.
pub fn write_triplets<W: Write>(a: &DMatrix<f64>, mut out: W) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let v = a[(i, j)];
            if v != 0.0 {
                writeln!(out, "{i} {j} {v:.17e}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::enumerate_patches;

    fn layout(dim: usize, level: usize, k: usize) -> DofLayout {
        DofLayout::new(&Level::new(dim, level), k).unwrap()
    }

    #[test]
    fn global_matrix_is_symmetric() {
        for (d, l, k) in [(2, 0, 1), (2, 1, 2), (3, 0, 1)] {
            let a = dense_assemble(&layout(d, l, k)).unwrap();
            assert!((&a - a.transpose()).amax() <= 1e-12 * a.amax());
        }
    }

    #[test]
    fn velocity_block_is_positive_definite() {
        let lay = layout(2, 1, 1);
        let a = dense_assemble(&lay).unwrap();
        let nv = lay.n_velocity();
        let av = a.view((0, 0), (nv, nv)).into_owned();
        assert!(av.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn rejects_oversized_systems() {
        assert!(matches!(
            dense_assemble_capped(&layout(2, 1, 1), 10),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn divergence_rows_annihilate_constants() {
        // 1ᵀ B = (1, ∇·v) = 0 for v with zero normal trace
        let lay = layout(2, 1, 2);
        let a = dense_assemble(&lay).unwrap();
        let pr = lay.pressure_range();
        for j in lay.velocity_range() {
            let s: f64 = pr.clone().map(|i| a[(i, j)]).sum();
            assert!(s.abs() < 1e-12, "column {j}: {s}");
        }
    }

    #[test]
    fn global_system_has_one_null_mode() {
        let a = dense_assemble(&layout(2, 0, 2)).unwrap();
        assert_eq!(null_count(&a, 1e-10), 1);
    }

    #[test]
    fn patch_matrix_is_principal_submatrix() {
        let lay = layout(2, 1, 1);
        let a = dense_assemble(&lay).unwrap();
        for patch in enumerate_patches(&lay.level()) {
            let ap = dense_patch_assemble(&lay, &patch).unwrap();
            let idx = lay.patch_indices(patch.vertex);
            for (i, &gi) in idx.iter().enumerate() {
                for (j, &gj) in idx.iter().enumerate() {
                    assert!((ap[(i, j)] - a[(gi, gj)]).abs() <= 1e-12 * a.amax());
                }
            }
        }
    }

    #[test]
    fn patch_matrix_has_exactly_one_null_mode() {
        for (d, k) in [(2, 1), (2, 3), (3, 1)] {
            let lay = layout(d, 1, k);
            let patch = &enumerate_patches(&lay.level())[0];
            let ap = dense_patch_assemble(&lay, patch).unwrap();
            assert_eq!(null_count(&ap, 1e-10), 1, "d={d} k={k}");
        }
    }

    #[test]
    fn pseudo_inverse_axioms() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!((pseudo_inverse(&id, 1e-12) - &id).amax() < 1e-14);

        let lay = layout(2, 1, 1);
        let patch = &enumerate_patches(&lay.level())[4];
        let ap = dense_patch_assemble(&lay, patch).unwrap();
        let pinv = pseudo_inverse(&ap, 1e-10);
        assert!((&ap * &pinv * &ap - &ap).amax() <= 1e-10 * ap.amax());

        let b = DVector::from_fn(ap.nrows(), |i, _| ((i * 7 % 11) as f64).sin());
        let x = &pinv * b;
        let np = lay.patch_pressure_box(patch.vertex).len();
        let mean: f64 = x.rows(ap.nrows() - np, np).sum();
        assert!(mean.abs() < 1e-12 * x.amax() * np as f64);
    }

    #[test]
    fn deflated_inverse_equals_pseudo_inverse() {
        let lay = layout(2, 0, 2);
        let a = dense_assemble(&lay).unwrap();
        let z = pressure_kernel(a.nrows(), lay.n_pressure());
        let d = deflated_inverse(&a, &z).unwrap();
        let p = pseudo_inverse(&a, 1e-10);
        assert!((d - p).amax() < 1e-8);

        // a second kernel vector is detected
        let mut b = a.clone();
        b.row_mut(0).fill(0.0);
        b.column_mut(0).fill(0.0);
        assert!(deflated_inverse(&b, &z).is_err());
    }

    #[test]
    fn triplet_export() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.5]);
        let mut buf = Vec::new();
        write_triplets(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("1 1 -2.5"));
    }
}
