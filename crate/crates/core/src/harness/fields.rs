//! Right-hand side, interpolation and error norms for the manufactured problem.
//!
//! The pressure unknown of the discrete system approximates `−p`: the
//! operator couples velocity and pressure through `+(p_h, ∇·v_h)` while the
//! strong form carries `+∇p`. All helpers here translate through
//! [`PRESSURE_SIGN`].

use rayon::prelude::*;

use crate::fem1d::{gauss_quadrature, Basis1D, Quadrature1D};
use crate::harness::manufactured::ManufacturedSolution;
use crate::mesh::Index;
use crate::space::{BlockVector, DofLayout};
use crate::tensor::{contract, contract_t, tensor_len, SmallMat};

/// Factor mapping the exact pressure to the discrete pressure unknown.
pub const PRESSURE_SIGN: f64 = -1.0;

/// Tensor quadrature on a cell with `k + 3` points per direction and the 1D
/// basis tables of every block.
struct CellTables {
    dim: usize,
    quad: Quadrature1D,
    /// `values[b][j]`: `(points × basis)` of block `b` in direction `j`.
    values: Vec<[SmallMat<f64>; 3]>,
    /// Derivative of component `c` in its own direction.
    derivs: Vec<SmallMat<f64>>,
    nodes: Vec<[Vec<f64>; 3]>,
}

impl CellTables {
    fn new(layout: &DofLayout) -> Self {
        let (d, k) = (layout.dim, layout.degree);
        let quad = gauss_quadrature(k + 3).expect("k + 3 >= 1");
        let lo = Basis1D::lagrange(k);
        let hi = Basis1D::lagrange(k + 1);
        let table = |b: &Basis1D| SmallMat::from_dmatrix(&b.values_at(&quad.points));
        let one = SmallMat::from_fn(1, 1, |_, _| 1.0);
        let mut values = Vec::with_capacity(d + 1);
        let mut nodes = Vec::with_capacity(d + 1);
        for b in 0..=d {
            values.push(std::array::from_fn(|j| match j {
                j if j >= d => one.clone(),
                j if j == b => table(&hi),
                _ => table(&lo),
            }));
            nodes.push(std::array::from_fn(|j| match j {
                j if j >= d => vec![0.0],
                j if j == b => hi.nodes.clone(),
                _ => lo.nodes.clone(),
            }));
        }
        let derivs = (0..d)
            .map(|_| SmallMat::from_dmatrix(&hi.derivatives_at(&quad.points)))
            .collect();
        Self {
            dim: d,
            quad,
            values,
            derivs,
            nodes,
        }
    }

    fn nq(&self) -> usize {
        self.quad.len().pow(self.dim as u32)
    }

    fn qdims(&self) -> [usize; 3] {
        let mut q = [1; 3];
        q[..self.dim].fill(self.quad.len());
        q
    }

    /// Multi-index of tensor entry `i` in a tensor of shape `dims`.
    fn split(i: usize, dims: &[usize; 3]) -> Index {
        [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])]
    }

    /// Physical quadrature points and weights (including `h^d`) of `cell`.
    fn points(&self, layout: &DofLayout, cell: Index) -> Vec<([f64; 3], f64)> {
        let h = layout.h;
        let hd = h.powi(self.dim as i32);
        let qd = self.qdims();
        (0..self.nq())
            .map(|i| {
                let a = Self::split(i, &qd);
                let mut x = [0.0; 3];
                let mut w = hd;
                for j in 0..self.dim {
                    x[j] = (cell[j] as f64 + self.quad.points[a[j]]) * h;
                    w *= self.quad.weights[a[j]];
                }
                (x, w)
            })
            .collect()
    }

    /// Values at the quadrature points of a block tensor; direction `deriv`
    /// uses the derivative table instead (reference coordinates).
    fn eval(&self, b: usize, local: &[f64], dims: [usize; 3], deriv: Option<usize>) -> Vec<f64> {
        let mut cur = local.to_vec();
        let mut shape = dims;
        for j in 0..self.dim {
            let mat = match deriv {
                Some(dj) if dj == j => &self.derivs[b],
                _ => &self.values[b][j],
            };
            let mut next_shape = shape;
            next_shape[j] = mat.rows();
            let mut next = vec![0.0; tensor_len(&next_shape[..self.dim])];
            contract(mat, &cur, &shape[..self.dim], j, &mut next);
            cur = next;
            shape = next_shape;
        }
        cur
    }

    /// `Σ_q g_q φ_i(x_q)` for all basis functions of block `b`.
    fn test(&self, b: usize, g: &[f64]) -> Vec<f64> {
        let mut cur = g.to_vec();
        let mut shape = self.qdims();
        for j in 0..self.dim {
            let mat = &self.values[b][j];
            let mut next_shape = shape;
            next_shape[j] = mat.cols();
            let mut next = vec![0.0; tensor_len(&next_shape[..self.dim])];
            contract_t(mat, &cur, &shape[..self.dim], j, &mut next);
            cur = next;
            shape = next_shape;
        }
        cur
    }

    fn block_dims(layout: &DofLayout, b: usize) -> [usize; 3] {
        if b < layout.dim {
            layout.cell_component_dims(b)
        } else {
            layout.cell_pressure_dims()
        }
    }
}

fn cells(layout: &DofLayout) -> Vec<Index> {
    let level = layout.level();
    (0..level.n_cells()).map(|i| level.cell_coords(i)).collect()
}

/// Load vector `((f, v_h), 0)`. The boundary data are zero, so no Nitsche
/// lift terms arise.
pub fn assemble_rhs(layout: &DofLayout, ms: &ManufacturedSolution) -> BlockVector<f64> {
    let t = CellTables::new(layout);
    let d = layout.dim;
    let starts = layout.cell_starts().to_vec();
    let locals: Vec<(Index, Vec<f64>)> = cells(layout)
        .into_par_iter()
        .map(|cell| {
            let pts = t.points(layout, cell);
            let mut local = vec![0.0; layout.cell_len()];
            for c in 0..d {
                let g: Vec<f64> = pts.iter().map(|(x, w)| w * ms.f(c, x)).collect();
                local[starts[c]..starts[c + 1]].copy_from_slice(&t.test(c, &g));
            }
            (cell, local)
        })
        .collect();
    let mut out = BlockVector::zeros(layout);
    for (cell, local) in &locals {
        layout.scatter_add_cell(local, *cell, out.as_mut_slice());
    }
    crate::space::project_coefficient_mean(out.pressure_mut());
    out
}

/// Nodal interpolant of `(u, PRESSURE_SIGN · p)`.
pub fn interpolate(layout: &DofLayout, ms: &ManufacturedSolution) -> BlockVector<f64> {
    let t = CellTables::new(layout);
    let d = layout.dim;
    let h = layout.h;
    let mut out = BlockVector::zeros(layout);
    let starts = layout.cell_starts().to_vec();
    for cell in cells(layout) {
        let mut local = vec![0.0; layout.cell_len()];
        for b in 0..=d {
            let dims = CellTables::block_dims(layout, b);
            for (i, v) in local[starts[b]..starts[b + 1]].iter_mut().enumerate() {
                let a = CellTables::split(i, &dims);
                let mut x = [0.0; 3];
                for j in 0..d {
                    x[j] = (cell[j] as f64 + t.nodes[b][j][a[j]]) * h;
                }
                *v = if b < d { ms.u(b, &x) } else { PRESSURE_SIGN * ms.p(&x) };
            }
        }
        // shared nodes receive the same value from every cell, so overwrite
        let data = out.as_mut_slice();
        for c in 0..d {
            let go = layout.block_starts()[c];
            layout.for_each_component_dof(c, cell, |l, g| data[go + g] = local[starts[c] + l]);
        }
        let go = layout.block_starts()[d];
        layout.for_each_pressure_dof(cell, |l, g| data[go + g] = local[starts[d] + l]);
    }
    out
}

/// Per-cell integrals reduced over the mesh.
fn integrate<F>(layout: &DofLayout, x: &[f64], f: F) -> Vec<f64>
where
    F: Fn(&CellTables, Index, &[f64], &[([f64; 3], f64)]) -> Vec<f64> + Sync,
{
    let t = CellTables::new(layout);
    cells(layout)
        .into_par_iter()
        .map(|cell| {
            let mut local = vec![0.0; layout.cell_len()];
            layout.gather_cell(x, cell, &mut local);
            let pts = t.points(layout, cell);
            f(&t, cell, &local, &pts)
        })
        .reduce(Vec::new, |a, b| {
            if a.is_empty() {
                return b;
            }
            if b.is_empty() {
                return a;
            }
            a.iter().zip(&b).map(|(p, q)| p + q).collect()
        })
}

fn block<'a>(layout: &DofLayout, local: &'a [f64], b: usize) -> &'a [f64] {
    let s = layout.cell_starts();
    &local[s[b]..s[b + 1]]
}

/// `(‖u_h − u‖, ‖p_h − p̄_h − (p − p̄)‖)` in `L²(Ω)`, with the discrete
/// pressure mapped back through [`PRESSURE_SIGN`].
pub fn l2_error(layout: &DofLayout, x: &[f64], ms: &ManufacturedSolution) -> (f64, f64) {
    let d = layout.dim;
    // means first: ∫ p_h and ∫ p over the unit domain
    let means = integrate(layout, x, |t, _, local, pts| {
        let ph = t.eval(d, block(layout, local, d), layout.cell_pressure_dims(), None);
        let mut s = [0.0, 0.0];
        for ((xq, w), v) in pts.iter().zip(&ph) {
            s[0] += w * PRESSURE_SIGN * v;
            s[1] += w * ms.p(xq);
        }
        s.to_vec()
    });
    let (mh, me) = (means[0], means[1]);
    let sums = integrate(layout, x, |t, _, local, pts| {
        let mut eu = 0.0;
        for c in 0..d {
            let uh = t.eval(c, block(layout, local, c), layout.cell_component_dims(c), None);
            for ((xq, w), v) in pts.iter().zip(&uh) {
                eu += w * (v - ms.u(c, xq)).powi(2);
            }
        }
        let ph = t.eval(d, block(layout, local, d), layout.cell_pressure_dims(), None);
        let mut ep = 0.0;
        for ((xq, w), v) in pts.iter().zip(&ph) {
            ep += w * (PRESSURE_SIGN * v - mh - (ms.p(xq) - me)).powi(2);
        }
        vec![eu, ep]
    });
    (sums[0].sqrt(), sums[1].sqrt())
}

/// `(‖∇·u_h‖, ‖u_h‖)` in `L²(Ω)`.
pub fn divergence_norm(layout: &DofLayout, x: &[f64]) -> (f64, f64) {
    let d = layout.dim;
    let h = layout.h;
    let sums = integrate(layout, x, |t, _, local, pts| {
        let mut div = vec![0.0; pts.len()];
        let mut norm = 0.0;
        for c in 0..d {
            let dims = layout.cell_component_dims(c);
            let du = t.eval(c, block(layout, local, c), dims, Some(c));
            for (a, v) in div.iter_mut().zip(&du) {
                *a += v / h;
            }
            let uh = t.eval(c, block(layout, local, c), dims, None);
            norm += pts.iter().zip(&uh).map(|((_, w), v)| w * v * v).sum::<f64>();
        }
        let dn: f64 = pts.iter().zip(&div).map(|((_, w), v)| w * v * v).sum();
        vec![dn, norm]
    });
    (sums[0].sqrt(), sums[1].sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Level;
    use crate::stokes_op::apply_stokes;

    fn layout(dim: usize, level: usize, k: usize) -> DofLayout {
        DofLayout::new(&Level::new(dim, level), k).unwrap()
    }

    #[test]
    fn rhs_has_zero_pressure_block() {
        let lay = layout(2, 1, 1);
        let ms = ManufacturedSolution::with_defaults(2).unwrap();
        let rhs = assemble_rhs(&lay, &ms);
        assert!(rhs.pressure().iter().all(|&p| p == 0.0));
        assert!(rhs.velocity().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_field_error_equals_solution_norm() {
        let lay = layout(2, 2, 2);
        let ms = ManufacturedSolution::with_defaults(2).unwrap();
        let zero = vec![0.0; lay.n_dofs()];
        let (eu, ep) = l2_error(&lay, &zero, &ms);
        // ‖p‖² = Π ∫cos²(2πx) = 1/4 in 2D
        assert!((ep - 0.5).abs() < 1e-10, "{ep}");
        let t = CellTables::new(&lay);
        let mut norm = 0.0;
        for cell in cells(&lay) {
            for (x, w) in t.points(&lay, cell) {
                norm += w * (0..2).map(|c| ms.u(c, &x).powi(2)).sum::<f64>();
            }
        }
        assert!((eu - norm.sqrt()).abs() < 1e-12 * norm.sqrt());
    }

    #[test]
    fn interpolation_error_converges_at_optimal_order() {
        let ms = ManufacturedSolution::new(2, 0.2, 0.5).unwrap();
        for k in [1, 2] {
            let e: Vec<(f64, f64)> = (3..=5)
                .map(|l| {
                    let lay = layout(2, l, k);
                    l2_error(&lay, interpolate(&lay, &ms).as_slice(), &ms)
                })
                .collect();
            let rate_u = (e[1].0 / e[2].0).log2();
            let rate_p = (e[1].1 / e[2].1).log2();
            assert!(rate_u > k as f64 + 0.7, "k={k} u rate {rate_u}");
            assert!(rate_p > k as f64 + 0.7, "k={k} p rate {rate_p}");
        }
    }

    #[test]
    fn rhs_consistency_residual_decreases_with_level() {
        let ms = ManufacturedSolution::new(2, 0.2, 0.5).unwrap();
        let res: Vec<f64> = (2..=4)
            .map(|l| {
                let lay = layout(2, l, 2);
                let op = crate::stokes_op::operator_for::<f64>(&lay.level(), 2).unwrap();
                let ax = apply_stokes(&op, interpolate(&lay, &ms).as_slice()).unwrap();
                let b = assemble_rhs(&lay, &ms);
                ax.iter().zip(b.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        assert!(res[1] < res[0] && res[2] < res[1], "{res:?}");
    }

    #[test]
    fn divergence_of_interpolated_curl_field_is_small() {
        let ms = ManufacturedSolution::new(2, 0.2, 0.5).unwrap();
        let lay = layout(2, 4, 2);
        let (div, norm) = divergence_norm(&lay, interpolate(&lay, &ms).as_slice());
        assert!(norm > 0.0);
        assert!(div < 1e-2 * norm, "{div} {norm}");
    }
}
