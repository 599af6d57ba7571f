//! Small dense matrices and direction-wise tensor contractions.
//!
//! Tensors are stored lexicographically with the first index running fastest.
//! A contraction along `axis` applies a 1D matrix to every fiber in that
//! direction; composing contractions over all directions realizes the action
//! of a Kronecker product without ever forming it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix used inside the hot loops.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> SmallMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(T::of(f(i, j)));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).as_f64())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn scaled(&self, s: f64) -> Self {
        let s = T::of(s);
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> SmallMat<U> {
        SmallMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Number of entries of a tensor with the given shape.
#[inline]
pub fn tensor_len(dims: &[usize]) -> usize {
    dims.iter().product()
}

#[inline(always)]
fn split(dims: &[usize], axis: usize) -> (usize, usize) {
    let inner: usize = dims[..axis].iter().product();
    let outer: usize = dims[axis + 1..].iter().product();
    (inner, outer)
}

/// `out = (I ⊗ mat ⊗ I) input` along `axis`. `out` must hold the contracted
/// shape, i.e. `dims` with `dims[axis]` replaced by `mat.rows()`.
pub fn contract<T: Real>(mat: &SmallMat<T>, input: &[T], dims: &[usize], axis: usize, out: &mut [T]) {
    kernel(mat, false, input, dims, axis, out, false)
}

/// Same as [`contract`] with `mat` transposed.
pub fn contract_t<T: Real>(mat: &SmallMat<T>, input: &[T], dims: &[usize], axis: usize, out: &mut [T]) {
    kernel(mat, true, input, dims, axis, out, false)
}

/// Accumulating variant of [`contract`].
pub fn contract_add<T: Real>(mat: &SmallMat<T>, input: &[T], dims: &[usize], axis: usize, out: &mut [T]) {
    kernel(mat, false, input, dims, axis, out, true)
}

/// Accumulating variant of [`contract_t`].
pub fn contract_t_add<T: Real>(
    mat: &SmallMat<T>,
    input: &[T],
    dims: &[usize],
    axis: usize,
    out: &mut [T],
) {
    kernel(mat, true, input, dims, axis, out, true)
}

#[inline(always)]
fn kernel<T: Real>(
    mat: &SmallMat<T>,
    transpose: bool,
    input: &[T],
    dims: &[usize],
    axis: usize,
    out: &mut [T],
    accumulate: bool,
) {
    match (transpose, accumulate) {
        (false, false) => kernel_impl::<T, false, false>(mat, input, dims, axis, out),
        (false, true) => kernel_impl::<T, false, true>(mat, input, dims, axis, out),
        (true, false) => kernel_impl::<T, true, false>(mat, input, dims, axis, out),
        (true, true) => kernel_impl::<T, true, true>(mat, input, dims, axis, out),
    }
}

#[inline(always)]
fn kernel_impl<T: Real, const TRANSPOSE: bool, const ACC: bool>(
    mat: &SmallMat<T>,
    input: &[T],
    dims: &[usize],
    axis: usize,
    out: &mut [T],
) {
    let (n_out, n_in) = if TRANSPOSE {
        (mat.cols, mat.rows)
    } else {
        (mat.rows, mat.cols)
    };
    debug_assert_eq!(dims[axis], n_in, "contraction shape mismatch");
    let (inner, outer) = split(dims, axis);
    debug_assert!(input.len() >= inner * n_in * outer);
    debug_assert!(out.len() >= inner * n_out * outer);
    let data = &mat.data[..mat.rows * mat.cols];
    if inner == 1 {
        for (src, dst) in input.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)).take(outer) {
            if !ACC {
                dst.fill(T::zero());
            }
            if TRANSPOSE {
                // dst += Σ_j src_j · row_j, rows of the stored matrix are contiguous
                for (j, &sj) in src.iter().enumerate() {
                    let row = &data[j * n_out..(j + 1) * n_out];
                    for (d, &a) in dst.iter_mut().zip(row) {
                        *d += a * sj;
                    }
                }
            } else {
                for (i, d) in dst.iter_mut().enumerate() {
                    let row = &data[i * n_in..(i + 1) * n_in];
                    let mut acc = T::zero();
                    for (&a, &s) in row.iter().zip(src) {
                        acc += a * s;
                    }
                    *d += acc;
                }
            }
        }
        return;
    }
    let coef = |i: usize, j: usize| {
        if TRANSPOSE {
            data[j * n_out + i]
        } else {
            data[i * n_in + j]
        }
    };
    for (src, dst) in input
        .chunks_exact(n_in * inner)
        .zip(out.chunks_exact_mut(n_out * inner))
        .take(outer)
    {
        for (i, row) in dst.chunks_exact_mut(inner).enumerate() {
            if !ACC {
                row.fill(T::zero());
            }
            for (j, fiber) in src.chunks_exact(inner).enumerate() {
                let a = coef(i, j);
                if a == T::zero() {
                    continue;
                }
                for (r, &s) in row.iter_mut().zip(fiber) {
                    *r += a * s;
                }
            }
        }
    }
}

/// Checked, allocating contraction along `direction`. Returns the contracted
/// values and their new shape.
pub fn sum_factor_contract<T: Real>(
    values: &[T],
    dims: &[usize],
    matrix: &SmallMat<T>,
    direction: usize,
) -> Result<(Vec<T>, Vec<usize>)> {
    if direction >= dims.len() {
        return Err(Error::invalid(format!(
            "direction {direction} out of range for a {}-dimensional tensor",
            dims.len()
        )));
    }
    if values.len() != tensor_len(dims) {
        return Err(Error::DimensionMismatch {
            expected: tensor_len(dims),
            found: values.len(),
        });
    }
    if matrix.cols() != dims[direction] {
        return Err(Error::DimensionMismatch {
            expected: dims[direction],
            found: matrix.cols(),
        });
    }
    let mut new_dims = dims.to_vec();
    new_dims[direction] = matrix.rows();
    let mut out = vec![T::zero(); tensor_len(&new_dims)];
    contract(matrix, values, dims, direction, &mut out);
    Ok((out, new_dims))
}

/// Row-compressed sparse matrix for 1D transfer operators.
#[derive(Clone, Debug)]
pub struct Sparse1D<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Real> Sparse1D<T> {
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for r in rows {
            for &(c, v) in r {
                debug_assert!(c < cols);
                col_idx.push(c);
                vals.push(T::of(v));
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn transpose(&self) -> Self {
        let mut rows_t: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.cols];
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                rows_t[self.col_idx[k]].push((r, self.vals[k].as_f64()));
            }
        }
        Self::from_rows(self.rows, &rows_t)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.vals[k].as_f64();
            }
        }
        m
    }

    pub fn cast<U: Real>(&self) -> Sparse1D<U> {
        Sparse1D {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            vals: self.vals.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Sparse analogue of [`contract`].
    pub fn contract(&self, input: &[T], dims: &[usize], axis: usize, out: &mut [T]) {
        debug_assert_eq!(dims[axis], self.cols);
        let (inner, outer) = split(dims, axis);
        for o in 0..outer {
            let src = &input[o * self.cols * inner..(o + 1) * self.cols * inner];
            let dst = &mut out[o * self.rows * inner..(o + 1) * self.rows * inner];
            for r in 0..self.rows {
                let row = &mut dst[r * inner..(r + 1) * inner];
                row.fill(T::zero());
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    let a = self.vals[k];
                    let fiber = &src[self.col_idx[k] * inner..(self.col_idx[k] + 1) * inner];
                    for (d, &s) in row.iter_mut().zip(fiber) {
                        *d += a * s;
                    }
                }
            }
        }
    }
}

/// Dense Kronecker product `a ⊗ b` (reference for tests and the oracle).
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_contraction_is_noop() {
        let dims = [3, 4, 2];
        let x: Vec<f64> = (0..24).map(|v| v as f64 * 0.5 - 3.0).collect();
        let mut y = x.clone();
        for axis in 0..3 {
            let id = SmallMat::<f64>::identity(dims[axis]);
            let mut out = vec![0.0; 24];
            contract(&id, &y, &dims, axis, &mut out);
            y = out;
        }
        assert_eq!(x, y);
    }

    #[test]
    fn two_contractions_match_dense_kronecker() {
        // Tensor of shape 5 (fast) x 4 (slow); vec(X) in x-fastest order means
        // the Kronecker action is (M2 ⊗ M1) x.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m1 = random(3, 5, &mut rng);
        let m2 = random(6, 4, &mut rng);
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (t, dims) = sum_factor_contract(&x, &[5, 4], &SmallMat::from_dmatrix(&m1), 0).unwrap();
        let (y, dims) = sum_factor_contract(&t, &dims, &SmallMat::from_dmatrix(&m2), 1).unwrap();
        assert_eq!(dims, vec![3, 6]);
        let dense = kron(&m2, &m1) * nalgebra::DVector::from_vec(x);
        for (a, b) in y.iter().zip(dense.iter()) {
            assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn transposed_and_accumulating_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = SmallMat::<f64>::from_dmatrix(&random(4, 3, &mut rng));
        let x: Vec<f64> = (0..2 * 4 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; 2 * 3 * 5];
        contract_t(&m, &x, &[2, 4, 5], 1, &mut a);
        let mut b = vec![0.0; 2 * 3 * 5];
        contract(&m.transpose(), &x, &[2, 4, 5], 1, &mut b);
        assert_eq!(a, b);
        contract_t_add(&m, &x, &[2, 4, 5], 1, &mut b);
        for (u, v) in a.iter().zip(&b) {
            assert!((2.0 * u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let m = SmallMat::<f64>::identity(3);
        assert!(sum_factor_contract(&[0.0; 6], &[2, 3], &m, 0).is_err());
        assert!(sum_factor_contract(&[0.0; 5], &[2, 3], &m, 1).is_err());
        assert!(sum_factor_contract(&[0.0; 6], &[2, 3], &m, 2).is_err());
    }

    #[test]
    fn sparse_matches_dense() {
        let rows = vec![vec![(0, 1.0), (2, -0.5)], vec![], vec![(1, 2.0)]];
        let s = Sparse1D::<f64>::from_rows(3, &rows);
        let d = s.to_dmatrix();
        let x: Vec<f64> = (0..3 * 2).map(|v| v as f64 + 1.0).collect();
        let mut y = vec![0.0; 6];
        s.contract(&x, &[3, 2], 0, &mut y);
        let mut z = vec![0.0; 6];
        contract(&SmallMat::from_dmatrix(&d), &x, &[3, 2], 0, &mut z);
        assert_eq!(y, z);
        assert_eq!(s.transpose().to_dmatrix(), d.transpose());
    }
}
