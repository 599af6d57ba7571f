//! Univariate building blocks.
//!
//! Every cell and patch operator of the Raviart–Thomas discretization on a
//! Cartesian mesh is a sum of Kronecker products of the 1D matrices built here:
//! mass, interior penalty Laplacian, derivative, mixed mass and the two-child
//! refinement embedding. Assembly over several cells goes through [`Space1D`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature1D {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature1D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative on `[-1, 1]`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-14 {
        // P_n'(±1) = (±1)^{n+1} n(n+1)/2
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// `n`-point Gauss–Legendre quadrature mapped to `[0, 1]`.
pub fn gauss_quadrature(n: usize) -> Result<Quadrature1D> {
    if n == 0 {
        return Err(Error::invalid("quadrature needs at least one point"));
    }
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        points.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    Ok(Quadrature1D {
        points: idx.iter().map(|&i| points[i]).collect(),
        weights: idx.iter().map(|&i| weights[i]).collect(),
    })
}

/// Smallest Gauss rule integrating polynomials of degree `deg` exactly.
pub fn exact_rule_for(deg: usize) -> Quadrature1D {
    gauss_quadrature(deg / 2 + 1).expect("n >= 1")
}

/// `n` Gauss–Lobatto points on `[0, 1]`; a single point is the midpoint.
pub fn gauss_lobatto_points(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => {
            let deg = n - 1;
            let df = deg as f64;
            let mut pts = vec![-1.0];
            for i in 1..deg {
                let mut x = -(std::f64::consts::PI * i as f64 / df).cos();
                for _ in 0..100 {
                    let (p, dp) = legendre(deg, x);
                    let d2p = (2.0 * x * dp - df * (df + 1.0) * p) / (1.0 - x * x);
                    let dx = dp / d2p;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                pts.push(x);
            }
            pts.push(1.0);
            pts.iter().map(|&x| 0.5 * (x + 1.0)).collect()
        }
    }
}

/// Nodal Lagrange basis of the given degree on the reference interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis1D {
    pub degree: usize,
    pub nodes: Vec<f64>,
}

impl Basis1D {
    /// Lagrange basis on Gauss–Lobatto nodes.
    pub fn lagrange(degree: usize) -> Self {
        Self {
            degree,
            nodes: gauss_lobatto_points(degree + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, i: usize, x: f64) -> f64 {
        let xi = self.nodes[i];
        self.nodes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &xj)| (x - xj) / (xi - xj))
            .product()
    }

    pub fn derivative(&self, i: usize, x: f64) -> f64 {
        let xi = self.nodes[i];
        let mut sum = 0.0;
        for (l, &xl) in self.nodes.iter().enumerate() {
            if l == i {
                continue;
            }
            let mut prod = 1.0 / (xi - xl);
            for (j, &xj) in self.nodes.iter().enumerate() {
                if j != i && j != l {
                    prod *= (x - xj) / (xi - xj);
                }
            }
            sum += prod;
        }
        sum
    }

    /// `(points × basis)` table of values.
    pub fn values_at(&self, points: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), self.len(), |q, i| self.value(i, points[q]))
    }

    /// `(points × basis)` table of reference derivatives.
    pub fn derivatives_at(&self, points: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), self.len(), |q, i| self.derivative(i, points[q]))
    }

    /// Integrals `∫₀¹ φ_i`.
    pub fn integrals(&self) -> Vec<f64> {
        let q = exact_rule_for(self.degree);
        (0..self.len()).map(|i| q.integrate(|x| self.value(i, x))).collect()
    }
}

/// Cell mass matrix `h ∫ test_i ansatz_j`, rows indexed by the test basis.
pub fn mass_matrix_1d(ansatz: &Basis1D, test: &Basis1D, h: f64) -> DMatrix<f64> {
    let q = exact_rule_for(ansatz.degree + test.degree);
    let vt = test.values_at(&q.points);
    let va = ansatz.values_at(&q.points);
    DMatrix::from_fn(test.len(), ansatz.len(), |i, j| {
        h * (0..q.len()).map(|p| q.weights[p] * vt[(p, i)] * va[(p, j)]).sum::<f64>()
    })
}

/// Cell matrix `∫ test_i ansatz_j'` on the reference interval. Under a
/// Cartesian map the `1/h` of the derivative cancels the `h` of the measure.
pub fn derivative_matrix_1d(test: &Basis1D, ansatz: &Basis1D) -> DMatrix<f64> {
    let q = exact_rule_for(ansatz.degree + test.degree);
    let vt = test.values_at(&q.points);
    let da = ansatz.derivatives_at(&q.points);
    DMatrix::from_fn(test.len(), ansatz.len(), |i, j| {
        (0..q.len()).map(|p| q.weights[p] * vt[(p, i)] * da[(p, j)]).sum::<f64>()
    })
}

/// Cell stiffness `(1/h) ∫ φ_i' φ_j'`.
pub fn stiffness_matrix_1d(basis: &Basis1D, h: f64) -> DMatrix<f64> {
    let q = exact_rule_for(2 * basis.degree);
    let d = basis.derivatives_at(&q.points);
    DMatrix::from_fn(basis.len(), basis.len(), |i, j| {
        (0..q.len()).map(|p| q.weights[p] * d[(p, i)] * d[(p, j)]).sum::<f64>() / h
    })
}

/// Interior penalty parameter `γ_e = (k+1)(k+2)/h` for Raviart–Thomas degree `k`.
pub fn penalty(degree: usize, h: f64) -> f64 {
    ((degree + 1) * (degree + 2)) as f64 / h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Continuity {
    /// Neighboring cells share the node on their common endpoint.
    Continuous,
    /// Every cell owns all of its nodes.
    Discontinuous,
}

/// Treatment of an end point of a [`Space1D`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EndCondition {
    /// Endpoint node removed (homogeneous Dirichlet, continuous spaces only).
    StrongZero,
    /// Boundary terms `2γ uv − ∂ₙu v − u ∂ₙv` of a physical boundary.
    WeakNitsche,
    /// Interior face towards a neighbor where the function vanishes:
    /// `γ uv − ½∂ₙu v − ½u ∂ₙv`.
    Interface,
    /// No end terms.
    None,
}

/// A 1D finite element space over `cells` consecutive intervals of length `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Space1D {
    pub basis: Basis1D,
    pub cells: usize,
    pub h: f64,
    pub continuity: Continuity,
    pub lower: EndCondition,
    pub upper: EndCondition,
}

impl Space1D {
    pub fn new(
        degree: usize,
        cells: usize,
        h: f64,
        continuity: Continuity,
        lower: EndCondition,
        upper: EndCondition,
    ) -> Result<Self> {
        if cells == 0 {
            return Err(Error::invalid("a 1D space needs at least one cell"));
        }
        if !(h > 0.0) {
            return Err(Error::invalid(format!("mesh size must be positive, got {h}")));
        }
        let strong = lower == EndCondition::StrongZero || upper == EndCondition::StrongZero;
        if strong && (continuity == Continuity::Discontinuous || degree == 0) {
            return Err(Error::invalid(
                "strong zero end conditions need a continuous space of degree >= 1",
            ));
        }
        Ok(Self {
            basis: Basis1D::lagrange(degree),
            cells,
            h,
            continuity,
            lower,
            upper,
        })
    }

    /// Continuous space with both ends removed.
    pub fn continuous_zero(degree: usize, cells: usize, h: f64) -> Result<Self> {
        Self::new(
            degree,
            cells,
            h,
            Continuity::Continuous,
            EndCondition::StrongZero,
            EndCondition::StrongZero,
        )
    }

    /// Discontinuous space with the given end treatment.
    pub fn discontinuous(
        degree: usize,
        cells: usize,
        h: f64,
        lower: EndCondition,
        upper: EndCondition,
    ) -> Result<Self> {
        Self::new(degree, cells, h, Continuity::Discontinuous, lower, upper)
    }

    pub fn degree(&self) -> usize {
        self.basis.degree
    }

    /// Nodes per cell.
    pub fn local_len(&self) -> usize {
        self.basis.len()
    }

    fn shift(&self) -> usize {
        usize::from(self.lower == EndCondition::StrongZero)
    }

    pub fn n_dofs(&self) -> usize {
        match self.continuity {
            Continuity::Discontinuous => self.cells * self.local_len(),
            Continuity::Continuous => {
                let all = self.cells * self.degree() + 1;
                all - self.shift() - usize::from(self.upper == EndCondition::StrongZero)
            }
        }
    }

    /// Global index of local node `a` in `cell`, `None` for removed nodes.
    pub fn dof(&self, cell: usize, a: usize) -> Option<usize> {
        match self.continuity {
            Continuity::Discontinuous => Some(cell * self.local_len() + a),
            Continuity::Continuous => {
                let g = cell * self.degree() + a;
                let last = self.cells * self.degree();
                if (g == 0 && self.lower == EndCondition::StrongZero)
                    || (g == last && self.upper == EndCondition::StrongZero)
                {
                    None
                } else {
                    Some(g - self.shift())
                }
            }
        }
    }

    fn scatter_cell(&self, target: &mut DMatrix<f64>, cell: usize, local: &DMatrix<f64>) {
        for a in 0..self.local_len() {
            let Some(i) = self.dof(cell, a) else { continue };
            for b in 0..self.local_len() {
                if let Some(j) = self.dof(cell, b) {
                    target[(i, j)] += local[(a, b)];
                }
            }
        }
    }

    /// Global vector of coefficients multiplying local node values at the left
    /// (`side = 0`) or right (`side = 1`) end of `cell`.
    fn trace(&self, cell: usize, side: usize, derivative: bool) -> Vec<(usize, f64)> {
        let x = side as f64;
        (0..self.local_len())
            .filter_map(|a| {
                self.dof(cell, a).map(|g| {
                    let v = if derivative {
                        self.basis.derivative(a, x) / self.h
                    } else {
                        self.basis.value(a, x)
                    };
                    (g, v)
                })
            })
            .collect()
    }

    /// Adds `α (a bᵀ + b aᵀ)` for sparse vectors `a`, `b`.
    fn add_sym(target: &mut DMatrix<f64>, alpha: f64, a: &[(usize, f64)], b: &[(usize, f64)]) {
        for &(i, ai) in a {
            for &(j, bj) in b {
                target[(i, j)] += alpha * ai * bj;
                target[(j, i)] += alpha * ai * bj;
            }
        }
    }

    pub fn mass(&self) -> DMatrix<f64> {
        let local = mass_matrix_1d(&self.basis, &self.basis, self.h);
        let mut m = DMatrix::zeros(self.n_dofs(), self.n_dofs());
        for e in 0..self.cells {
            self.scatter_cell(&mut m, e, &local);
        }
        m
    }

    /// Interior penalty Laplacian with jump penalty `penalty` on interior
    /// faces and the configured end conditions.
    pub fn laplace(&self, penalty: f64) -> Result<DMatrix<f64>> {
        if !(penalty > 0.0) {
            return Err(Error::invalid(format!("penalty must be positive, got {penalty}")));
        }
        let n = self.n_dofs();
        let local = stiffness_matrix_1d(&self.basis, self.h);
        let mut l = DMatrix::zeros(n, n);
        for e in 0..self.cells {
            self.scatter_cell(&mut l, e, &local);
        }
        if self.continuity == Continuity::Discontinuous {
            for e in 0..self.cells - 1 {
                // jump = u⁻ − u⁺, average derivative ½(u⁻' + u⁺')
                let mut jump = self.trace(e, 1, false);
                jump.extend(self.trace(e + 1, 0, false).into_iter().map(|(g, v)| (g, -v)));
                let mut avg = self.trace(e, 1, true);
                avg.extend(self.trace(e + 1, 0, true));
                let avg: Vec<_> = avg.into_iter().map(|(g, v)| (g, 0.5 * v)).collect();
                Self::add_sym(&mut l, 0.5 * penalty, &jump, &jump);
                Self::add_sym(&mut l, -1.0, &jump, &avg);
            }
        }
        // Outward normal derivative is −d/dx at the lower end and +d/dx at the upper end.
        for (cell, side, sign, cond) in [
            (0, 0, -1.0, self.lower),
            (self.cells - 1, 1, 1.0, self.upper),
        ] {
            let (pen, weight) = match cond {
                EndCondition::WeakNitsche => (2.0 * penalty, 1.0),
                EndCondition::Interface => (penalty, 0.5),
                EndCondition::StrongZero | EndCondition::None => continue,
            };
            let val = self.trace(cell, side, false);
            let dn: Vec<_> = self
                .trace(cell, side, true)
                .into_iter()
                .map(|(g, v)| (g, sign * v))
                .collect();
            Self::add_sym(&mut l, 0.5 * pen, &val, &val);
            Self::add_sym(&mut l, -weight, &val, &dn);
        }
        Ok(l)
    }

    fn check_partner(&self, other: &Space1D) -> Result<()> {
        if self.cells != other.cells || (self.h - other.h).abs() > 1e-14 * self.h {
            return Err(Error::invalid("1D spaces live on different intervals"));
        }
        Ok(())
    }

    /// Mixed mass `∫ ψ_i φ_j` with `self` as test space and `ansatz` as trial space.
    pub fn mixed_mass(&self, ansatz: &Space1D) -> Result<DMatrix<f64>> {
        self.check_partner(ansatz)?;
        let local = mass_matrix_1d(&ansatz.basis, &self.basis, self.h);
        Ok(self.assemble_mixed(ansatz, &local))
    }

    /// Mixed derivative `∫ ψ_i φ_j'` with `self` as test space.
    pub fn mixed_derivative(&self, ansatz: &Space1D) -> Result<DMatrix<f64>> {
        self.check_partner(ansatz)?;
        let local = derivative_matrix_1d(&self.basis, &ansatz.basis);
        Ok(self.assemble_mixed(ansatz, &local))
    }

    fn assemble_mixed(&self, ansatz: &Space1D, local: &DMatrix<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_dofs(), ansatz.n_dofs());
        for e in 0..self.cells {
            for a in 0..self.local_len() {
                let Some(i) = self.dof(e, a) else { continue };
                for b in 0..ansatz.local_len() {
                    if let Some(j) = ansatz.dof(e, b) {
                        m[(i, j)] += local[(a, b)];
                    }
                }
            }
        }
        m
    }

    /// Same space on a mesh refined once.
    pub fn refined(&self) -> Space1D {
        Space1D {
            basis: self.basis.clone(),
            cells: 2 * self.cells,
            h: 0.5 * self.h,
            continuity: self.continuity,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

/// Interior penalty Laplacian on `cells` intervals with the same condition on
/// both ends. `StrongZero` selects the continuous space with both end nodes
/// removed, every other condition a discontinuous space.
pub fn sipg_laplace_1d(
    degree: usize,
    cells: usize,
    h: f64,
    penalty: f64,
    bc: EndCondition,
) -> Result<DMatrix<f64>> {
    let space = match bc {
        EndCondition::StrongZero => Space1D::continuous_zero(degree, cells, h)?,
        _ => Space1D::discontinuous(degree, cells, h, bc, bc)?,
    };
    space.laplace(penalty)
}

/// Two-child embedding of one coarse cell: rows are the child nodes (left
/// child first; the shared midpoint appears once for continuous spaces),
/// columns the coarse nodes.
pub fn embedding_1d(degree: usize, continuity: Continuity) -> DMatrix<f64> {
    let basis = Basis1D::lagrange(degree);
    let n = basis.len();
    let rows: Vec<f64> = match continuity {
        Continuity::Discontinuous => (0..2)
            .flat_map(|s| basis.nodes.iter().map(move |&x| 0.5 * (x + s as f64)))
            .collect(),
        Continuity::Continuous => {
            let mut r: Vec<f64> = basis.nodes.iter().map(|&x| 0.5 * x).collect();
            r.extend(basis.nodes.iter().skip(1).map(|&x| 0.5 * (x + 1.0)));
            r
        }
    };
    DMatrix::from_fn(rows.len(), n, |i, j| basis.value(j, rows[i]))
}

/// Global prolongation between a space and its refinement, as sparse rows
/// indexed by fine degrees of freedom.
pub fn prolongation_1d(coarse: &Space1D, fine: &Space1D) -> Result<Vec<Vec<(usize, f64)>>> {
    if fine.cells != 2 * coarse.cells || fine.basis != coarse.basis {
        return Err(Error::invalid("fine space is not the refinement of the coarse space"));
    }
    let mut rows: Vec<Option<Vec<(usize, f64)>>> = vec![None; fine.n_dofs()];
    for ef in 0..fine.cells {
        let (ec, s) = (ef / 2, (ef % 2) as f64);
        for r in 0..fine.local_len() {
            let Some(i) = fine.dof(ef, r) else { continue };
            if rows[i].is_some() {
                continue;
            }
            let x = 0.5 * (fine.basis.nodes[r] + s);
            let row = (0..coarse.local_len())
                .filter_map(|a| {
                    let v = coarse.basis.value(a, x);
                    match coarse.dof(ec, a) {
                        Some(j) if v.abs() > 1e-15 => Some((j, v)),
                        _ => None,
                    }
                })
                .collect();
            rows[i] = Some(row);
        }
    }
    Ok(rows.into_iter().map(|r| r.unwrap_or_default()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn gauss_rules() {
        let q1 = gauss_quadrature(1).unwrap();
        assert_eq!(q1.points, vec![0.5]);
        assert!(rel_close(q1.weights[0], 1.0, 1e-15));

        let q2 = gauss_quadrature(2).unwrap();
        let d = 0.5 / 3f64.sqrt();
        assert!(rel_close(q2.points[0], 0.5 - d, 1e-15));
        assert!(rel_close(q2.points[1], 0.5 + d, 1e-15));

        let q3 = gauss_quadrature(3).unwrap();
        assert!(rel_close(q3.integrate(|x| x.powi(5)), 1.0 / 6.0, 1e-15));
        assert!(gauss_quadrature(0).is_err());
    }

    #[test]
    fn gauss_exactness_up_to_2n_minus_1() {
        for n in 1..=10 {
            let q = gauss_quadrature(n).unwrap();
            assert!(rel_close(q.weights.iter().sum(), 1.0, 1e-14));
            for p in 0..2 * n {
                let exact = 1.0 / (p as f64 + 1.0);
                assert!(rel_close(q.integrate(|x| x.powi(p as i32)), exact, 1e-13), "n={n} p={p}");
            }
        }
    }

    #[test]
    fn lobatto_points_are_symmetric_and_include_ends() {
        for n in 2..=8 {
            let p = gauss_lobatto_points(n);
            assert_eq!(p[0], 0.0);
            assert_eq!(p[n - 1], 1.0);
            for i in 0..n {
                assert!((p[i] + p[n - 1 - i] - 1.0).abs() < 1e-14);
            }
        }
        let p = gauss_lobatto_points(3);
        assert!((p[1] - 0.5).abs() < 1e-15);
        let p = gauss_lobatto_points(4);
        assert!((p[1] - 0.5 * (1.0 - 1.0 / 5f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn basis_cardinality_and_partition_of_unity() {
        for deg in 0..=5 {
            let b = Basis1D::lagrange(deg);
            for i in 0..b.len() {
                for j in 0..b.len() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((b.value(i, b.nodes[j]) - expect).abs() < 1e-13);
                }
            }
            for x in [0.0, 0.13, 0.5, 0.77, 1.0] {
                let s: f64 = (0..b.len()).map(|i| b.value(i, x)).sum();
                let ds: f64 = (0..b.len()).map(|i| b.derivative(i, x)).sum();
                assert!((s - 1.0).abs() < 1e-13);
                assert!(ds.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = Basis1D::lagrange(4);
        let eps = 1e-6;
        for i in 0..b.len() {
            for x in [0.1, 0.4, 0.9] {
                let fd = (b.value(i, x + eps) - b.value(i, x - eps)) / (2.0 * eps);
                assert!((fd - b.derivative(i, x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mass_matrix_examples() {
        let b0 = Basis1D::lagrange(0);
        let m0 = mass_matrix_1d(&b0, &b0, 1.0);
        assert!((m0[(0, 0)] - 1.0).abs() < 1e-15);

        let b1 = Basis1D::lagrange(1);
        let m1 = mass_matrix_1d(&b1, &b1, 1.0);
        let exact = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m1[(i, j)] - exact[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mixed_mass_row_sums_are_ansatz_integrals() {
        let h = 0.37;
        for (kp, kv) in [(1, 2), (2, 3), (3, 3)] {
            let test = Basis1D::lagrange(kp);
            let ansatz = Basis1D::lagrange(kv);
            let m = mass_matrix_1d(&ansatz, &test, h);
            let ints = ansatz.integrals();
            for j in 0..ansatz.len() {
                let col: f64 = (0..test.len()).map(|i| m[(i, j)]).sum();
                assert!(rel_close(col, h * ints[j], 1e-13));
            }
        }
    }

    #[test]
    fn derivative_matrix_properties() {
        for k in 1..=3 {
            let p = Basis1D::lagrange(k);
            let v = Basis1D::lagrange(k + 1);
            let d = derivative_matrix_1d(&p, &v);
            assert_eq!(d.shape(), (k + 1, k + 2));
            // derivative of a constant vanishes
            let ones = DVector::from_element(k + 2, 1.0);
            assert!((&d * ones).amax() < 1e-13);
            // interpolant of x has derivative 1, so D x = pressure mass times 1
            let xs = DVector::from_vec(v.nodes.clone());
            let lhs = &d * xs;
            let rhs = mass_matrix_1d(&p, &p, 1.0) * DVector::from_element(k + 1, 1.0);
            assert!((lhs - rhs).amax() < 1e-13);
        }
    }

    fn symmetric(m: &DMatrix<f64>) -> bool {
        (m - m.transpose()).amax() <= 1e-13 * m.amax().max(1.0)
    }

    #[test]
    fn sipg_laplace_is_symmetric_with_constant_kernel_when_free() {
        use EndCondition::*;
        for k in 1..=3 {
            let h = 0.25;
            let gamma = penalty(k, h);
            for (lo, hi) in [(None, None), (WeakNitsche, Interface), (Interface, Interface)] {
                let s = Space1D::discontinuous(k, 3, h, lo, hi).unwrap();
                let l = s.laplace(gamma).unwrap();
                assert!(symmetric(&l));
                if lo == None {
                    let ones = DVector::from_element(s.n_dofs(), 1.0);
                    assert!((&l * ones).amax() < 1e-10 * l.amax());
                }
            }
            assert!(Space1D::discontinuous(k, 2, h, None, None)
                .unwrap()
                .laplace(0.0)
                .is_err());
        }
    }

    #[test]
    fn sipg_laplace_is_coercive_at_default_penalty() {
        use EndCondition::*;
        for k in 1..=3 {
            let h = 0.125;
            let gamma = penalty(k, h);
            for (lo, hi) in [(WeakNitsche, WeakNitsche), (Interface, WeakNitsche), (Interface, Interface)] {
                let s = Space1D::discontinuous(k, 2, h, lo, hi).unwrap();
                let l = s.laplace(gamma).unwrap();
                let eig = l.symmetric_eigen();
                assert!(eig.eigenvalues.min() > 0.0, "k={k} {lo:?} {hi:?}");
            }
            let s = Space1D::discontinuous(k, 4, h, None, None).unwrap();
            let eig = s.laplace(gamma).unwrap().symmetric_eigen();
            assert!(eig.eigenvalues.min() > -1e-9 * eig.eigenvalues.amax());
        }
    }

    #[test]
    fn interface_terms_are_half_of_nitsche_consistency() {
        // On a single cell the Nitsche end adds 2γ uv − ∂ₙu v − u∂ₙv, the
        // interface end γ uv − ½(∂ₙu v + u∂ₙv): Nitsche = 2 · Interface.
        use EndCondition::*;
        let (k, h) = (2, 0.5);
        let g = penalty(k, h);
        let base = Space1D::discontinuous(k, 1, h, None, None).unwrap().laplace(g).unwrap();
        let nit = Space1D::discontinuous(k, 1, h, WeakNitsche, None).unwrap().laplace(g).unwrap();
        let int = Space1D::discontinuous(k, 1, h, Interface, None).unwrap().laplace(g).unwrap();
        assert!(((&nit - &base) - 2.0 * (&int - &base)).amax() < 1e-12);
    }

    #[test]
    fn continuous_space_dimensions() {
        let s = Space1D::continuous_zero(2, 2, 0.5).unwrap();
        assert_eq!(s.n_dofs(), 3);
        assert_eq!(s.dof(0, 0), Option::None);
        assert_eq!(s.dof(0, 2), Some(1));
        assert_eq!(s.dof(1, 0), Some(1));
        assert_eq!(s.dof(1, 2), Option::None);
        assert!(Space1D::discontinuous(1, 2, 0.5, EndCondition::StrongZero, EndCondition::None).is_err());
    }

    #[test]
    fn embedding_reproduces_polynomials() {
        for deg in 0..=4 {
            for cont in [Continuity::Continuous, Continuity::Discontinuous] {
                if deg == 0 && cont == Continuity::Continuous {
                    continue;
                }
                let e = embedding_1d(deg, cont);
                let ones = DVector::from_element(deg + 1, 1.0);
                assert!((&e * ones).iter().all(|v| (v - 1.0).abs() < 1e-13));
                let svd = e.clone().svd(false, false);
                assert!(svd.singular_values.min() > 1e-8, "full column rank");
                // nodal value at the interval midpoint is reproduced
                let b = Basis1D::lagrange(deg);
                let coeffs = DVector::from_fn(deg + 1, |i, _| (b.nodes[i] * 3.0).sin());
                let fine = &e * &coeffs;
                let mid: f64 = (0..b.len()).map(|i| coeffs[i] * b.value(i, 0.5)).sum();
                let idx = match cont {
                    Continuity::Continuous => deg,
                    Continuity::Discontinuous => deg + 1,
                };
                if deg > 0 {
                    assert!((fine[idx] - mid).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn prolongation_preserves_functions() {
        let coarse = Space1D::continuous_zero(3, 2, 0.5).unwrap();
        let fine = coarse.refined();
        let rows = prolongation_1d(&coarse, &fine).unwrap();
        assert_eq!(rows.len(), fine.n_dofs());
        // coarse function: interpolant of x(1-x) which is in the space
        let f = |x: f64| x * (1.0 - x);
        let mut cvals = vec![0.0; coarse.n_dofs()];
        for e in 0..coarse.cells {
            for a in 0..coarse.local_len() {
                if let Some(g) = coarse.dof(e, a) {
                    cvals[g] = f((e as f64 + coarse.basis.nodes[a]) * coarse.h);
                }
            }
        }
        for e in 0..fine.cells {
            for a in 0..fine.local_len() {
                if let Some(g) = fine.dof(e, a) {
                    let v: f64 = rows[g].iter().map(|&(j, w)| w * cvals[j]).sum();
                    let x = (e as f64 + fine.basis.nodes[a]) * fine.h;
                    assert!((v - f(x)).abs() < 1e-14);
                }
            }
        }
    }
}
