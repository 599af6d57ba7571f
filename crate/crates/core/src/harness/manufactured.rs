//! Manufactured Stokes solution built from a stream function.
//!
//! `ψ(x) = Π φ(x_i)` with `φ(x) = x²(x−1)² exp(−(x−μ)²/σ²) / √(2πσ²)`. The
//! velocity is a fixed linear combination of the partial derivatives of `ψ`
//! whose divergence cancels identically, and `p(x) = Π cos(2πx_i)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Highest derivative order of `φ` needed for `f = −Δu + ∇p`.
const MAX_ORDER: usize = 3;

/// Velocity coefficients `u_c = Σ_j C[c][j] ∂_j ψ`; every `C` is skew in the
/// sense `Σ_c Σ_j C[c][j] ∂_c∂_j ψ = 0`.
const CURL_2D: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
const CURL_3D: [[f64; 3]; 3] = [[0.0, 1.0, 1.0], [-1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManufacturedSolution {
    pub dim: usize,
    pub sigma: f64,
    pub mu: f64,
}

/// Shorthand for [`ManufacturedSolution::new`].
pub fn manufactured_fields(dim: usize, sigma: f64, mu: f64) -> Result<ManufacturedSolution> {
    ManufacturedSolution::new(dim, sigma, mu)
}

impl ManufacturedSolution {
    pub const DEFAULT_SIGMA: f64 = 0.1;
    pub const DEFAULT_MU: f64 = 0.5;

    pub fn new(dim: usize, sigma: f64, mu: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if !mu.is_finite() {
            return Err(Error::invalid("mu must be finite"));
        }
        Ok(Self { dim, sigma, mu })
    }

    pub fn with_defaults(dim: usize) -> Result<Self> {
        Self::new(dim, Self::DEFAULT_SIGMA, Self::DEFAULT_MU)
    }

    fn curl(&self) -> &'static [[f64; 3]; 3] {
        if self.dim == 2 {
            &CURL_2D
        } else {
            &CURL_3D
        }
    }

    /// `φ^{(n)}(x)` for `n ≤ 3`.
    pub fn phi(&self, n: usize, x: f64) -> f64 {
        assert!(n <= MAX_ORDER, "derivative order {n} not available");
        let s2 = self.sigma * self.sigma;
        let g = (-(x - self.mu).powi(2) / s2).exp() / (2.0 * PI * s2).sqrt();
        // g^{(j)} = P_j g with P_{j+1} = P_j' + t P_j, t = −2(x−μ)/σ²
        let t = -2.0 * (x - self.mu) / s2;
        let dt = -2.0 / s2;
        let pg = [1.0, t, dt + t * t, 3.0 * t * dt + t * t * t];
        // q = x²(x−1)² = x⁴ − 2x³ + x²
        let q = [
            x.powi(4) - 2.0 * x.powi(3) + x * x,
            4.0 * x.powi(3) - 6.0 * x * x + 2.0 * x,
            12.0 * x * x - 12.0 * x + 2.0,
            24.0 * x - 12.0,
        ];
        const BINOM: [[f64; 4]; 4] = [
            [1.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 2.0, 1.0, 0.0],
            [1.0, 3.0, 3.0, 1.0],
        ];
        (0..=n).map(|j| BINOM[n][j] * q[j] * pg[n - j]).sum::<f64>() * g
    }

    /// Mixed partial derivative of `ψ` with per-direction orders.
    pub fn psi(&self, orders: [usize; 3], x: &[f64]) -> f64 {
        (0..self.dim).map(|i| self.phi(orders[i], x[i])).product()
    }

    fn unit(i: usize) -> [usize; 3] {
        let mut o = [0; 3];
        o[i] = 1;
        o
    }

    /// Velocity component `c`.
    pub fn u(&self, c: usize, x: &[f64]) -> f64 {
        let cm = self.curl();
        (0..self.dim)
            .filter(|&j| cm[c][j] != 0.0)
            .map(|j| cm[c][j] * self.psi(Self::unit(j), x))
            .sum()
    }

    /// `∂_i u_c`.
    pub fn grad_u(&self, c: usize, i: usize, x: &[f64]) -> f64 {
        let cm = self.curl();
        (0..self.dim)
            .filter(|&j| cm[c][j] != 0.0)
            .map(|j| {
                let mut o = Self::unit(j);
                o[i] += 1;
                cm[c][j] * self.psi(o, x)
            })
            .sum()
    }

    /// `Δu_c`.
    pub fn laplace_u(&self, c: usize, x: &[f64]) -> f64 {
        let cm = self.curl();
        let mut sum = 0.0;
        for j in (0..self.dim).filter(|&j| cm[c][j] != 0.0) {
            for i in 0..self.dim {
                let mut o = Self::unit(j);
                o[i] += 2;
                sum += cm[c][j] * self.psi(o, x);
            }
        }
        sum
    }

    /// `∇·u`, identically zero up to rounding.
    pub fn div_u(&self, x: &[f64]) -> f64 {
        (0..self.dim).map(|c| self.grad_u(c, c, x)).sum()
    }

    pub fn p(&self, x: &[f64]) -> f64 {
        (0..self.dim).map(|i| (2.0 * PI * x[i]).cos()).product()
    }

    /// `∂_i p`.
    pub fn grad_p(&self, i: usize, x: &[f64]) -> f64 {
        (0..self.dim)
            .map(|j| {
                if j == i {
                    -2.0 * PI * (2.0 * PI * x[j]).sin()
                } else {
                    (2.0 * PI * x[j]).cos()
                }
            })
            .product()
    }

    /// Component `c` of `f = −Δu + ∇p`.
    pub fn f(&self, c: usize, x: &[f64]) -> f64 {
        -self.laplace_u(c, x) + self.grad_p(c, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const STEP: f64 = 1e-6;

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
    }

    fn close(a: f64, b: f64, scale: f64) -> bool {
        (a - b).abs() <= 1e-6 * scale.max(1.0)
    }

    #[test]
    fn phi_derivatives_match_finite_differences() {
        let ms = ManufacturedSolution::with_defaults(2).unwrap();
        // largest |φ'''| sets the relative scale
        let scale = (0..=100).map(|i| ms.phi(3, i as f64 / 100.0).abs()).fold(0.0, f64::max);
        for i in 1..40 {
            let x = i as f64 / 40.0;
            for n in 0..MAX_ORDER {
                let fd = central(|y| ms.phi(n, y), x);
                assert!(close(ms.phi(n + 1, x), fd, scale), "n={n} x={x}");
            }
        }
    }

    #[test]
    fn psi_derivatives_match_finite_differences() {
        let ms = ManufacturedSolution::new(3, 0.2, 0.4).unwrap();
        let x = [0.31, 0.47, 0.62];
        for i in 0..3 {
            let fd = central(
                |t| {
                    let mut y = x;
                    y[i] = t;
                    ms.psi([0, 1, 0], &y)
                },
                x[i],
            );
            let mut o = [0, 1, 0];
            o[i] += 1;
            assert!(close(ms.psi(o, &x), fd, 1.0), "direction {i}");
        }
    }

    #[test]
    fn velocity_gradient_and_pressure_gradient_match_finite_differences() {
        for dim in [2, 3] {
            let ms = ManufacturedSolution::new(dim, 0.2, 0.45).unwrap();
            let x = [0.37, 0.58, 0.44];
            for c in 0..dim {
                for i in 0..dim {
                    let shifted = |t: f64| {
                        let mut y = x;
                        y[i] = t;
                        y
                    };
                    let fd = central(|t| ms.u(c, &shifted(t)), x[i]);
                    assert!(close(ms.grad_u(c, i, &x), fd, 1.0));
                    let fd2 = central(|t| ms.grad_u(c, i, &shifted(t)), x[i]);
                    let second = {
                        let mut s = 0.0;
                        for j in (0..dim).filter(|&j| ms.curl()[c][j] != 0.0) {
                            let mut o = ManufacturedSolution::unit(j);
                            o[i] += 2;
                            s += ms.curl()[c][j] * ms.psi(o, &x);
                        }
                        s
                    };
                    assert!(close(second, fd2, 10.0));
                }
            }
            for i in 0..dim {
                let fd = central(
                    |t| {
                        let mut y = x;
                        y[i] = t;
                        ms.p(&y)
                    },
                    x[i],
                );
                assert!(close(ms.grad_p(i, &x), fd, 1.0));
            }
        }
    }

    #[test]
    fn velocity_is_divergence_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for dim in [2, 3] {
            let ms = ManufacturedSolution::with_defaults(dim).unwrap();
            for _ in 0..100 {
                let x: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
                assert!(ms.div_u(&x).abs() <= 1e-12, "{}", ms.div_u(&x));
            }
        }
    }

    #[test]
    fn velocity_vanishes_on_the_boundary() {
        for dim in [2, 3] {
            let ms = ManufacturedSolution::new(dim, 0.3, 0.4).unwrap();
            for i in 0..dim {
                for side in [0.0, 1.0] {
                    let mut x = [0.3, 0.6, 0.7];
                    x[i] = side;
                    for c in 0..dim {
                        assert!(ms.u(c, &x).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn pressure_is_one_at_the_center_in_2d() {
        let ms = ManufacturedSolution::with_defaults(2).unwrap();
        assert!((ms.p(&[0.5, 0.5, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(ManufacturedSolution::new(2, 0.0, 0.5).is_err());
        assert!(ManufacturedSolution::new(2, -1.0, 0.5).is_err());
        assert!(ManufacturedSolution::new(4, 0.1, 0.5).is_err());
    }
}
