//! The convex profile `φ` with curvature confined to the band `(λ, Λ)`, and
//! the target set `K_f = {((a, b), (b, −φ′(a)))}` of the inclusion.

use std::f64::consts::LN_2;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Curvature band and crossover sharpness of `φ`.
///
/// `φ″(a) = λ + (Λ − λ)(1 − tanh(k a))/2`, so `φ″ → Λ` as `a → −∞` and
/// `φ″ → λ` as `a → +∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(default = "default_sharpness")]
    pub sharpness: f64,
}

fn default_sharpness() -> f64 {
    1.0
}

impl ProfileConfig {
    pub fn new(lambda: f64, big_lambda: f64, sharpness: f64) -> Result<Self> {
        let cfg = Self {
            lambda,
            big_lambda,
            sharpness,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Requires `0 < λ < Λ` and `k > 0`, all finite.
    pub fn validate(&self) -> Result<()> {
        let Self {
            lambda,
            big_lambda,
            sharpness,
        } = *self;
        if !(lambda.is_finite() && big_lambda.is_finite() && sharpness.is_finite()) {
            return Err(Error::Config("profile parameters must be finite".into()));
        }
        if !(lambda > 0.0 && lambda < big_lambda) {
            return Err(Error::Config(format!(
                "need 0 < lambda < Lambda, got lambda={lambda}, Lambda={big_lambda}"
            )));
        }
        if sharpness <= 0.0 {
            return Err(Error::Config(format!(
                "sharpness must be positive, got {sharpness}"
            )));
        }
        Ok(())
    }
}

/// Symmetric 2×2 matrix `((a11, a12), (a12, a22))`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymMatrix2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl SymMatrix2 {
    pub const ZERO: Self = Self {
        a11: 0.0,
        a12: 0.0,
        a22: 0.0,
    };

    pub const fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22 }
    }

    pub fn diag(a11: f64, a22: f64) -> Self {
        Self::new(a11, 0.0, a22)
    }

    /// Frobenius norm of the full matrix (the off-diagonal entry counts twice).
    pub fn norm(&self) -> f64 {
        (self.a11 * self.a11 + 2.0 * self.a12 * self.a12 + self.a22 * self.a22).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.a11.abs().max(self.a12.abs()).max(self.a22.abs())
    }

    /// Largest entrywise deviation.
    pub fn dist_max(&self, other: &Self) -> f64 {
        (*self - *other).max_abs()
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a22.is_finite()
    }

    /// Eigenvalues in increasing order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * (self.a11 + self.a22);
        let h = 0.5 * (self.a11 - self.a22);
        let rad = h.hypot(self.a12);
        (m - rad, m + rad)
    }

    /// Singular values `(σ_min, σ_max)`.
    pub fn singular_values(&self) -> (f64, f64) {
        let (lo, hi) = self.eigenvalues();
        let (a, b) = (lo.abs(), hi.abs());
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn to_array(&self) -> [[f64; 2]; 2] {
        [[self.a11, self.a12], [self.a12, self.a22]]
    }

    /// Lexicographic comparison key.
    pub fn key(&self) -> [f64; 3] {
        [self.a11, self.a12, self.a22]
    }
}

impl Add for SymMatrix2 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.a11 + o.a11, self.a12 + o.a12, self.a22 + o.a22)
    }
}

impl Sub for SymMatrix2 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.a11 - o.a11, self.a12 - o.a12, self.a22 - o.a22)
    }
}

impl Mul<SymMatrix2> for f64 {
    type Output = SymMatrix2;
    fn mul(self, m: SymMatrix2) -> SymMatrix2 {
        SymMatrix2::new(self * m.a11, self * m.a12, self * m.a22)
    }
}

/// `φ″(a) = λ + (Λ − λ)/(1 + e^{2ka})`, inside `(λ, Λ)`.
///
/// In doubles the value rounds onto an endpoint once `|ka|` exceeds about 18.
pub fn phi_dd(cfg: &ProfileConfig, a: f64) -> f64 {
    let (l, u, k) = (cfg.lambda, cfg.big_lambda, cfg.sharpness);
    l + (u - l) / (1.0 + (2.0 * k * a).exp())
}

/// `ln cosh x`, stable for all finite `x`.
pub fn ln_cosh(x: f64) -> f64 {
    let ax = x.abs();
    if ax > 30.0 {
        ax - LN_2 + (-2.0 * ax).exp().ln_1p()
    } else {
        ax.cosh().ln()
    }
}

/// `φ′(a) = λa + (Λ − λ)(a − ln cosh(ka)/k)/2`, normalised by `φ′(0) = 0`.
pub fn phi_d(cfg: &ProfileConfig, a: f64) -> f64 {
    let (l, u, k) = (cfg.lambda, cfg.big_lambda, cfg.sharpness);
    l * a + (u - l) * 0.5 * (a - ln_cosh(k * a) / k)
}

/// Inverse of `φ′`: returns `a` with `|φ′(a) − y| ≤ 1e−12·max(1, |y|)`.
pub fn phi_d_inv(cfg: &ProfileConfig, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::Input(format!("phi_d_inv of non-finite value {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let tol = 1e-12 * y.abs().max(1.0);
    // λa ≤ φ′(a) ≤ Λa for a ≥ 0, mirrored for a ≤ 0.
    let (mut lo, mut hi) = if y > 0.0 {
        (y / cfg.big_lambda, y / cfg.lambda)
    } else {
        (y / cfg.lambda, y / cfg.big_lambda)
    };
    // Safeguarded Newton, iterated to ulp-level convergence rather than
    // stopping at the residual tolerance, so round trips stay tight for large |a|.
    let mut a = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = phi_d(cfg, a) - y;
        if f == 0.0 {
            return Ok(a);
        }
        if f > 0.0 {
            hi = a;
        } else {
            lo = a;
        }
        let newton = a - f / phi_dd(cfg, a);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let done = (next - a).abs() <= 2.0 * f64::EPSILON * a.abs()
            || hi - lo <= f64::EPSILON * hi.abs().max(lo.abs());
        a = next;
        if done {
            break;
        }
    }
    if (phi_d(cfg, a) - y).abs() <= tol {
        return Ok(a);
    }
    Err(Error::Internal(format!(
        "phi_d_inv failed to converge for y={y}"
    )))
}

/// The point `((a, b), (b, −φ′(a)))` of `K_f`.
pub fn kf_point(cfg: &ProfileConfig, a: f64, b: f64) -> SymMatrix2 {
    SymMatrix2::new(a, b, -phi_d(cfg, a))
}

/// Distance proxy to `K_f`: `|X.a22 + φ′(X.a11)|`.
pub fn kf_residual(cfg: &ProfileConfig, x: &SymMatrix2) -> f64 {
    (x.a22 + phi_d(cfg, x.a11)).abs()
}
