//! Model parameters, the blow-up profile, and the linearization potential.
//!
//! The constant equilibrium of the similarity-variable flow is
//! `κ = (p-1)^{-1/(p-1)}`.  Generic blow-up approaches the self-similar shape
//!
//! ```text
//! f(ξ) = κ (1 + (p-1)/(4p) |ξ|²)^{-1/(p-1)},     ξ = y / √s,
//! φ(y, s) = f(y/√s) + N κ / (2 p s),
//! ```
//!
//! and the linearization of the flow around a trajectory close to `φ` carries
//! the potential `α(y, s) = p (φ^{p-1} - κ^{p-1})`, which behaves like
//! `N/(2s)` at the origin, like `-(|y|² - 2N)/(4s)` in the parabolic region,
//! and tends to `-p/(p-1)` for `|y| ≫ √s`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::WeightedGrid;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("exponent p must satisfy p > 1, got {0}")]
    SubunitExponent(f64),
    #[error("p = {p} is supercritical for dimension {dim}: require p < (N+2)/(N-2)")]
    Supercritical { p: f64, dim: usize },
    #[error("dimension must be at least 1, got {0}")]
    BadDimension(usize),
    #[error("cutoff scale K must be positive and finite, got {0}")]
    BadCutoffScale(f64),
}

/// Nonlinearity exponent and space dimension, with the derived constant `κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    p: f64,
    dim: usize,
    kappa: f64,
}

impl ModelParams {
    pub fn new(p: f64, dim: usize) -> Result<Self, ProfileError> {
        if dim == 0 {
            return Err(ProfileError::BadDimension(dim));
        }
        if !(p > 1.0) || !p.is_finite() {
            return Err(ProfileError::SubunitExponent(p));
        }
        if dim >= 3 && p >= (dim as f64 + 2.0) / (dim as f64 - 2.0) {
            return Err(ProfileError::Supercritical { p, dim });
        }
        let kappa = (p - 1.0).powf(-1.0 / (p - 1.0));
        Ok(Self { p, dim, kappa })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `κ^{p-1} = 1/(p-1)`, exactly.
    pub fn kappa_pow_pm1(&self) -> f64 {
        1.0 / (self.p - 1.0)
    }

    /// Sign-preserving power `|w|^{p-1} w`, with exact fast paths for the
    /// integer exponents used throughout the test suite.
    pub fn nonlinearity(&self, w: f64) -> f64 {
        if self.p == 2.0 {
            w.abs() * w
        } else if self.p == 3.0 {
            w * w * w
        } else if self.p == 5.0 {
            (w * w) * (w * w) * w
        } else {
            w.abs().powf(self.p - 1.0) * w
        }
    }

    /// Zeroth-order reaction `-w/(p-1) + |w|^{p-1} w` of the similarity flow.
    pub fn reaction(&self, w: f64) -> f64 {
        -w / (self.p - 1.0) + self.nonlinearity(w)
    }

    /// Self-similar base profile `f(ξ)` as a function of `|ξ|²`.
    pub fn base_profile(&self, xi_sq: f64) -> f64 {
        self.kappa * (1.0 + (self.p - 1.0) / (4.0 * self.p) * xi_sq).powf(-1.0 / (self.p - 1.0))
    }

    /// Time-corrected profile `φ(y, s) = f(y/√s) + Nκ/(2ps)` as a function
    /// of `|y|²`.
    pub fn corrected_profile(&self, y_sq: f64, s: f64) -> f64 {
        self.base_profile(y_sq / s) + self.dim as f64 * self.kappa / (2.0 * self.p * s)
    }

    /// Linearization potential `α(y, s) = p (φ(y,s)^{p-1} - κ^{p-1})`.
    pub fn potential(&self, y_sq: f64, s: f64) -> f64 {
        let phi = self.corrected_profile(y_sq, s);
        self.p * (phi.powf(self.p - 1.0) - self.kappa_pow_pm1())
    }

    pub fn profile_field(&self, grid: &WeightedGrid, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; grid.len()];
        grid.for_each_node(|i, y| {
            out[i] = self.corrected_profile(y.iter().map(|v| v * v).sum(), s)
        });
        out
    }

    pub fn potential_field(&self, grid: &WeightedGrid, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; grid.len()];
        grid.for_each_node(|i, y| out[i] = self.potential(y.iter().map(|v| v * v).sum(), s));
        out
    }
}

/// Radial smooth cutoff `χ(y, s) = χ₀(|y| / (K√s))` where `χ₀` is a `C^∞`
/// bump equal to 1 on `[0, 1]` and 0 on `[2, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    scale: f64,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        Self { scale: 5.0 }
    }
}

impl CutoffSpec {
    pub fn new(scale: f64) -> Result<Self, ProfileError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(ProfileError::BadCutoffScale(scale));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The transition profile `χ₀(r)`: `exp(-1/t)`-glued, monotone
    /// non-increasing, exactly ½ at `r = 3/2`.
    pub fn bump(r: f64) -> f64 {
        fn psi(t: f64) -> f64 {
            if t > 0.0 {
                (-1.0 / t).exp()
            } else {
                0.0
            }
        }
        if r <= 1.0 {
            1.0
        } else if r >= 2.0 {
            0.0
        } else {
            let a = psi(2.0 - r);
            let b = psi(r - 1.0);
            a / (a + b)
        }
    }

    /// `χ(y, s)` as a function of the radius `|y|`.
    pub fn value(&self, radius: f64, s: f64) -> f64 {
        Self::bump(radius / (self.scale * s.sqrt()))
    }

    pub fn field(&self, grid: &WeightedGrid, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; grid.len()];
        grid.for_each_node(|i, y| {
            out[i] = self.value(y.iter().map(|v| v * v).sum::<f64>().sqrt(), s)
        });
        out
    }
}
