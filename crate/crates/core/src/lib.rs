//! Numerical laboratory for self-similar blow-up in the semilinear heat
//! equation `u_t = Δu + |u|^{p-1} u`.
//!
//! Everything happens in similarity variables: around a blow-up point and
//! time `T` the rescaled unknown
//!
//! ```text
//! w(y, s) = (T - t)^{1/(p-1)} u(x, t),   y = x / sqrt(T - t),   s = -log(T - t)
//! ```
//!
//! solves `w_s = Δw - (y/2)·∇w - w/(p-1) + |w|^{p-1} w`, whose linearization
//! around the constant equilibrium `κ = (p-1)^{-1/(p-1)}` is the
//! Ornstein-Uhlenbeck-type generator `L = Δ - (y/2)·∇ + 1`, self-adjoint in
//! the Gaussian space `L²_ρ`, `ρ(y) = (4π)^{-N/2} e^{-|y|²/4}`.
//!
//! The crate provides, in dependency order:
//!
//! * [`spectral`] — weighted grids, the polynomial eigenbasis of `L`, and
//!   Gaussian-weighted projections;
//! * [`profile`] — model parameters, the blow-up profile, the linearization
//!   potential, and smooth cutoffs;
//! * [`solver`] — finite-difference evolution in similarity variables,
//!   reference trajectories, and trajectory persistence;
//! * [`modes`] — decomposition of a perturbation into expanding / null /
//!   contracting parts and membership in the shrinking set;
//! * [`kernel`] — the Mehler semigroup `e^{tL}`, the perturbed kernel, and
//!   divergence antiderivatives with Gaussian decay;
//! * [`shooting`] — bisection search for initial data whose perturbation
//!   stays in the shrinking set;
//! * [`classify`] — the trajectory-difference dichotomy (quadratic null
//!   behaviour vs. exponential collapse);
//! * [`physical`] — maps back to physical variables, the final profile, and
//!   intermediate-region bound reports.

pub mod classify;
pub mod field;
pub mod kernel;
pub mod modes;
pub mod physical;
pub mod profile;
pub mod shooting;
pub mod solver;
pub mod spectral;

pub use field::FieldState;
pub use modes::{MembershipReport, ModeDecomposition, ShrinkingSetSpec};
pub use profile::{CutoffSpec, ModelParams};
pub use solver::{InitialDataSpec, SolverConfig, Trajectory};
pub use spectral::{MultiIndex, SymmetricMatrix, WeightedGrid};
