//! Eigenmode decomposition of perturbations and the shrinking set.
//!
//! A perturbation `v` of the reference is split against the spectrum of
//! `L = Δ - (y/2)·∇ + 1`.  With `v_b = χv` the bounded part,
//!
//! ```text
//! v = v_b + v_e,
//! v_b = mean + linear·y + (½ yᵀ·quad·y - tr(quad)) + inner,
//! ```
//!
//! where `mean` is the coefficient on the constant eigenfunction
//! (eigenvalue 1, expanding), `linear` the coefficients on `y_i`
//! (eigenvalue ½, expanding), `quad` the matrix of quadratic null
//! coefficients `∫ v_b·M·ρ` with `M_ij = ¼y_iy_j - ½δ_ij` (eigenvalue 0),
//! `inner` everything of degree ≥ 3 (contracting), and `outer = (1-χ)v`
//! lives where the flow is uniformly damped.
//!
//! The shrinking set with amplitude `A`, exponent `η` and target matrix `𝒜`
//! admits `v` at time `s` when
//!
//! ```text
//! |mean|, |linear_i|        ≤ A/s^{2+η}
//! |quad_ij - 𝒜_ij/s²|       ≤ A²/s^{2+η}
//! |inner(y)|                ≤ A/s^{2+η}·(1+|y|³)
//! ‖outer‖∞                  ≤ A²/s^{1/2+η}
//! ```
//!
//! [`check_membership`] reports each condition as a margin (measured value
//! over its bound — inside means every margin ≤ 1), and
//! [`ode_residuals`] measures how well a decomposed trajectory obeys the
//! mode ODEs `mean' = mean`, `linear' = linear/2`,
//! `(quad - 𝒜/s²)' = -2(quad - 𝒜/s²)/s`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FieldState};
use crate::profile::CutoffSpec;
use crate::spectral::{project_quadratic, SpectralError, SymmetricMatrix};

#[derive(Debug, Error)]
pub enum ModesError {
    #[error("invalid shrinking-set parameter: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("series is not uniformly spaced: gap {gap} at index {at}")]
    UnevenSeries { gap: f64, at: usize },
    #[error("csv write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Shrinking-set geometry: amplitude `A`, decay exponent `η`, the target
/// quadratic coefficient, and the cutoff that separates bounded from outer
/// region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkingSetSpec {
    pub amplitude: f64,
    pub eta: f64,
    pub target: SymmetricMatrix,
    pub cutoff: CutoffSpec,
}

impl ShrinkingSetSpec {
    pub fn new(
        amplitude: f64,
        eta: f64,
        target: SymmetricMatrix,
        cutoff: CutoffSpec,
    ) -> Result<Self, ModesError> {
        if !(amplitude > 1.0 && amplitude.is_finite()) {
            return Err(ModesError::BadSpec(format!(
                "amplitude must exceed 1, got {amplitude}"
            )));
        }
        if !(eta > 0.0 && eta < 0.5) {
            return Err(ModesError::BadSpec(format!(
                "decay exponent must lie in (0, 1/2), got {eta}"
            )));
        }
        if !target.max_abs().is_finite() {
            return Err(ModesError::BadSpec(
                "target matrix has non-finite entries".into(),
            ));
        }
        Ok(Self {
            amplitude,
            eta,
            target,
            cutoff,
        })
    }

    /// Conventional choice used throughout: `A = 30`, `η = 1/4`, `K = 5`.
    pub fn standard(target: SymmetricMatrix) -> Self {
        Self {
            amplitude: 30.0,
            eta: 0.25,
            target,
            cutoff: CutoffSpec::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }
}

/// Which constraint of the set a margin refers to.  The order of variants is
/// the tie-break order used when several margins are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentId {
    /// Constant mode (eigenvalue 1).
    Mean,
    /// Coefficient on `y_i` (eigenvalue ½).
    Linear(usize),
    /// Null-mode matrix entry `(i, j)`, upper triangle.
    Quad(usize, usize),
    /// Degree ≥ 3 remainder inside the cutoff, weighted by `1+|y|³`.
    Inner,
    /// Sup norm beyond the cutoff.
    Outer,
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mean => write!(f, "mean"),
            Self::Linear(i) => write!(f, "linear_{i}"),
            Self::Quad(i, j) => write!(f, "quad_{i}{j}"),
            Self::Inner => write!(f, "inner"),
            Self::Outer => write!(f, "outer"),
        }
    }
}

/// Result of splitting one field against the eigenbasis.
#[derive(Debug, Clone)]
pub struct ModeDecomposition {
    pub s: f64,
    /// Coefficient on the constant eigenfunction.
    pub mean: f64,
    /// Coefficients on the coordinate eigenfunctions.
    pub linear: Vec<f64>,
    /// Null-mode matrix `∫ v_b M ρ`.
    pub quad: SymmetricMatrix,
    /// Degree ≥ 3 part of `χv` as a field on the grid.
    pub inner_remainder: Vec<f64>,
    /// `(1-χ)v` as a field on the grid.
    pub outer_remainder: Vec<f64>,
    /// `max |inner| / (1+|y|³)`.
    pub inner_weighted_sup: f64,
    /// `max |outer|`.
    pub outer_sup: f64,
}

/// Margins of one state against the set bounds; a margin is the measured
/// quantity divided by its allowance, so `inside` means all margins ≤ 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    pub s: f64,
    pub margins: Vec<(ComponentId, f64)>,
    pub inside: bool,
}

impl MembershipReport {
    /// The largest margin; ties resolve to the earliest component in the
    /// fixed order (mean, linear, quad upper-triangle row-major, inner,
    /// outer).
    pub fn worst(&self) -> (ComponentId, f64) {
        let mut best = self.margins[0];
        for &(id, m) in &self.margins[1..] {
            if m > best.1 {
                best = (id, m);
            }
        }
        best
    }

    pub fn margin_of(&self, id: ComponentId) -> Option<f64> {
        self.margins.iter().find(|(c, _)| *c == id).map(|(_, m)| *m)
    }
}

/// Split a perturbation field into its eigenmode components.
pub fn decompose(
    v: &FieldState,
    spec: &ShrinkingSetSpec,
) -> Result<ModeDecomposition, ModesError> {
    let grid = v.grid();
    let dim = grid.dim();
    if spec.dim() != dim {
        return Err(ModesError::BadSpec(format!(
            "set target is {}-dimensional but the grid is {}-dimensional",
            spec.dim(),
            dim
        )));
    }
    let s = v.s();
    let values = v.values();
    let mut bounded = vec![0.0; grid.len()];
    let mut mean = 0.0;
    let mut linear = vec![0.0; dim];
    grid.for_each_node(|idx, y| {
        let r = y.iter().map(|c| c * c).sum::<f64>().sqrt();
        let chi = spec.cutoff.value(r, s);
        let vb = chi * values[idx];
        bounded[idx] = vb;
        let w = grid.weight_rho(idx);
        mean += w * vb;
        for (k, &yk) in y.iter().enumerate() {
            linear[k] += w * vb * yk;
        }
    });
    for l in &mut linear {
        *l /= 2.0; // ‖y_i‖²ρ = 2
    }
    let quad = project_quadratic(grid, &bounded)?;

    let mut inner_remainder = vec![0.0; grid.len()];
    let mut outer_remainder = vec![0.0; grid.len()];
    let mut inner_weighted_sup = 0.0f64;
    let mut outer_sup = 0.0f64;
    let trace = quad.trace();
    grid.for_each_node(|idx, y| {
        let low_modes = mean
            + linear.iter().zip(y).map(|(l, yk)| l * yk).sum::<f64>()
            + quad.quadratic_form_half(y)
            - trace;
        let inner = bounded[idx] - low_modes;
        inner_remainder[idx] = inner;
        let r = y.iter().map(|c| c * c).sum::<f64>().sqrt();
        inner_weighted_sup = inner_weighted_sup.max(inner.abs() / (1.0 + r * r * r));
        let outer = values[idx] - bounded[idx];
        outer_remainder[idx] = outer;
        outer_sup = outer_sup.max(outer.abs());
    });

    Ok(ModeDecomposition {
        s,
        mean,
        linear,
        quad,
        inner_remainder,
        outer_remainder,
        inner_weighted_sup,
        outer_sup,
    })
}

/// Measure a decomposition against the set bounds at its own time.
pub fn check_membership(dec: &ModeDecomposition, spec: &ShrinkingSetSpec) -> MembershipReport {
    let s = dec.s;
    let expanding_allowance = spec.amplitude / s.powf(2.0 + spec.eta);
    let null_allowance = spec.amplitude * expanding_allowance;
    let outer_allowance = spec.amplitude * spec.amplitude / s.powf(0.5 + spec.eta);
    let dim = spec.dim();

    let mut margins = Vec::with_capacity(dim * (dim + 1) / 2 + dim + 3);
    margins.push((ComponentId::Mean, dec.mean.abs() / expanding_allowance));
    for (i, l) in dec.linear.iter().enumerate() {
        margins.push((ComponentId::Linear(i), l.abs() / expanding_allowance));
    }
    for i in 0..dim {
        for j in i..dim {
            let tracked = dec.quad.get(i, j) - spec.target.get(i, j) / (s * s);
            margins.push((ComponentId::Quad(i, j), tracked.abs() / null_allowance));
        }
    }
    margins.push((
        ComponentId::Inner,
        dec.inner_weighted_sup / expanding_allowance,
    ));
    margins.push((ComponentId::Outer, dec.outer_sup / outer_allowance));

    let inside = margins.iter().all(|(_, m)| *m <= 1.0);
    MembershipReport {
        s: dec.s,
        margins,
        inside,
    }
}

/// Finite-difference residuals of the mode ODEs along a decomposed
/// trajectory.  `s` holds the interior times where centered differences are
/// defined; `quad` rows follow the upper triangle row-major.
#[derive(Debug, Clone)]
pub struct ResidualSeries {
    pub s: Vec<f64>,
    pub mean: Vec<f64>,
    pub linear: Vec<Vec<f64>>,
    pub quad: Vec<Vec<f64>>,
}

/// Residuals of `mean' = mean`, `linear' = linear/2` and
/// `h' = -2h/s` for `h = quad - target/s²`, via centered differences on a
/// uniformly spaced decomposition series.
pub fn ode_residuals(
    series: &[ModeDecomposition],
    spec: &ShrinkingSetSpec,
) -> Result<ResidualSeries, ModesError> {
    if series.len() < 3 {
        return Err(ModesError::TooFewSamples {
            need: 3,
            got: series.len(),
        });
    }
    let step = series[1].s - series[0].s;
    for (k, pair) in series.windows(2).enumerate() {
        let gap = pair[1].s - pair[0].s;
        if (gap - step).abs() > 1e-9 * step.max(1.0) {
            return Err(ModesError::UnevenSeries { gap, at: k });
        }
    }
    let dim = spec.dim();
    let h_of = |dec: &ModeDecomposition, i: usize, j: usize| {
        dec.quad.get(i, j) - spec.target.get(i, j) / (dec.s * dec.s)
    };

    let interior = series.len() - 2;
    let mut out = ResidualSeries {
        s: Vec::with_capacity(interior),
        mean: Vec::with_capacity(interior),
        linear: vec![Vec::with_capacity(interior); dim],
        quad: vec![Vec::with_capacity(interior); dim * (dim + 1) / 2],
    };
    for k in 1..series.len() - 1 {
        let (prev, here, next) = (&series[k - 1], &series[k], &series[k + 1]);
        let s = here.s;
        out.s.push(s);
        out.mean
            .push((next.mean - prev.mean) / (2.0 * step) - here.mean);
        for i in 0..dim {
            out.linear[i].push(
                (next.linear[i] - prev.linear[i]) / (2.0 * step) - 0.5 * here.linear[i],
            );
        }
        let mut slot = 0;
        for i in 0..dim {
            for j in i..dim {
                let dh = (h_of(next, i, j) - h_of(prev, i, j)) / (2.0 * step);
                out.quad[slot].push(dh + 2.0 * h_of(here, i, j) / s);
                slot += 1;
            }
        }
    }
    Ok(out)
}

/// Write a decomposition series with its membership margins as CSV.
pub fn write_series_csv(
    mut out: impl Write,
    series: &[ModeDecomposition],
    spec: &ShrinkingSetSpec,
) -> Result<(), ModesError> {
    let dim = spec.dim();
    write!(out, "s,mean")?;
    for i in 0..dim {
        write!(out, ",linear_{i}")?;
    }
    for i in 0..dim {
        for j in i..dim {
            write!(out, ",quad_{i}{j}")?;
        }
    }
    write!(out, ",inner_weighted_sup,outer_sup")?;
    let header_ids = {
        let probe = check_membership(
            &ModeDecomposition {
                s: 1.0,
                mean: 0.0,
                linear: vec![0.0; dim],
                quad: SymmetricMatrix::zeros(dim),
                inner_remainder: Vec::new(),
                outer_remainder: Vec::new(),
                inner_weighted_sup: 0.0,
                outer_sup: 0.0,
            },
            spec,
        );
        probe.margins.iter().map(|(id, _)| *id).collect::<Vec<_>>()
    };
    for id in &header_ids {
        write!(out, ",margin_{id}")?;
    }
    writeln!(out, ",inside")?;

    for dec in series {
        let report = check_membership(dec, spec);
        write!(out, "{},{}", dec.s, dec.mean)?;
        for l in &dec.linear {
            write!(out, ",{l}")?;
        }
        for i in 0..dim {
            for j in i..dim {
                write!(out, ",{}", dec.quad.get(i, j))?;
            }
        }
        write!(out, ",{},{}", dec.inner_weighted_sup, dec.outer_sup)?;
        for (_, m) in &report.margins {
            write!(out, ",{m}")?;
        }
        writeln!(out, ",{}", report.inside)?;
    }
    Ok(())
}

/// Write an ODE-residual series as CSV.
pub fn write_residuals_csv(
    mut out: impl Write,
    res: &ResidualSeries,
) -> Result<(), ModesError> {
    write!(out, "s,residual_mean")?;
    for i in 0..res.linear.len() {
        write!(out, ",residual_linear_{i}")?;
    }
    for k in 0..res.quad.len() {
        write!(out, ",residual_quad_{k}")?;
    }
    writeln!(out)?;
    for row in 0..res.s.len() {
        write!(out, "{},{}", res.s[row], res.mean[row])?;
        for series in &res.linear {
            write!(out, ",{}", series[row])?;
        }
        for series in &res.quad {
            write!(out, ",{}", series[row])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{phi_field, MultiIndex, WeightedGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn grid_1d() -> Arc<WeightedGrid> {
        Arc::new(WeightedGrid::new_1d(40.0, 1001).unwrap())
    }

    fn spec_with(target: SymmetricMatrix) -> ShrinkingSetSpec {
        ShrinkingSetSpec::standard(target)
    }

    #[test]
    fn spec_validation() {
        let t = SymmetricMatrix::zeros(1);
        let c = CutoffSpec::default();
        assert!(ShrinkingSetSpec::new(0.5, 0.25, t.clone(), c.clone()).is_err());
        assert!(ShrinkingSetSpec::new(30.0, 0.0, t.clone(), c.clone()).is_err());
        assert!(ShrinkingSetSpec::new(30.0, 0.5, t.clone(), c.clone()).is_err());
        assert!(ShrinkingSetSpec::new(30.0, 0.49, t, c).is_ok());
    }

    #[test]
    fn pure_quadratic_is_recovered_exactly() {
        // v = ½a y² - a has mean zero and null coefficient a; at s = 16 the
        // cutoff plateau covers the whole Gaussian mass
        let grid = grid_1d();
        let a = 0.73;
        let v = FieldState::from_fn(grid.clone(), 16.0, |y| 0.5 * a * y[0] * y[0] - a).unwrap();
        let spec = spec_with(SymmetricMatrix::zeros(1));
        let dec = decompose(&v, &spec).unwrap();
        assert!(dec.mean.abs() < 1e-10);
        assert!(dec.linear[0].abs() < 1e-12);
        assert_relative_eq!(dec.quad.get(0, 0), a, max_relative = 1e-8);
        // remainder is pure truncation noise
        let norm: f64 = {
            let f = FieldState::new(grid.clone(), dec.inner_remainder.clone(), 16.0).unwrap();
            f.norm_rho()
        };
        assert!(norm < 1e-8, "remainder norm {norm}");
    }

    #[test]
    fn cubic_eigenfunction_lands_in_the_remainder() {
        let grid = grid_1d();
        let phi3 = phi_field(&grid, &MultiIndex::new(vec![3]).unwrap()).unwrap();
        let v = FieldState::new(grid.clone(), phi3, 16.0).unwrap();
        let spec = spec_with(SymmetricMatrix::zeros(1));
        let dec = decompose(&v, &spec).unwrap();
        assert!(dec.mean.abs() < 1e-9);
        assert!(dec.linear[0].abs() < 1e-9);
        assert!(dec.quad.max_abs() < 1e-9);
        // the remainder is χ·φ₃ itself; compare at the origin-adjacent nodes
        let mid = grid.len() / 2;
        let y = grid.axis(0).nodes()[mid + 10];
        let expected = y * y * y - 6.0 * y;
        assert_relative_eq!(dec.inner_remainder[mid + 10], expected, max_relative = 1e-8);
    }

    #[test]
    fn reconstruction_identity_holds_to_roundoff() {
        let grid = grid_1d();
        let v = FieldState::from_fn(grid.clone(), 12.0, |y| {
            (0.3 + 0.2 * y[0] + 0.05 * y[0] * y[0]) * (-y[0] * y[0] / 11.0).exp()
                + 0.01 * (y[0] * 0.7).sin()
        })
        .unwrap();
        let spec = spec_with(SymmetricMatrix::scalar(0.3));
        let dec = decompose(&v, &spec).unwrap();
        let trace = dec.quad.trace();
        let mut worst = 0.0f64;
        grid.for_each_node(|idx, y| {
            let chi_v = spec.cutoff.value(y[0].abs(), 12.0) * v.values()[idx];
            let rebuilt = dec.mean
                + dec.linear[0] * y[0]
                + dec.quad.quadratic_form_half(y)
                - trace
                + dec.inner_remainder[idx];
            worst = worst.max((chi_v - rebuilt).abs());
        });
        assert!(worst < 1e-13, "reconstruction defect {worst}");
        // outer part vanishes inside the cutoff plateau (|y| ≤ K√s)
        let mid = grid.len() / 2;
        assert_eq!(dec.outer_remainder[mid], 0.0);
    }

    #[test]
    fn zero_function_exits_when_the_target_decays_past_the_allowance() {
        // v ≡ 0 tracks 𝒜/s² only while A²/s^{2+η} ≥ ‖𝒜‖/s², i.e. while
        // s^η ≤ A²/‖𝒜‖
        let grid = Arc::new(WeightedGrid::new_1d(16.0, 161).unwrap());
        let spec = spec_with(SymmetricMatrix::scalar(0.3));
        // A²/‖𝒜‖ = 900/0.3 = 3000, so the crossover sits at s = 3000⁴
        let crossover = 3000f64.powi(4);
        for (s, expect_inside) in [(crossover * 0.9, true), (crossover * 1.1, false)] {
            let v = FieldState::constant(grid.clone(), 0.0, s).unwrap();
            let report = check_membership(&decompose(&v, &spec).unwrap(), &spec);
            assert_eq!(report.inside, expect_inside, "s = {s}");
            let (worst_id, _) = report.worst();
            assert_eq!(worst_id, ComponentId::Quad(0, 0));
        }
    }

    #[test]
    fn worst_breaks_ties_in_component_order() {
        let report = MembershipReport {
            s: 10.0,
            margins: vec![
                (ComponentId::Mean, 0.7),
                (ComponentId::Linear(0), 0.9),
                (ComponentId::Quad(0, 0), 0.9),
                (ComponentId::Inner, 0.2),
                (ComponentId::Outer, 0.1),
            ],
            inside: true,
        };
        assert_eq!(report.worst().0, ComponentId::Linear(0));
    }

    #[test]
    fn residuals_vanish_on_exact_ode_solutions() {
        // mean = c₀e^{s-30}, linear = c₁e^{(s-30)/2}, quad = (𝒜+c₂)/s²:
        // exact solutions of the three mode ODEs
        let target = SymmetricMatrix::scalar(0.3);
        let spec = spec_with(target);
        let (c0, c1, c2) = (0.37, 0.11, 0.05);
        let series: Vec<ModeDecomposition> = (0..21)
            .map(|k| {
                let s = 30.0 + 0.1 * k as f64;
                ModeDecomposition {
                    s,
                    mean: c0 * (s - 30.0).exp(),
                    linear: vec![c1 * (0.5 * (s - 30.0)).exp()],
                    quad: SymmetricMatrix::scalar((0.3 + c2) / (s * s)),
                    inner_remainder: Vec::new(),
                    outer_remainder: Vec::new(),
                    inner_weighted_sup: 0.0,
                    outer_sup: 0.0,
                }
            })
            .collect();
        let res = ode_residuals(&series, &spec).unwrap();
        assert_eq!(res.s.len(), 19);
        for (k, &s) in res.s.iter().enumerate() {
            let mean_here = c0 * (s - 30.0).exp();
            // centered difference of e^s carries a (Δs)²/6 relative bias
            assert!(
                res.mean[k].abs() < 2.5e-3 * mean_here,
                "mean residual {} vs scale {}",
                res.mean[k],
                mean_here
            );
            let lin_here = c1 * (0.5 * (s - 30.0)).exp();
            assert!(res.linear[0][k].abs() < 1e-3 * lin_here);
            // h = c₂/s² solves h' = -2h/s; what remains is the centered
            // difference's (Δs)² truncation, ~4(Δs)²c₂/s⁵ ≈ 8e-11 here
            assert!(res.quad[0][k].abs() < 1e-9);
        }
    }

    #[test]
    fn residuals_reject_ragged_series() {
        let spec = spec_with(SymmetricMatrix::zeros(1));
        let mk = |s: f64| ModeDecomposition {
            s,
            mean: 0.0,
            linear: vec![0.0],
            quad: SymmetricMatrix::zeros(1),
            inner_remainder: Vec::new(),
            outer_remainder: Vec::new(),
            inner_weighted_sup: 0.0,
            outer_sup: 0.0,
        };
        let err = ode_residuals(&[mk(1.0), mk(1.1), mk(1.35)], &spec).unwrap_err();
        assert!(matches!(err, ModesError::UnevenSeries { .. }));
        let err = ode_residuals(&[mk(1.0), mk(1.1)], &spec).unwrap_err();
        assert!(matches!(err, ModesError::TooFewSamples { .. }));
    }

    #[test]
    fn csv_emission_round_trips_a_value() {
        let grid = Arc::new(WeightedGrid::new_1d(16.0, 161).unwrap());
        let spec = spec_with(SymmetricMatrix::scalar(0.3));
        let series: Vec<ModeDecomposition> = (0..3)
            .map(|k| {
                let s = 10.0 + 0.1 * k as f64;
                let v = FieldState::from_fn(grid.clone(), s, |y| {
                    0.01 * (-y[0] * y[0] / 6.0).exp()
                })
                .unwrap();
                decompose(&v, &spec).unwrap()
            })
            .collect();
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &series, &spec).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert_eq!(
            header,
            "s,mean,linear_0,quad_00,inner_weighted_sup,outer_sup,\
             margin_mean,margin_linear_0,margin_quad_00,margin_inner,margin_outer,inside"
        );
        assert_eq!(lines.count(), 3);
        // parse back the mean of the first row
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        let parsed: f64 = row[1].parse().unwrap();
        assert_relative_eq!(parsed, series[0].mean, max_relative = 1e-15);

        let res = ode_residuals(&series, &spec).unwrap();
        let mut buf = Vec::new();
        write_residuals_csv(&mut buf, &res).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,residual_mean,residual_linear_0,residual_quad_0"));
        assert_eq!(text.lines().count(), 2); // header + one interior point
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn margins_scale_linearly_with_the_field(scale in 0.1f64..10.0) {
            let grid = Arc::new(WeightedGrid::new_1d(16.0, 161).unwrap());
            let spec = spec_with(SymmetricMatrix::zeros(1));
            let base = FieldState::from_fn(grid.clone(), 9.0, |y| {
                (0.2 + 0.1 * y[0]) * (-y[0] * y[0] / 7.0).exp()
            })
            .unwrap();
            let scaled = FieldState::from_fn(grid.clone(), 9.0, |y| {
                scale * (0.2 + 0.1 * y[0]) * (-y[0] * y[0] / 7.0).exp()
            })
            .unwrap();
            let r1 = check_membership(&decompose(&base, &spec).unwrap(), &spec);
            let r2 = check_membership(&decompose(&scaled, &spec).unwrap(), &spec);
            for ((_, a), (_, b)) in r1.margins.iter().zip(&r2.margins) {
                prop_assert!((b - a * scale).abs() <= 1e-10 * (1.0 + a.abs() * scale));
            }
        }
    }
}
