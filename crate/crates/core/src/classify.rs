//! Classification of the difference of two trajectories.
//!
//! Two solutions of the rescaled flow that converge to the same profile can
//! differ, to leading order, in exactly one of two ways: the difference is
//! carried by the quadratic null modes and decays like
//! `(½yᵀBy − tr B)/s²` for some symmetric matrix `B`, or it collapses
//! exponentially (rate `≤ −1/2`, one of the damped eigenvalues).  This
//! module measures which regime a difference trajectory is in:
//!
//! * [`mode_norms`] tracks `ℓ_k(s) = ‖P_k(χg)‖_ρ` for `k ≤ 5` together with
//!   the full norm `I(s) = ‖g‖_ρ` and the projected quadratic matrix
//!   `g₂(s)`;
//! * [`fit_correction_matrix`] extrapolates `s²·g₂(s)` to its limit with a
//!   linear regression against `s^{-exponent}`, faulting when the window
//!   does not look convergent;
//! * [`classify`] applies the dichotomy test and returns a
//!   [`Classification`], with `Undetermined` as the safe fallback.
//!
//! The fitted matrix for a dilation pair `(D_λ ŵ, ŵ)` has the exact limit
//! `(κ log λ / p)·I`, which makes dilation the natural end-to-end
//! calibration of the whole pipeline.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::profile::CutoffSpec;
use crate::solver::{SolverError, Trajectory};
use crate::spectral::{project_mode, project_quadratic, SpectralError, SymmetricMatrix};

/// Highest tracked eigenmode degree; `ℓ₄`, `ℓ₅` act as tail sentinels.
pub const MODE_COUNT: usize = 6;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("trajectories are not comparable: {0}")]
    Mismatch(String),
    #[error("bad fit window: {0}")]
    BadWindow(String),
    #[error("correction fit did not converge: relative spread {spread:.3} over the window")]
    NonConvergent { spread: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-stride eigenmode norms of a difference trajectory.
#[derive(Debug, Clone)]
pub struct ModeNormSeries {
    /// Stride times.
    pub s: Vec<f64>,
    /// `norms[m][k]` = `ℓ_k(s_m)` for `k = 0..MODE_COUNT`, computed from the
    /// cut field `χg`.
    pub norms: Vec<[f64; MODE_COUNT]>,
    /// `I(s_m) = ‖g(s_m)‖_ρ` (no cutoff).
    pub total: Vec<f64>,
    /// Projected quadratic matrix `g₂(s_m)` of the cut field.
    pub quad: Vec<SymmetricMatrix>,
}

impl ModeNormSeries {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Indices of the strides inside `[window.0, window.1]`.
    fn window_indices(&self, window: (f64, f64)) -> Vec<usize> {
        self.s
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= window.0 - 1e-9 && s <= window.1 + 1e-9)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Outcome of the dichotomy test.
#[derive(Debug, Clone)]
pub enum Classification {
    /// The difference never rose above the noise floor.
    ExactMatch { peak: f64 },
    /// Dominant quadratic null mode: `g ≈ (½yᵀBy − tr B)/s²`.
    QuadraticNull {
        correction: SymmetricMatrix,
        /// Relative spread of `s²g₂` over the window after the fit.
        spread: f64,
        /// Window-averaged `ℓ₂/I`.
        dominance: f64,
    },
    /// `I(s)` decays exponentially.
    ExponentialCollapse {
        /// Fitted slope of `log I` (negative).
        rate: f64,
        /// Max absolute deviation of `log I` from the linear fit.
        residual: f64,
    },
    /// Neither test fired; the reason says which thresholds failed.
    Undetermined { reason: String },
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ExactMatch { peak } => {
                write!(f, "exact match (peak difference norm {peak:.3e})")
            }
            Self::QuadraticNull {
                correction,
                spread,
                dominance,
            } => {
                write!(
                    f,
                    "quadratic null mode: B = {correction:?}, spread {spread:.3}, dominance {dominance:.3}"
                )
            }
            Self::ExponentialCollapse { rate, residual } => {
                write!(
                    f,
                    "exponential collapse: rate {rate:.4} (fit residual {residual:.2e})"
                )
            }
            Self::Undetermined { reason } => write!(f, "undetermined: {reason}"),
        }
    }
}

/// Thresholds for [`classify`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOptions {
    /// Exponent of the subleading correction in the `s²g₂` regression.  The
    /// observed correction for reference-style trajectories is `O(1/s)`, so
    /// the default is 1.0.
    pub fit_exponent: f64,
    /// Minimum window-average of `ℓ₂/I` for the null-mode case.
    pub dominance_threshold: f64,
    /// Maximum relative spread of `s²g₂` for the fit to count as convergent.
    pub spread_limit: f64,
    /// `log I` slope at or below this classifies as collapse.
    pub collapse_slope: f64,
    /// `I` below this never counts as signal.
    pub noise_floor: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            fit_exponent: 1.0,
            dominance_threshold: 0.75,
            spread_limit: 0.5,
            collapse_slope: -0.4,
            noise_floor: 1e-13,
        }
    }
}

/// Pointwise difference of two trajectories over their common time window.
///
/// The trajectories must share the grid layout, the stride, and the model;
/// their lattices must agree where they overlap.
pub fn trajectory_difference(a: &Trajectory, b: &Trajectory) -> Result<Trajectory, ClassifyError> {
    if a.params() != b.params() {
        return Err(ClassifyError::Mismatch("different model parameters".into()));
    }
    if !a.grid().layout_eq(b.grid()) {
        return Err(ClassifyError::Mismatch("different grids".into()));
    }
    if (a.stride() - b.stride()).abs() > 1e-12 {
        return Err(ClassifyError::Mismatch(format!(
            "strides {} and {} differ",
            a.stride(),
            b.stride()
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(ClassifyError::Mismatch("empty trajectory".into()));
    }
    let stride = a.stride();
    let lo = a.first_s().max(b.first_s());
    let hi = a.last_s().min(b.last_s());
    if hi < lo - 1e-9 {
        return Err(ClassifyError::Mismatch(format!(
            "no overlap: [{}, {}] vs [{}, {}]",
            a.first_s(),
            a.last_s(),
            b.first_s(),
            b.last_s()
        )));
    }
    let misalign = (a.first_s() - b.first_s()) / stride;
    if (misalign - misalign.round()).abs() > 1e-6 {
        return Err(ClassifyError::Mismatch(
            "stride lattices are shifted against each other".into(),
        ));
    }
    let ia = ((lo - a.first_s()) / stride).round() as usize;
    let ib = ((lo - b.first_s()) / stride).round() as usize;
    let count = ((hi - lo) / stride + 1e-9).floor() as usize + 1;

    let mut out = Trajectory::new_empty(
        *a.params(),
        a.grid().clone(),
        stride,
        format!("difference of [{}] and [{}]", a.origin(), b.origin()),
    );
    for k in 0..count {
        let fa = a.field(ia + k)?;
        let fb = b.field(ib + k)?;
        let values: Vec<f64> = fa
            .values()
            .iter()
            .zip(fb.values())
            .map(|(x, y)| x - y)
            .collect();
        out.push_frame(lo + k as f64 * stride, values);
    }
    Ok(out)
}

/// Track the eigenmode norms of a difference trajectory, stride by stride.
pub fn mode_norms(g: &Trajectory, cutoff: &CutoffSpec) -> Result<ModeNormSeries, ClassifyError> {
    if g.is_empty() {
        return Err(ClassifyError::Mismatch("empty trajectory".into()));
    }
    let grid = g.grid();
    let count = g.frames().len();
    let mut series = ModeNormSeries {
        s: Vec::with_capacity(count),
        norms: Vec::with_capacity(count),
        total: Vec::with_capacity(count),
        quad: Vec::with_capacity(count),
    };
    let mut cut = vec![0.0; grid.len()];
    for index in 0..count {
        let field = g.field(index)?;
        let s = field.s();
        let values = field.values();
        grid.for_each_node(|i, y| {
            let r = y.iter().map(|c| c * c).sum::<f64>().sqrt();
            cut[i] = values[i] * cutoff.value(r, s);
        });
        let mut norms = [0.0; MODE_COUNT];
        for (k, slot) in norms.iter_mut().enumerate() {
            *slot = project_mode(grid, &cut, k as u32)?.norm_rho();
        }
        series.s.push(s);
        series.norms.push(norms);
        series.total.push(field.norm_rho());
        series.quad.push(project_quadratic(grid, &cut)?);
    }
    Ok(series)
}

/// Extrapolate `s² g₂(s) → B` over the window by entrywise linear regression
/// against `s^{-exponent}`.  Returns the fitted matrix and the relative
/// spread of the data around the fit (the convergence diagnostic).
pub fn fit_correction_matrix(
    series: &ModeNormSeries,
    window: (f64, f64),
    exponent: f64,
) -> Result<(SymmetricMatrix, f64), ClassifyError> {
    let idx = require_window(series, window)?;
    let dim = series.quad[0].dim();
    let xs: Vec<f64> = idx.iter().map(|&m| series.s[m].powf(-exponent)).collect();
    let mut fitted = SymmetricMatrix::zeros(dim);
    let mut data_range = 0.0f64; // max over entries of (max q − min q)
    let mut scale = 0.0f64;
    for i in 0..dim {
        for j in i..dim {
            let qs: Vec<f64> = idx
                .iter()
                .map(|&m| series.s[m] * series.s[m] * series.quad[m].get(i, j))
                .collect();
            let b = regress_intercept(&xs, &qs);
            fitted.set(i, j, b);
            let (lo, hi) = qs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &q| {
                    (l.min(q), h.max(q))
                });
            data_range = data_range.max(hi - lo);
            scale = scale.max(b.abs());
        }
    }
    let spread = if scale > 0.0 {
        data_range / scale
    } else if data_range > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    if spread > 0.5 {
        return Err(ClassifyError::NonConvergent { spread });
    }
    Ok((fitted, spread))
}

/// Least-squares intercept of `q = b + c·x`.
fn regress_intercept(xs: &[f64], qs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let qbar = qs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxq = 0.0;
    for (&x, &q) in xs.iter().zip(qs) {
        sxx += (x - xbar) * (x - xbar);
        sxq += (x - xbar) * (q - qbar);
    }
    if sxx == 0.0 {
        return qbar;
    }
    let slope = sxq / sxx;
    qbar - slope * xbar
}

fn require_window(series: &ModeNormSeries, window: (f64, f64)) -> Result<Vec<usize>, ClassifyError> {
    if !(window.0 < window.1) {
        return Err(ClassifyError::BadWindow(format!(
            "window ({}, {}) is not increasing",
            window.0, window.1
        )));
    }
    let idx = series.window_indices(window);
    if idx.len() < 10 {
        return Err(ClassifyError::BadWindow(format!(
            "window [{}, {}] covers {} strides; need at least 10",
            window.0,
            window.1,
            idx.len()
        )));
    }
    Ok(idx)
}

/// Apply the dichotomy test to a difference trajectory.
pub fn classify(
    g: &Trajectory,
    cutoff: &CutoffSpec,
    window: (f64, f64),
    options: &ClassifyOptions,
) -> Result<Classification, ClassifyError> {
    let series = mode_norms(g, cutoff)?;
    classify_series(&series, window, options)
}

/// Dichotomy test on precomputed mode norms.
pub fn classify_series(
    series: &ModeNormSeries,
    window: (f64, f64),
    options: &ClassifyOptions,
) -> Result<Classification, ClassifyError> {
    let idx = require_window(series, window)?;

    let peak = idx.iter().map(|&m| series.total[m]).fold(0.0f64, f64::max);
    if peak < options.noise_floor {
        return Ok(Classification::ExactMatch { peak });
    }

    // case 1: the quadratic modes dominate and s²g₂ converges
    let dominance = idx
        .iter()
        .map(|&m| {
            let total = series.total[m];
            if total > options.noise_floor {
                series.norms[m][2] / total
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / idx.len() as f64;
    let fit = if dominance >= options.dominance_threshold {
        match fit_correction_matrix(series, window, options.fit_exponent) {
            Ok((correction, spread)) if spread <= options.spread_limit => {
                return Ok(Classification::QuadraticNull {
                    correction,
                    spread,
                    dominance,
                });
            }
            Ok((_, spread)) => Some(spread),
            Err(ClassifyError::NonConvergent { spread }) => Some(spread),
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    // case 2: exponential collapse of the total norm
    let usable: Vec<usize> = idx
        .iter()
        .copied()
        .filter(|&m| series.total[m] > options.noise_floor)
        .collect();
    if usable.len() >= 10 {
        let ss: Vec<f64> = usable.iter().map(|&m| series.s[m]).collect();
        let logs: Vec<f64> = usable.iter().map(|&m| series.total[m].ln()).collect();
        let (rate, residual) = regress_slope(&ss, &logs);
        if rate <= options.collapse_slope {
            return Ok(Classification::ExponentialCollapse { rate, residual });
        }
        let mut reason = format!(
            "dominance {:.3} (threshold {:.3}), log-norm slope {:.3} (threshold {:.3})",
            dominance, options.dominance_threshold, rate, options.collapse_slope
        );
        if let Some(spread) = fit {
            reason.push_str(&format!(", s²g₂ spread {spread:.3}"));
        }
        return Ok(Classification::Undetermined { reason });
    }
    Ok(Classification::Undetermined {
        reason: format!(
            "only {} strides above the noise floor in the window",
            usable.len()
        ),
    })
}

/// Least-squares slope of `q` against `x`, plus the max absolute residual.
fn regress_slope(xs: &[f64], qs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let qbar = qs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxq = 0.0;
    for (&x, &q) in xs.iter().zip(qs) {
        sxx += (x - xbar) * (x - xbar);
        sxq += (x - xbar) * (q - qbar);
    }
    let slope = if sxx == 0.0 { 0.0 } else { sxq / sxx };
    let intercept = qbar - slope * xbar;
    let residual = xs
        .iter()
        .zip(qs)
        .map(|(&x, &q)| (q - slope * x - intercept).abs())
        .fold(0.0f64, f64::max);
    (slope, residual)
}

/// Dump a mode-norm series as CSV.
pub fn write_mode_norms_csv(
    mut out: impl Write,
    series: &ModeNormSeries,
) -> Result<(), ClassifyError> {
    write!(out, "s")?;
    for k in 0..MODE_COUNT {
        write!(out, ",l{k}")?;
    }
    let dim = series.quad.first().map_or(0, |q| q.dim());
    for i in 0..dim {
        for j in i..dim {
            write!(out, ",quad_{i}{j}")?;
        }
    }
    writeln!(out, ",total")?;
    for m in 0..series.len() {
        write!(out, "{}", series.s[m])?;
        for k in 0..MODE_COUNT {
            write!(out, ",{}", series.norms[m][k])?;
        }
        for i in 0..dim {
            for j in i..dim {
                write!(out, ",{}", series.quad[m].get(i, j))?;
            }
        }
        writeln!(out, ",{}", series.total[m])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::ModelParams;
    use crate::spectral::WeightedGrid;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn synthetic_trajectory(
        lo: f64,
        hi: f64,
        stride: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Trajectory {
        let params = ModelParams::new(3.0, 1).unwrap();
        let grid = Arc::new(WeightedGrid::new_1d(40.0, 801).unwrap());
        let mut t = Trajectory::new_empty(params, grid.clone(), stride, "synthetic".into());
        let count = ((hi - lo) / stride).round() as usize;
        for k in 0..=count {
            let s = lo + k as f64 * stride;
            let mut values = vec![0.0; grid.len()];
            grid.for_each_node(|i, y| values[i] = f(s, y[0]));
            t.push_frame(s, values);
        }
        t
    }

    fn cutoff() -> CutoffSpec {
        CutoffSpec::default()
    }

    #[test]
    fn mode_norms_isolate_a_pure_eigenmode() {
        // g = e^{-s/2} φ₃;  ℓ₃ = e^{-s/2}·√48, everything else at round-off
        let g = synthetic_trajectory(20.0, 22.0, 0.1, |s, y| {
            (-s / 2.0).exp() * (y * y * y - 6.0 * y)
        });
        let series = mode_norms(&g, &cutoff()).unwrap();
        let phi3_norm = 48.0f64.sqrt();
        for m in 0..series.len() {
            let expected = (-series.s[m] / 2.0).exp() * phi3_norm;
            assert_relative_eq!(series.norms[m][3], expected, max_relative = 1e-8);
            assert_relative_eq!(series.total[m], expected, max_relative = 1e-6);
            for k in [0, 1, 2, 4, 5] {
                assert!(
                    series.norms[m][k] < 1e-10 * expected.max(1e-30),
                    "ℓ_{k} = {} leaked at s = {}",
                    series.norms[m][k],
                    series.s[m]
                );
            }
        }
    }

    #[test]
    fn mode_norms_of_zero_are_zero() {
        let g = synthetic_trajectory(20.0, 21.0, 0.1, |_, _| 0.0);
        let series = mode_norms(&g, &cutoff()).unwrap();
        for m in 0..series.len() {
            assert_eq!(series.total[m], 0.0);
            assert!(series.norms[m].iter().all(|&l| l == 0.0));
        }
    }

    #[test]
    fn identical_trajectories_classify_as_exact_match() {
        let a = synthetic_trajectory(20.0, 25.0, 0.1, |s, y| (0.3 / (s * s)) * (y * y / 2.0 - 1.0));
        let g = trajectory_difference(&a, &a).unwrap();
        let c = classify(&g, &cutoff(), (20.0, 25.0), &ClassifyOptions::default()).unwrap();
        assert!(matches!(c, Classification::ExactMatch { .. }), "{c}");
    }

    #[test]
    fn exact_null_mode_data_recovers_the_matrix() {
        let g = synthetic_trajectory(20.0, 25.0, 0.1, |s, y| (0.31 / (s * s)) * (y * y / 2.0 - 1.0));
        let c = classify(&g, &cutoff(), (20.0, 25.0), &ClassifyOptions::default()).unwrap();
        match c {
            Classification::QuadraticNull {
                correction,
                spread,
                dominance,
            } => {
                assert_relative_eq!(correction.get(0, 0), 0.31, max_relative = 1e-8);
                assert!(spread < 1e-6, "spread {spread}");
                assert!(dominance > 0.99, "dominance {dominance}");
            }
            other => panic!("expected the null-mode case, got {other}"),
        }
    }

    #[test]
    fn subleading_correction_is_removed_by_the_matching_exponent() {
        // s²g₂ = 0.31 + 0.2·s^{-1/4}: regression with the matching exponent
        // recovers the limit to round-off
        let g = synthetic_trajectory(20.0, 30.0, 0.1, |s, y| {
            ((0.31 + 0.2 * s.powf(-0.25)) / (s * s)) * (y * y / 2.0 - 1.0)
        });
        let series = mode_norms(&g, &cutoff()).unwrap();
        let (fitted, spread) = fit_correction_matrix(&series, (20.0, 30.0), 0.25).unwrap();
        assert_relative_eq!(fitted.get(0, 0), 0.31, max_relative = 1e-6);
        assert!(spread < 0.05, "spread {spread}");
        // the default exponent misattributes the tail and lands visibly off
        let (biased, _) = fit_correction_matrix(&series, (20.0, 30.0), 1.0).unwrap();
        assert!(
            (biased.get(0, 0) - 0.31).abs() > 1e-3,
            "bias test lost its teeth: {}",
            biased.get(0, 0)
        );
    }

    #[test]
    fn exponential_decay_classifies_as_collapse() {
        let g = synthetic_trajectory(20.0, 26.0, 0.1, |s, y| {
            (-0.45 * s).exp() * (1.0 + 0.1 * y)
        });
        let c = classify(&g, &cutoff(), (20.0, 26.0), &ClassifyOptions::default()).unwrap();
        match c {
            Classification::ExponentialCollapse { rate, residual } => {
                assert_relative_eq!(rate, -0.45, max_relative = 0.02);
                assert!(residual < 1e-6, "residual {residual}");
            }
            other => panic!("expected collapse, got {other}"),
        }
    }

    #[test]
    fn oscillating_null_mode_is_undetermined() {
        // quadratic mode dominates but s²g₂ swings by ±50% and the total
        // norm decays only algebraically
        let g = synthetic_trajectory(20.0, 30.0, 0.1, |s, y| {
            ((0.3 + 0.15 * (3.0 * s).sin()) / (s * s)) * (y * y / 2.0 - 1.0)
        });
        let c = classify(&g, &cutoff(), (20.0, 30.0), &ClassifyOptions::default()).unwrap();
        assert!(matches!(c, Classification::Undetermined { .. }), "{c}");
    }

    #[test]
    fn null_mode_reconstruction_has_zero_mean() {
        // ∫(½y²−1)ρ = 0: the fitted form is automatically mean-free
        let grid = Arc::new(WeightedGrid::new_1d(40.0, 801).unwrap());
        let g = synthetic_trajectory(20.0, 25.0, 0.1, |s, y| (0.31 / (s * s)) * (y * y / 2.0 - 1.0));
        let series = mode_norms(&g, &cutoff()).unwrap();
        let (fitted, _) = fit_correction_matrix(&series, (20.0, 25.0), 1.0).unwrap();
        let mut reconstruction = vec![0.0; grid.len()];
        grid.for_each_node(|i, y| {
            reconstruction[i] = fitted.quadratic_form_half(y) - fitted.trace();
        });
        let ones = vec![1.0; grid.len()];
        let mean = crate::spectral::inner_rho(&grid, &reconstruction, &ones);
        assert!(mean.abs() < 1e-10, "mean {mean}");
    }

    #[test]
    fn difference_alignment_and_mismatches() {
        let a = synthetic_trajectory(20.0, 24.0, 0.1, |s, _| s);
        let b = synthetic_trajectory(22.0, 26.0, 0.1, |s, _| 2.0 * s);
        let g = trajectory_difference(&a, &b).unwrap();
        assert_relative_eq!(g.first_s(), 22.0, epsilon = 1e-12);
        assert_relative_eq!(g.last_s(), 24.0, epsilon = 1e-12);
        let probe = g.field(0).unwrap();
        assert_relative_eq!(probe.values()[3], -22.0, epsilon = 1e-9);

        let c = synthetic_trajectory(30.0, 31.0, 0.1, |s, _| s);
        assert!(matches!(
            trajectory_difference(&a, &c),
            Err(ClassifyError::Mismatch(_))
        ));
        let mut d = synthetic_trajectory(20.0, 24.0, 0.2, |s, _| s);
        assert!(matches!(
            trajectory_difference(&a, &d),
            Err(ClassifyError::Mismatch(_))
        ));
        d = synthetic_trajectory(20.05, 24.05, 0.1, |s, _| s);
        assert!(matches!(
            trajectory_difference(&a, &d),
            Err(ClassifyError::Mismatch(_))
        ));
    }

    #[test]
    fn short_windows_are_rejected() {
        let g = synthetic_trajectory(20.0, 25.0, 0.1, |s, y| (0.3 / (s * s)) * (y * y / 2.0 - 1.0));
        let err = classify(&g, &cutoff(), (20.0, 20.5), &ClassifyOptions::default()).unwrap_err();
        assert!(matches!(err, ClassifyError::BadWindow(_)));
    }

    #[test]
    fn csv_round_trip_keeps_every_stride() {
        let g = synthetic_trajectory(20.0, 22.0, 0.1, |s, y| (0.3 / (s * s)) * (y * y / 2.0 - 1.0));
        let series = mode_norms(&g, &cutoff()).unwrap();
        let mut buf = Vec::new();
        write_mode_norms_csv(&mut buf, &series).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "s,l0,l1,l2,l3,l4,l5,quad_00,total");
        assert_eq!(lines.count(), series.len());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        // classify(c·g) keeps the variant and scales the fitted matrix
        #[test]
        fn scale_equivariance(c in 0.1f64..20.0) {
            let base = synthetic_trajectory(20.0, 25.0, 0.1, |s, y| {
                (0.31 / (s * s)) * (y * y / 2.0 - 1.0)
            });
            let scaled = synthetic_trajectory(20.0, 25.0, 0.1, |s, y| {
                (c * 0.31 / (s * s)) * (y * y / 2.0 - 1.0)
            });
            let opts = ClassifyOptions::default();
            let cb = classify(&base, &cutoff(), (20.0, 25.0), &opts).unwrap();
            let cs = classify(&scaled, &cutoff(), (20.0, 25.0), &opts).unwrap();
            match (cb, cs) {
                (
                    Classification::QuadraticNull { correction: b, .. },
                    Classification::QuadraticNull { correction: s, .. },
                ) => {
                    prop_assert!((s.get(0, 0) - c * b.get(0, 0)).abs() < 1e-9 * c.max(1.0));
                }
                (other_b, other_s) => {
                    return Err(TestCaseError::fail(format!(
                        "variants diverged: {other_b} vs {other_s}"
                    )));
                }
            }
        }

        // I² dominates the sum of the tracked mode norms (Bessel)
        #[test]
        fn total_norm_dominates_mode_sum(a0 in -1.0f64..1.0, a2 in -1.0f64..1.0, a3 in -1.0f64..1.0) {
            let g = synthetic_trajectory(20.0, 20.5, 0.1, move |s, y| {
                let decay = 1.0 / (s * s);
                decay * (a0 + a2 * (y * y - 2.0) + a3 * (y * y * y - 6.0 * y))
            });
            let series = mode_norms(&g, &cutoff()).unwrap();
            for m in 0..series.len() {
                let sum_sq: f64 = series.norms[m].iter().map(|l| l * l).sum();
                prop_assert!(series.total[m] * series.total[m] >= sum_sq - 1e-12);
            }
        }
    }
}
