//! Transformations between physical variables `(x, t)` and similarity
//! variables `(y, s)`, plus the diagnostics that live naturally on the
//! physical side.
//!
//! With blow-up time `T` and blow-up point `a`, the two descriptions are
//! linked by
//!
//! ```text
//! u(x, t) = (T − t)^{-1/(p-1)} · w(y, s),   y = (x − a)/√(T − t),
//! s = −log(T − t)
//! ```
//!
//! so a similarity frame at time `s` covers the shrinking physical ball
//! `|x − a| ≤ L e^{-s/2}` (`L` the grid extent).  This module implements
//! that map in both directions (exact on shared nodes, cubic interpolation
//! otherwise), the limiting final profile
//! `u*(x) = [8p|log|x|| / ((p−1)²|x|²)]^{1/(p-1)}`, the intermediate-region
//! time `t̃(|x|)` solving `|x| = K√(|log(T−t̃)|(T−t̃))`, and a report
//! comparing the physical difference of two trajectories against the
//! expected bound shapes
//!
//! ```text
//! inner:        (T−t)^{1/2 − 1/(p-1)} / |log(T−t)|^{3/2}
//! intermediate: |x|^{1 − 2/(p-1)} / |log|x||^{2 − 1/(p-1)}
//! ```
//!
//! combined with `min` for `1 < p < 3` and `max` for `p ≥ 3`.  The
//! comparison uses only the region covered by the similarity grid; no
//! physical-space integration happens here.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{trajectory_difference, ClassifyError};
use crate::field::{FieldError, FieldState};
use crate::profile::ModelParams;
use crate::solver::{SolverError, Trajectory};
use crate::spectral::WeightedGrid;

#[derive(Debug, Error)]
pub enum PhysicalError {
    #[error("invalid blow-up frame: {0}")]
    BadFrame(String),
    #[error("time {t} is not before the blow-up time {blowup}")]
    TimeOutOfRange { t: f64, blowup: f64 },
    #[error("argument out of range: {0}")]
    Domain(String),
    #[error("trajectories do not cover the requested window: {0}")]
    Coverage(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Blow-up time and point fixing the similarity transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupFrame {
    blowup_time: f64,
    point: Vec<f64>,
}

impl BlowupFrame {
    pub fn new(blowup_time: f64, point: Vec<f64>) -> Result<Self, PhysicalError> {
        if !(blowup_time > 0.0) || !blowup_time.is_finite() {
            return Err(PhysicalError::BadFrame(format!(
                "blow-up time must be positive and finite, got {blowup_time}"
            )));
        }
        if point.is_empty() || point.iter().any(|c| !c.is_finite()) {
            return Err(PhysicalError::BadFrame(format!(
                "blow-up point {point:?} must be finite and non-empty"
            )));
        }
        Ok(Self { blowup_time, point })
    }

    /// Frame blowing up at the origin.
    pub fn at_origin(blowup_time: f64, dim: usize) -> Result<Self, PhysicalError> {
        Self::new(blowup_time, vec![0.0; dim])
    }

    pub fn blowup_time(&self) -> f64 {
        self.blowup_time
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// `s = −log(T − t)`; requires `t < T`.
    pub fn similarity_time(&self, t: f64) -> Result<f64, PhysicalError> {
        if !(t < self.blowup_time) {
            return Err(PhysicalError::TimeOutOfRange {
                t,
                blowup: self.blowup_time,
            });
        }
        Ok(-(self.blowup_time - t).ln())
    }

    /// `t = T − e^{-s}`.
    pub fn physical_time(&self, s: f64) -> f64 {
        self.blowup_time - (-s).exp()
    }
}

/// Values of `u` on a rectangular `x`-lattice at one physical time.
///
/// Time is stored as the distance to blow-up `τ = T − t` rather than `t`
/// itself: near the singularity `t` and `T` agree to many digits, so `t`
/// alone cannot resolve `s = −log(T − t)`, while `τ` carries full relative
/// precision all the way in.
#[derive(Debug, Clone)]
pub struct PhysicalField {
    frame: BlowupFrame,
    time_to_blowup: f64,
    /// `x` coordinates per axis; uniform within each axis.
    axes: Vec<Vec<f64>>,
    /// Row-major over the axes, matching [`WeightedGrid`] layout.
    values: Vec<f64>,
}

impl PhysicalField {
    pub fn frame(&self) -> &BlowupFrame {
        &self.frame
    }

    /// `T − t`, the field's distance to the blow-up time.
    pub fn time_to_blowup(&self) -> f64 {
        self.time_to_blowup
    }

    /// The physical time `t = T − τ`.  Loses relative precision once `τ`
    /// drops below round-off of `T`; prefer [`Self::time_to_blowup`] in
    /// computations.
    pub fn t(&self) -> f64 {
        self.frame.blowup_time - self.time_to_blowup
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Cubic (Catmull–Rom) interpolation at a physical point, clamped to the
    /// lattice edges.
    pub fn sample(&self, x: &[f64]) -> Result<f64, PhysicalError> {
        if x.len() != self.dim() {
            return Err(PhysicalError::Domain(format!(
                "point has {} coordinates, field has {} axes",
                x.len(),
                self.dim()
            )));
        }
        match self.dim() {
            1 => Ok(interp_axis(&self.axes[0], &self.values, 1, 0, x[0])),
            2 => {
                let n1 = self.axes[1].len();
                // interpolate along axis 1 for the four bracketing rows of
                // axis 0, then combine along axis 0
                let (k0, t0) = bracket(&self.axes[0], x[0]);
                let n0 = self.axes[0].len();
                let mut rows = [0.0; 4];
                for (slot, offset) in (-1i64..=2).enumerate() {
                    let i = (k0 as i64 + offset).clamp(0, n0 as i64 - 1) as usize;
                    rows[slot] = interp_axis(&self.axes[1], &self.values, 1, i * n1, x[1]);
                }
                Ok(catmull_rom(rows, t0))
            }
            d => Err(PhysicalError::Domain(format!(
                "sampling supports 1 or 2 dimensions, got {d}"
            ))),
        }
    }
}

/// Uniform Catmull–Rom on values `a, b, c, d` at parameter `t ∈ [0, 1]`
/// between `b` and `c`.
fn catmull_rom(v: [f64; 4], t: f64) -> f64 {
    let [a, b, c, d] = v;
    0.5 * (2.0 * b
        + t * ((c - a)
            + t * ((2.0 * a - 5.0 * b + 4.0 * c - d) + t * (3.0 * (b - c) + d - a))))
}

/// Bracket `x` in a uniform ascending axis: returns `(k, t)` with the query
/// between nodes `k` and `k+1` at local parameter `t`, clamped to the edges.
fn bracket(axis: &[f64], x: f64) -> (usize, f64) {
    let n = axis.len();
    let h = if n > 1 { axis[1] - axis[0] } else { 1.0 };
    let u = ((x - axis[0]) / h).clamp(0.0, (n - 1) as f64);
    let k = (u.floor() as usize).min(n.saturating_sub(2));
    (k, u - k as f64)
}

/// Interpolate along one axis of a strided row-major array.
fn interp_axis(axis: &[f64], values: &[f64], stride: usize, base: usize, x: f64) -> f64 {
    let n = axis.len();
    let (k, t) = bracket(axis, x);
    let at = |i: i64| {
        let j = i.clamp(0, n as i64 - 1) as usize;
        values[base + j * stride]
    };
    let k = k as i64;
    catmull_rom([at(k - 1), at(k), at(k + 1), at(k + 2)], t)
}

/// Map a similarity frame to physical variables.  The physical lattice is
/// the similarity grid scaled by `√(T−t)` and shifted to the blow-up point,
/// so no interpolation is involved.
pub fn to_physical(
    w: &FieldState,
    params: &ModelParams,
    frame: &BlowupFrame,
) -> Result<PhysicalField, PhysicalError> {
    let grid = w.grid();
    if frame.dim() != grid.dim() {
        return Err(PhysicalError::BadFrame(format!(
            "frame is {}-dimensional, field is {}-dimensional",
            frame.dim(),
            grid.dim()
        )));
    }
    let s = w.s();
    if !s.is_finite() {
        return Err(PhysicalError::Domain(format!("similarity time {s}")));
    }
    let sqrt_tmt = (-s / 2.0).exp(); // √(T−t) = e^{-s/2}
    let factor = (s / (params.p() - 1.0)).exp(); // (T−t)^{-1/(p-1)}
    let axes = (0..grid.dim())
        .map(|a| {
            grid.axis(a)
                .nodes()
                .iter()
                .map(|&y| frame.point()[a] + y * sqrt_tmt)
                .collect()
        })
        .collect();
    let values = w.values().iter().map(|&v| factor * v).collect();
    Ok(PhysicalField {
        frame: frame.clone(),
        time_to_blowup: (-s).exp(),
        axes,
        values,
    })
}

/// Map a physical field back to similarity variables on the given grid.
/// Node positions that coincide with the physical lattice are exact; others
/// are filled by cubic interpolation (edge-clamped).
pub fn to_similarity(
    u: &PhysicalField,
    params: &ModelParams,
    grid: &Arc<WeightedGrid>,
) -> Result<FieldState, PhysicalError> {
    if u.dim() != grid.dim() {
        return Err(PhysicalError::Domain(format!(
            "field is {}-dimensional, grid is {}-dimensional",
            u.dim(),
            grid.dim()
        )));
    }
    let tau = u.time_to_blowup;
    if !(tau > 0.0) {
        return Err(PhysicalError::TimeOutOfRange {
            t: u.t(),
            blowup: u.frame.blowup_time(),
        });
    }
    let s = -tau.ln();
    let sqrt_tmt = (-s / 2.0).exp();
    let factor = (-s / (params.p() - 1.0)).exp(); // (T−t)^{1/(p-1)}
    let mut values = vec![0.0; grid.len()];
    let mut x = vec![0.0; grid.dim()];
    let mut err = None;
    grid.for_each_node(|i, y| {
        if err.is_some() {
            return;
        }
        for (a, (xa, ya)) in x.iter_mut().zip(y).enumerate() {
            *xa = u.frame.point()[a] + ya * sqrt_tmt;
        }
        match u.sample(&x) {
            Ok(v) => values[i] = factor * v,
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(FieldState::new(grid.clone(), values, s)?)
}

/// Physical dilation `u_λ(x, t) = λ^{2/(p-1)} u(λx, T + λ²(t − T))`, applied
/// exactly on the lattice (coordinates scale by `1/λ`, no interpolation).
/// In similarity variables this is the time shift `s ↦ s + 2 log λ`.
pub fn dilate_physical(
    u: &PhysicalField,
    params: &ModelParams,
    lambda: f64,
) -> Result<PhysicalField, PhysicalError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(PhysicalError::Domain(format!(
            "dilation factor must be positive and finite, got {lambda}"
        )));
    }
    if u.frame.point().iter().any(|&c| c != 0.0) {
        return Err(PhysicalError::Domain(
            "dilation is defined for frames centered at the origin".into(),
        ));
    }
    // T − t' = (T − t)/λ², with no reference to T itself
    let time_to_blowup = u.time_to_blowup / (lambda * lambda);
    let amp = lambda.powf(2.0 / (params.p() - 1.0));
    Ok(PhysicalField {
        frame: u.frame.clone(),
        time_to_blowup,
        axes: u
            .axes
            .iter()
            .map(|axis| axis.iter().map(|&x| x / lambda).collect())
            .collect(),
        values: u.values.iter().map(|&v| amp * v).collect(),
    })
}

/// Limiting final profile `u*(x) = [8p|log|x|| / ((p−1)²|x|²)]^{1/(p-1)}`
/// for `0 < |x| < 1`.
pub fn u_star(params: &ModelParams, x_norm: f64) -> Result<f64, PhysicalError> {
    if !(x_norm > 0.0 && x_norm < 1.0) {
        return Err(PhysicalError::Domain(format!(
            "final profile is defined for 0 < |x| < 1, got {x_norm}"
        )));
    }
    let p = params.p();
    let num = 8.0 * p * x_norm.ln().abs();
    let den = (p - 1.0) * (p - 1.0) * x_norm * x_norm;
    Ok((num / den).powf(1.0 / (p - 1.0)))
}

/// Solve `|x| = K √(τ̃ |log τ̃|)` for the time to blow-up `τ̃ = T − t̃` by
/// bisection on the branch where the right side increases with `τ̃`, i.e.
/// `τ̃ ≤ min(T, 1/e)`.  The residual of the returned solution is below
/// `1e-12` relative to `|x|`.
///
/// This is the precision-carrying form of the solve: `τ̃` keeps its full
/// relative accuracy however close to blow-up the answer lands, whereas the
/// calendar time `t̃ = T − τ̃` cannot resolve `τ̃` below one ulp of `T`.
/// Use [`t_tilde`] only when the calendar time itself is wanted.
pub fn tau_tilde(x_norm: f64, k_const: f64, frame: &BlowupFrame) -> Result<f64, PhysicalError> {
    if !(x_norm > 0.0) || !x_norm.is_finite() {
        return Err(PhysicalError::Domain(format!(
            "|x| must be positive and finite, got {x_norm}"
        )));
    }
    if !(k_const > 0.0) || !k_const.is_finite() {
        return Err(PhysicalError::Domain(format!(
            "K must be positive and finite, got {k_const}"
        )));
    }
    let shape = |tau: f64| k_const * (tau * tau.ln().abs()).sqrt();
    // τ = T − t̃ on the monotone branch τ ∈ (0, min(T, 1/e)]
    let tau_max = frame.blowup_time().min((-1.0f64).exp());
    let reach = shape(tau_max);
    if x_norm > reach {
        return Err(PhysicalError::Domain(format!(
            "|x| = {x_norm} exceeds the monotone branch's maximum {reach}"
        )));
    }
    let mut lo = 0.0f64;
    let mut hi = tau_max;
    let mut tau = 0.5 * tau_max;
    // ~60 halvings take τ to round-off; the residual test below is the
    // actual contract
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        tau = mid;
        let here = shape(mid);
        if (here - x_norm).abs() <= 1e-13 * x_norm {
            break;
        }
        if here < x_norm {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let residual = (shape(tau) - x_norm).abs();
    if residual > 1e-12 * x_norm {
        return Err(PhysicalError::Domain(format!(
            "bisection stalled with relative residual {:.3e}",
            residual / x_norm
        )));
    }
    Ok(tau)
}

/// Calendar-time form of [`tau_tilde`]: `t̃ = T − τ̃`.  The subtraction
/// rounds against `T`, so for `τ̃` below one ulp of `T` the returned value
/// degenerates to `T` itself; callers that feed the result back into
/// `T − t̃` should use [`tau_tilde`] directly instead.
pub fn t_tilde(x_norm: f64, k_const: f64, frame: &BlowupFrame) -> Result<f64, PhysicalError> {
    Ok(frame.blowup_time() - tau_tilde(x_norm, k_const, frame)?)
}

/// Which side of the bound the theory takes at this `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundBranch {
    /// `1 < p < 3`: the difference obeys the smaller of the two shapes.
    Min,
    /// `p ≥ 3`: the larger shape, so the difference stays bounded.
    Max,
}

/// One band measurement at one time.
#[derive(Debug, Clone)]
pub struct BandRow {
    pub s: f64,
    pub t: f64,
    /// `"inner"`, `"intermediate"`, or `"combined"`.
    pub band: &'static str,
    /// `sup |u − ū|` over the band (the point of worst ratio for the
    /// x-dependent bands).
    pub measured: f64,
    /// Bound shape value at the measured point.
    pub bound_shape: f64,
    pub ratio: f64,
}

/// Comparison of a physical difference against the expected bound shapes.
#[derive(Debug, Clone)]
pub struct DifferenceBoundReport {
    pub branch: BoundBranch,
    pub rows: Vec<BandRow>,
    /// Fitted prefactors: the smallest constants `C` with
    /// `measured ≤ C · shape` over the sampled window, per band.
    pub inner_prefactor: f64,
    pub intermediate_prefactor: f64,
    pub combined_prefactor: f64,
}

/// Window and band parameters for [`difference_bound_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReportOptions {
    /// Inner-band radius coefficient: `|y| ≤ K√s`.
    pub k_const: f64,
    /// Outer cap of the intermediate band in physical units (`< 1` so the
    /// logarithm in the bound shape keeps a sign).
    pub epsilon0: f64,
}

impl Default for BoundReportOptions {
    fn default() -> Self {
        Self {
            k_const: 5.0,
            epsilon0: 0.5,
        }
    }
}

/// Measure `|u − ū|` for two similarity trajectories over their common time
/// window and compare against the bound shapes, band by band.
pub fn difference_bound_report(
    a: &Trajectory,
    b: &Trajectory,
    frame: &BlowupFrame,
    options: &BoundReportOptions,
) -> Result<DifferenceBoundReport, PhysicalError> {
    if !(options.epsilon0 > 0.0 && options.epsilon0 < 1.0) {
        return Err(PhysicalError::Domain(format!(
            "epsilon0 must be in (0, 1), got {}",
            options.epsilon0
        )));
    }
    if !(options.k_const > 0.0) {
        return Err(PhysicalError::Domain(format!(
            "K must be positive, got {}",
            options.k_const
        )));
    }
    let g = trajectory_difference(a, b).map_err(|e| match e {
        ClassifyError::Mismatch(m) => PhysicalError::Coverage(m),
        other => PhysicalError::Coverage(other.to_string()),
    })?;
    let params = *g.params();
    let p = params.p();
    let branch = if p >= 3.0 {
        BoundBranch::Max
    } else {
        BoundBranch::Min
    };
    let grid = g.grid().clone();

    // bound shapes; s = |log(T−t)| on the trajectory's window (s > 0)
    let inner_shape = |s: f64| (-s * (0.5 - 1.0 / (p - 1.0))).exp() * s.powf(-1.5);
    let inter_shape = |x: f64| -> f64 {
        if x == 0.0 {
            // limit value: the power wins below p = 3, the log above
            return if p < 3.0 { f64::INFINITY } else { 0.0 };
        }
        x.powf(1.0 - 2.0 / (p - 1.0)) * x.ln().abs().powf(-(2.0 - 1.0 / (p - 1.0)))
    };

    let mut rows = Vec::new();
    let mut prefactors = [0.0f64; 3]; // inner, intermediate, combined
    for index in 0..g.frames().len() {
        let field = g.field(index)?;
        let s = field.s();
        if s <= 1.0 {
            return Err(PhysicalError::Coverage(format!(
                "bound shapes need s > 1 (T − t < 1/e); found a frame at s = {s}"
            )));
        }
        let t = frame.physical_time(s);
        let amp = (s / (p - 1.0)).exp(); // |u − ū| = amp · |g|
        let inner_radius = options.k_const * s.sqrt();
        let x_scale = (-s / 2.0).exp();

        let mut inner_sup = 0.0f64;
        let mut inter_best: Option<(f64, f64, f64)> = None; // (ratio, measured, shape)
        let mut combined_best: Option<(f64, f64, f64)> = None;
        let values = field.values();
        grid.for_each_node(|i, y| {
            let r = y.iter().map(|c| c * c).sum::<f64>().sqrt();
            let x_norm = r * x_scale;
            if x_norm > options.epsilon0 {
                return;
            }
            let diff = amp * values[i].abs();
            if r <= inner_radius {
                inner_sup = inner_sup.max(diff);
            } else {
                let shape = inter_shape(x_norm);
                let ratio = diff / shape;
                if inter_best.map_or(true, |(best, _, _)| ratio > best) {
                    inter_best = Some((ratio, diff, shape));
                }
            }
            let shape_combined = match branch {
                BoundBranch::Min => inner_shape(s).min(inter_shape(x_norm)),
                BoundBranch::Max => inner_shape(s).max(inter_shape(x_norm)),
            };
            let ratio = diff / shape_combined;
            if combined_best.map_or(true, |(best, _, _)| ratio > best) {
                combined_best = Some((ratio, diff, shape_combined));
            }
        });

        let inner_bound = inner_shape(s);
        let inner_ratio = inner_sup / inner_bound;
        prefactors[0] = prefactors[0].max(inner_ratio);
        rows.push(BandRow {
            s,
            t,
            band: "inner",
            measured: inner_sup,
            bound_shape: inner_bound,
            ratio: inner_ratio,
        });
        if let Some((ratio, measured, shape)) = inter_best {
            prefactors[1] = prefactors[1].max(ratio);
            rows.push(BandRow {
                s,
                t,
                band: "intermediate",
                measured,
                bound_shape: shape,
                ratio,
            });
        }
        if let Some((ratio, measured, shape)) = combined_best {
            prefactors[2] = prefactors[2].max(ratio);
            rows.push(BandRow {
                s,
                t,
                band: "combined",
                measured,
                bound_shape: shape,
                ratio,
            });
        }
    }
    Ok(DifferenceBoundReport {
        branch,
        rows,
        inner_prefactor: prefactors[0],
        intermediate_prefactor: prefactors[1],
        combined_prefactor: prefactors[2],
    })
}

/// Dump a difference-bound report as CSV.
pub fn write_bound_report_csv(
    mut out: impl Write,
    report: &DifferenceBoundReport,
) -> Result<(), PhysicalError> {
    writeln!(out, "s,t,band,measured,bound_shape,ratio")?;
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.s, row.t, row.band, row.measured, row.bound_shape, row.ratio
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ModelParams {
        ModelParams::new(3.0, 1).unwrap()
    }

    fn grid(extent: f64, nodes: usize) -> Arc<WeightedGrid> {
        Arc::new(WeightedGrid::new_1d(extent, nodes).unwrap())
    }

    #[test]
    fn constant_plateau_maps_to_the_ode_solution() {
        let params = params();
        let grid = grid(10.0, 101);
        let frame = BlowupFrame::at_origin(1.0, 1).unwrap();
        let w = FieldState::constant(grid.clone(), params.kappa(), 3.0).unwrap();
        let u = to_physical(&w, &params, &frame).unwrap();
        // u(x, t) = κ (T−t)^{-1/(p-1)} with T−t = e^{-3}
        let expected = params.kappa() * (3.0f64 / 2.0).exp();
        for &v in u.values() {
            assert_relative_eq!(v, expected, max_relative = 1e-13);
        }
        // the lattice shrinks with √(T−t)
        assert_relative_eq!(u.axes()[0][0], -10.0 * (-1.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(u.t(), 1.0 - (-3.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn round_trip_is_exact_on_shared_nodes() {
        let params = params();
        let grid = grid(20.0, 401);
        let frame = BlowupFrame::at_origin(1.0, 1).unwrap();
        let s = 20.0;
        let w = FieldState::new(grid.clone(), params.profile_field(&grid, s), s).unwrap();
        let u = to_physical(&w, &params, &frame).unwrap();
        let back = to_similarity(&u, &params, &grid).unwrap();
        assert_relative_eq!(back.s(), s, epsilon = 1e-12);
        for (a, b) in back.values().iter().zip(w.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn round_trip_through_interpolation_stays_tight() {
        let params = params();
        let coarse = grid(20.0, 401);
        let fine = grid(18.0, 515);
        let frame = BlowupFrame::at_origin(1.0, 1).unwrap();
        let s = 20.0;
        let w = FieldState::new(coarse.clone(), params.profile_field(&coarse, s), s).unwrap();
        let u = to_physical(&w, &params, &frame).unwrap();
        let back = to_similarity(&u, &params, &fine).unwrap();
        let analytic = params.profile_field(&fine, s);
        let mut worst = 0.0f64;
        for (a, b) in back.values().iter().zip(&analytic) {
            worst = worst.max((a - b).abs());
        }
        // cubic interpolation on the coarse lattice (h = 0.05 in y) leaves
        // an O(h⁴) defect against the analytic profile
        assert!(worst < 5e-8, "interpolated round trip error {worst:.3e}");
    }

    #[test]
    fn dilation_is_a_pure_time_shift() {
        let params = params();
        let grid = grid(15.0, 301);
        let frame = BlowupFrame::at_origin(1.0, 1).unwrap();
        let s = 18.0;
        let w = FieldState::new(grid.clone(), params.profile_field(&grid, s), s).unwrap();
        let u = to_physical(&w, &params, &frame).unwrap();
        let lambda = std::f64::consts::E;
        let dilated = dilate_physical(&u, &params, lambda).unwrap();
        let shifted = to_similarity(&dilated, &params, &grid).unwrap();
        assert_relative_eq!(shifted.s(), s + 2.0, epsilon = 1e-12);
        // the similarity field is untouched by the dilation
        for (a, b) in shifted.values().iter().zip(w.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-11);
        }
    }

    #[test]
    fn final_profile_formula_and_domain() {
        let params = params();
        // p = 3: u*(x) = √(6 |log x|) / x
        for x in [0.1f64, 0.03, 0.007] {
            let expected = (6.0 * x.ln().abs()).sqrt() / x;
            assert_relative_eq!(u_star(&params, x).unwrap(), expected, max_relative = 1e-13);
        }
        // diverges monotonically toward the blow-up point
        let seq: Vec<f64> = [1e-2, 1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&x| u_star(&params, x).unwrap())
            .collect();
        assert!(seq.windows(2).all(|w| w[1] > w[0]));
        for bad in [0.0, -0.2, 1.0, 1.7] {
            assert!(matches!(
                u_star(&params, bad),
                Err(PhysicalError::Domain(_))
            ));
        }
    }

    #[test]
    fn intermediate_time_solves_its_defining_relation() {
        let frame = BlowupFrame::at_origin(1.0, 1).unwrap();
        let k = 5.0;
        let t = t_tilde(0.1, k, &frame).unwrap();
        let tau = frame.blowup_time() - t;
        let residual = (k * (tau * tau.ln().abs()).sqrt() - 0.1).abs();
        assert!(residual < 1e-12 * 0.1, "residual {residual:.3e}");
        // larger |x| ⇒ earlier t̃
        let t_big = t_tilde(0.2, k, &frame).unwrap();
        assert!(t_big < t);
        // |x| → 0 ⇒ t̃ → T
        let t_small = t_tilde(1e-8, k, &frame).unwrap();
        assert!(frame.blowup_time() - t_small < 1e-10);
        // the τ̃ form keeps full relative precision where t̃ rounds to T
        let tau_tiny = tau_tilde(1e-8, k, &frame).unwrap();
        let x_back = k * (tau_tiny * tau_tiny.ln().abs()).sqrt();
        assert!((x_back - 1e-8).abs() < 1e-12 * 1e-8, "x residual {x_back:.3e}");
        // out of range: beyond the monotone branch or nonpositive
        assert!(t_tilde(5.0, k, &frame).is_err());
        assert!(t_tilde(0.0, k, &frame).is_err());
    }

    fn profile_trajectory(
        params: &ModelParams,
        grid: &Arc<WeightedGrid>,
        lo: f64,
        hi: f64,
        stride: f64,
    ) -> Trajectory {
        let mut t = Trajectory::new_empty(*params, grid.clone(), stride, "profile".into());
        let count = ((hi - lo) / stride).round() as usize;
        for k in 0..=count {
            let s = lo + k as f64 * stride;
            t.push_frame(s, params.profile_field(grid, s));
        }
        t
    }

    #[test]
    fn profile_map_approaches_the_final_profile() {
        // at fixed small |x|, u(x, t) from the profile approaches u*(x)
        let params = params();
        let grid = grid(40.0, 2001);
        let frame = BlowupFrame::at_origin(1.0, 1).unwrap();
        let x_hat = 5e-4;
        let limit = u_star(&params, x_hat).unwrap();
        let mut ratios = Vec::new();
        // the fixed |x| sits in the intermediate region once x·e^{s/2} ≫ √s
        for s in [19.0, 20.0, 21.0, 22.0] {
            let w = FieldState::new(grid.clone(), params.profile_field(&grid, s), s).unwrap();
            let u = to_physical(&w, &params, &frame).unwrap();
            let value = u.sample(&[x_hat]).unwrap();
            ratios.push(value / limit);
        }
        for (i, r) in ratios.iter().enumerate() {
            assert!(
                (0.4..2.5).contains(r),
                "ratio {r} at sample {i} is out of the order-of-magnitude window"
            );
        }
        let first = (ratios.first().unwrap() - 1.0).abs();
        let last = (ratios.last().unwrap() - 1.0).abs();
        assert!(last < first, "trend is not tightening: {ratios:?}");
    }

    #[test]
    fn identical_trajectories_report_zero_difference() {
        let params = params();
        let grid = grid(20.0, 201);
        let frame = BlowupFrame::at_origin(1.0, 1).unwrap();
        let a = profile_trajectory(&params, &grid, 12.0, 14.0, 0.1);
        let report =
            difference_bound_report(&a, &a, &frame, &BoundReportOptions::default()).unwrap();
        assert_eq!(report.branch, BoundBranch::Max);
        assert!(report.rows.iter().all(|r| r.measured == 0.0 && r.ratio == 0.0));
        assert_eq!(report.inner_prefactor, 0.0);
        assert_eq!(report.combined_prefactor, 0.0);
    }

    #[test]
    fn known_difference_lands_in_the_expected_bands() {
        let params = params();
        let grid = grid(20.0, 201);
        let frame = BlowupFrame::at_origin(1.0, 1).unwrap();
        let a = profile_trajectory(&params, &grid, 12.0, 14.0, 0.1);
        let mut b = Trajectory::new_empty(params, grid.clone(), 0.1, "shifted".into());
        for k in 0..=20 {
            let s = 12.0 + k as f64 * 0.1;
            let mut values = params.profile_field(&grid, s);
            grid.for_each_node(|i, y| {
                values[i] += (0.3 / (s * s)) * (y[0] * y[0] / 2.0 - 1.0);
            });
            b.push_frame(s, values);
        }
        let report =
            difference_bound_report(&a, &b, &frame, &BoundReportOptions::default()).unwrap();
        // p = 3 makes the inner shape purely logarithmic: s^{-3/2}
        let inner_rows: Vec<&BandRow> =
            report.rows.iter().filter(|r| r.band == "inner").collect();
        assert_eq!(inner_rows.len(), 21);
        for row in &inner_rows {
            assert_relative_eq!(row.bound_shape, row.s.powf(-1.5), max_relative = 1e-12);
            assert!(row.measured > 0.0);
            assert!(row.ratio.is_finite());
        }
        assert!(report.inner_prefactor > 0.0);
        // p ≥ 3 takes the max of the shapes, so the combined ratio can never
        // beat the inner-shape ratio at any node
        assert!(report.combined_prefactor > 0.0);
        assert!(report.combined_prefactor <= report.inner_prefactor * 1.0001);
        let mut csv = Vec::new();
        write_bound_report_csv(&mut csv, &report).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("s,t,band,measured,bound_shape,ratio\n"));
        assert_eq!(text.lines().count(), 1 + report.rows.len());
    }

    #[test]
    fn disjoint_windows_are_a_coverage_error() {
        let params = params();
        let grid = grid(20.0, 201);
        let frame = BlowupFrame::at_origin(1.0, 1).unwrap();
        let a = profile_trajectory(&params, &grid, 12.0, 13.0, 0.1);
        let b = profile_trajectory(&params, &grid, 15.0, 16.0, 0.1);
        assert!(matches!(
            difference_bound_report(&a, &b, &frame, &BoundReportOptions::default()),
            Err(PhysicalError::Coverage(_))
        ));
    }

    #[test]
    fn frame_validation() {
        assert!(BlowupFrame::new(0.0, vec![0.0]).is_err());
        assert!(BlowupFrame::new(1.0, vec![]).is_err());
        assert!(BlowupFrame::new(1.0, vec![f64::NAN]).is_err());
        let frame = BlowupFrame::at_origin(0.5, 2).unwrap();
        assert_eq!(frame.dim(), 2);
        assert!(frame.similarity_time(0.5).is_err());
        assert!(frame.similarity_time(0.6).is_err());
        let s = frame.similarity_time(0.25).unwrap();
        assert_relative_eq!(s, -(0.25f64).ln(), epsilon = 1e-15);
        assert_relative_eq!(frame.physical_time(s), 0.25, epsilon = 1e-15);
    }
}
