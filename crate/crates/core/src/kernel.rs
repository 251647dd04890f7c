//! The linear semigroup `e^{tL}`, a split-step approximation of the
//! perturbed kernel, and the antiderivative construction.
//!
//! The semigroup of `L = Δ − y/2·∇ + 1` has the explicit Mehler kernel
//!
//! ```text
//! e^{tL}(y, x) = e^t [4π(1−e^{-t})]^{-N/2} exp(−|y e^{-t/2} − x|² / 4(1−e^{-t}))
//! ```
//!
//! which factorizes over coordinate axes (one global `e^t`, one Gaussian
//! factor per axis).  [`apply_semigroup`] exploits that: it builds one
//! dense 1-D kernel matrix per axis (quadrature against plain trapezoid
//! weights) and contracts, so a 2-D application costs `O(n³)` instead of
//! `O(n⁴)`.
//!
//! The perturbed kernel `K(s, σ)` solving `∂_s K = (L + α)K` has no closed
//! form; [`apply_perturbed`] approximates its action by Strang splitting —
//! half-step multiplication by `exp(½Δτ·α)`, full Mehler step, half-step
//! multiplication — which converges at second order in the substep width.
//! The underlying estimates hold for `s ≤ 2σ`, so the operation enforces
//! `σ < s ≤ 2σ`.
//!
//! [`antiderivative`] solves `div g^{(-1)} = g` for mean-free `g` through
//! the ray formula
//!
//! ```text
//! g^{(-1)}(y) = −ŷ · 2^N/|y|^{N-1} · ∫_{|y|/2}^{∞} η^{N-1} g(2η ŷ) dη
//! ```
//!
//! (the `η = |y|/(2τ)` substitution of the defining `τ`-integral, which
//! removes the `τ^{-(N+1)}` endpoint singularity).  Each node costs one
//! 64-point Gauss–Legendre sum along its ray, with polynomial
//! interpolation of `g` at the ray samples.

use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::field::{FieldError, FieldState};
use crate::profile::ModelParams;
use crate::spectral::WeightedGrid;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid time argument: {0}")]
    BadTime(String),
    #[error("time step {t} is below the resolvable width {min} for this grid")]
    TimeTooShort { t: f64, min: f64 },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("field mean {mean:.3e} exceeds the mean-zero tolerance {allowed:.3e}")]
    NonzeroMean { mean: f64, allowed: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Pointwise Mehler kernel `e^{tL}(y, x)`.
///
/// Requires `t > 0`.  The short-time regime needs no separate asymptotic
/// branch: `1 − e^{-t}` is evaluated with `expm1`, which is exact down to
/// the heat-kernel limit instead of cancelling.
pub fn mehler_kernel(t: f64, y: &[f64], x: &[f64]) -> Result<f64, KernelError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(KernelError::BadTime(format!(
            "Mehler kernel needs t > 0, got {t}"
        )));
    }
    if y.len() != x.len() || y.is_empty() {
        return Err(KernelError::BadConfig(format!(
            "point dimensions {} and {} must match and be positive",
            y.len(),
            x.len()
        )));
    }
    let q = -(-t).exp_m1(); // 1 − e^{-t}, no cancellation
    let decay = (-t / 2.0).exp();
    let mut product = t.exp();
    for (&yi, &xi) in y.iter().zip(x) {
        product *= gauss_factor(yi * decay - xi, q);
    }
    Ok(product)
}

/// One axis factor `(4πq)^{-1/2} exp(−d²/(4q))`.
fn gauss_factor(d: f64, q: f64) -> f64 {
    (4.0 * std::f64::consts::PI * q).powf(-0.5) * (-d * d / (4.0 * q)).exp()
}

/// Dense 1-D kernel matrix for one axis: entry `(j_out, j_in)` is the axis'
/// Gaussian factor times the plain quadrature weight of `x[j_in]`.  The
/// global `e^t` is *not* included.
fn axis_kernel_matrix(grid: &WeightedGrid, axis: usize, t: f64) -> Vec<f64> {
    let nodes = grid.axis(axis).nodes();
    let weights = grid.plain_axis(axis);
    let n = nodes.len();
    let q = -(-t).exp_m1();
    let decay = (-t / 2.0).exp();
    let mut m = vec![0.0; n * n];
    for (jo, &yo) in nodes.iter().enumerate() {
        let row = &mut m[jo * n..(jo + 1) * n];
        let center = yo * decay;
        for ((slot, &xi), &w) in row.iter_mut().zip(nodes).zip(weights) {
            *slot = gauss_factor(center - xi, q) * w;
        }
    }
    m
}

fn min_resolvable_time(grid: &WeightedGrid) -> f64 {
    // the kernel width √(4(1−e^{-t})) ≈ 2√t must cover a node spacing
    let h = (0..grid.dim())
        .map(|a| grid.axis(a).spacing())
        .fold(f64::INFINITY, f64::min);
    (h * h / 16.0).max(1e-8)
}

/// Apply `e^{tL}` by grid quadrature.
///
/// This is a spatial operator: the output keeps the input's similarity
/// time.  `t` must be positive and wide enough for the kernel to be
/// resolvable on the grid (roughly `t ≳ h²/16`).
pub fn apply_semigroup(t: f64, f: &FieldState) -> Result<FieldState, KernelError> {
    let grid = f.grid();
    let min = min_resolvable_time(grid);
    if !(t > 0.0) || !t.is_finite() {
        return Err(KernelError::BadTime(format!(
            "semigroup time must be positive, got {t}"
        )));
    }
    if t < min {
        return Err(KernelError::TimeTooShort { t, min });
    }
    let mats: Vec<Vec<f64>> = (0..grid.dim())
        .map(|a| axis_kernel_matrix(grid, a, t))
        .collect();
    let mut out = contract_axes(grid, &mats, f.values());
    let amp = t.exp();
    for v in &mut out {
        *v *= amp;
    }
    Ok(FieldState::new(grid.clone(), out, f.s())?)
}

/// Contract per-axis kernel matrices against a row-major field (no `e^t`).
fn contract_axes(grid: &WeightedGrid, mats: &[Vec<f64>], values: &[f64]) -> Vec<f64> {
    match grid.dim() {
        1 => {
            let n = grid.axis(0).len();
            let mut out = vec![0.0; n];
            for (jo, slot) in out.iter_mut().enumerate() {
                let row = &mats[0][jo * n..(jo + 1) * n];
                *slot = row.iter().zip(values).map(|(k, v)| k * v).sum();
            }
            out
        }
        2 => {
            let n0 = grid.axis(0).len();
            let n1 = grid.axis(1).len();
            // axis 1 first: tmp[i][jo] = Σ_j m1[jo][j] values[i][j]
            let mut tmp = vec![0.0; n0 * n1];
            for i in 0..n0 {
                let row_in = &values[i * n1..(i + 1) * n1];
                let row_out = &mut tmp[i * n1..(i + 1) * n1];
                for (jo, slot) in row_out.iter_mut().enumerate() {
                    let krow = &mats[1][jo * n1..(jo + 1) * n1];
                    *slot = krow.iter().zip(row_in).map(|(k, v)| k * v).sum();
                }
            }
            // then axis 0: out[io][j] = Σ_i m0[io][i] tmp[i][j]
            let mut out = vec![0.0; n0 * n1];
            for (io, out_row) in out.chunks_mut(n1).enumerate() {
                let krow = &mats[0][io * n0..(io + 1) * n0];
                for (i, &k) in krow.iter().enumerate() {
                    let tmp_row = &tmp[i * n1..(i + 1) * n1];
                    for (o, v) in out_row.iter_mut().zip(tmp_row) {
                        *o += k * v;
                    }
                }
            }
            out
        }
        _ => unreachable!("grids are validated to dimension 1 or 2"),
    }
}

/// Strang-splitting approximation of the perturbed kernel action
/// `K(s, σ) f` for the potential of the model's reference profile.
///
/// Valid in the regime the underlying estimates cover: `0 < σ < s ≤ 2σ`.
/// The input field is the data at time `σ` (its own timestamp is not
/// consulted); the output carries time `s`.
pub fn apply_perturbed(
    params: &ModelParams,
    s: f64,
    sigma: f64,
    f: &FieldState,
    substeps: usize,
) -> Result<FieldState, KernelError> {
    apply_split_kernel(
        |y_sq, tau| params.potential(y_sq, tau),
        s,
        sigma,
        f,
        substeps,
    )
}

/// Split-step propagator for `∂_τ u = (L + α(·, τ)) u` with an arbitrary
/// potential `α(|y|², τ)`.  Used by [`apply_perturbed`]; tests can force
/// `α = 0` to recover the plain semigroup.
pub fn apply_split_kernel(
    potential: impl Fn(f64, f64) -> f64,
    s: f64,
    sigma: f64,
    f: &FieldState,
    substeps: usize,
) -> Result<FieldState, KernelError> {
    if !(sigma > 0.0) || !(s > sigma) {
        return Err(KernelError::BadTime(format!(
            "need 0 < σ < s, got σ = {sigma}, s = {s}"
        )));
    }
    if s > 2.0 * sigma + 1e-12 {
        return Err(KernelError::BadTime(format!(
            "s = {s} is outside the supported window (σ, 2σ] = ({sigma}, {}]",
            2.0 * sigma
        )));
    }
    if substeps == 0 {
        return Err(KernelError::BadConfig(
            "substep count must be at least 1".into(),
        ));
    }
    let grid = f.grid();
    let dt = (s - sigma) / substeps as f64;
    let min = min_resolvable_time(grid);
    if dt < min {
        return Err(KernelError::TimeTooShort { t: dt, min });
    }

    // radius squared per node, reused in every half-step
    let mut r_sq = vec![0.0; grid.len()];
    grid.for_each_node(|i, y| r_sq[i] = y.iter().map(|c| c * c).sum());

    let mats: Vec<Vec<f64>> = (0..grid.dim())
        .map(|a| axis_kernel_matrix(grid, a, dt))
        .collect();
    let amp = dt.exp();

    let mut u = f.values().to_vec();
    for j in 0..substeps {
        let tau_lo = sigma + j as f64 * dt;
        let tau_hi = tau_lo + dt;
        for (v, &rs) in u.iter_mut().zip(&r_sq) {
            *v *= (0.5 * dt * potential(rs, tau_lo)).exp();
        }
        u = contract_axes(grid, &mats, &u);
        for (v, &rs) in u.iter_mut().zip(&r_sq) {
            *v *= amp * (0.5 * dt * potential(rs, tau_hi)).exp();
        }
    }
    Ok(FieldState::new(grid.clone(), u, s)?)
}

/// A vector field: one component per grid dimension, shared grid and time.
#[derive(Debug, Clone)]
pub struct VectorField {
    components: Vec<FieldState>,
}

impl VectorField {
    pub fn components(&self) -> &[FieldState] {
        &self.components
    }

    pub fn component(&self, a: usize) -> &FieldState {
        &self.components[a]
    }

    pub fn grid(&self) -> &Arc<WeightedGrid> {
        self.components[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }
}

/// Relative tolerance for the mean-zero hypothesis: `|∫g| ≤ TOL·∫|g|`.
const MEAN_ZERO_TOL: f64 = 1e-6;

/// Construct the antiderivative `g^{(-1)}` with `div g^{(-1)} = g`.
///
/// `g` must be mean-free (the construction is discontinuous at the origin
/// otherwise) and decay fast enough that truncating each ray at the grid
/// boundary is harmless; Gaussian-weighted fields qualify.  At the origin
/// the formula's `y` factor vanishes: in one dimension the value is the
/// well-defined limit `−∫_0^∞ g`, in two dimensions the components are
/// zero by continuity.
pub fn antiderivative(g: &FieldState) -> Result<VectorField, KernelError> {
    let grid = g.grid();
    let values = g.values();
    let mut mean = 0.0;
    let mut abs_mass = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let w = grid.weight_plain(i);
        mean += w * v;
        abs_mass += w * v.abs();
    }
    let allowed = MEAN_ZERO_TOL * abs_mass;
    if mean.abs() > allowed {
        return Err(KernelError::NonzeroMean {
            mean,
            allowed,
        });
    }

    let dim = grid.dim();
    let mut components = vec![vec![0.0; grid.len()]; dim];
    let scale = 2f64.powi(dim as i32);
    let (gl_nodes, gl_weights) = gauss_legendre_64();
    grid.for_each_node(|idx, y| {
        let r = y.iter().map(|c| c * c).sum::<f64>().sqrt();
        let unit: Vec<f64> = if r > 0.0 {
            y.iter().map(|c| c / r).collect()
        } else if dim == 1 {
            vec![1.0]
        } else {
            // the y prefactor vanishes at the origin
            return;
        };
        // the ray leaves the grid at R(ŷ) = min_a extent_a / |ŷ_a|
        let mut ray_extent = f64::INFINITY;
        for (a, &ua) in unit.iter().enumerate() {
            if ua.abs() > 1e-300 {
                ray_extent = ray_extent.min(grid.axis(a).extent() / ua.abs());
            }
        }
        let lower = r / 2.0;
        let upper = ray_extent / 2.0;
        if upper <= lower {
            return; // boundary node along its own ray
        }
        let half = 0.5 * (upper - lower);
        let mid = 0.5 * (upper + lower);
        let mut integral = 0.0;
        let mut x = vec![0.0; dim];
        for (&node, &weight) in gl_nodes.iter().zip(gl_weights) {
            let eta = mid + half * node;
            for (xa, &ua) in x.iter_mut().zip(&unit) {
                *xa = 2.0 * eta * ua;
            }
            let sample = match dim {
                1 => sample_quintic_1d(grid, values, x[0]),
                _ => sample_bicubic_2d(grid, values, &x),
            };
            integral += weight * eta.powi(dim as i32 - 1) * sample;
        }
        integral *= half;
        let prefactor = -scale / if dim == 1 { 1.0 } else { r.powi(dim as i32 - 1) };
        for (component, &ua) in components.iter_mut().zip(&unit) {
            component[idx] = prefactor * ua * integral;
        }
    });

    let components = components
        .into_iter()
        .map(|vals| FieldState::new(grid.clone(), vals, g.s()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VectorField { components })
}

/// Finite-difference weights on the nodes `xs` for the `m`-th derivative
/// evaluated at `x0`, by Fornberg's recurrence.  Row `k` of the result holds
/// the weights for the `k`-th derivative (row 0 is interpolation).
fn fornberg_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Width of the one-dimensional divergence stencil.
const DIV_STENCIL: usize = 6;

/// Divergence of a vector field by six-node (fifth-order) finite
/// differences, with the stencil window clamped at the grid boundary.  This
/// is the numerical inverse used to test [`antiderivative`], so its
/// truncation error must sit well below the antiderivative's quadrature
/// accuracy.
pub fn divergence(v: &VectorField) -> Result<FieldState, KernelError> {
    let grid = v.grid().clone();
    if v.dim() != grid.dim() {
        return Err(KernelError::BadConfig(format!(
            "{} components on a {}-dimensional grid",
            v.dim(),
            grid.dim()
        )));
    }
    let mut out = vec![0.0; grid.len()];
    for a in 0..grid.dim() {
        let vals = v.component(a).values();
        let h = grid.axis(a).spacing();
        let (stride, count, lanes) = match (grid.dim(), a) {
            (1, _) => (1usize, grid.axis(0).len(), 1usize),
            (2, 0) => (grid.axis(1).len(), grid.axis(0).len(), grid.axis(1).len()),
            (2, 1) => (1, grid.axis(1).len(), grid.axis(0).len()),
            _ => unreachable!(),
        };
        if count < DIV_STENCIL {
            return Err(KernelError::BadConfig(format!(
                "axis {a} has {count} nodes; the divergence stencil needs {DIV_STENCIL}"
            )));
        }
        // Weight rows depend only on the evaluation position inside the
        // window (the grid is uniform), so precompute all six rows.
        let xs: Vec<f64> = (0..DIV_STENCIL).map(|j| j as f64 * h).collect();
        let rows: Vec<Vec<f64>> = (0..DIV_STENCIL)
            .map(|k| fornberg_weights(k as f64 * h, &xs, 1).pop().expect("derivative row"))
            .collect();
        for lane in 0..lanes {
            let base = match (grid.dim(), a) {
                (2, 0) => lane,
                (2, 1) => lane * grid.axis(1).len(),
                _ => 0,
            };
            for k in 0..count {
                let start = k.saturating_sub(2).min(count - DIV_STENCIL);
                let row = &rows[k - start];
                let mut d = 0.0;
                for (j, &w) in row.iter().enumerate() {
                    d += w * vals[base + (start + j) * stride];
                }
                out[base + k * stride] += d;
            }
        }
    }
    Ok(FieldState::new(grid, out, v.component(0).s())?)
}

/// Repeated antiderivatives in one dimension: stage `k+1` is the scalar
/// antiderivative of stage `k`.  Requires the moments `∫ y^k g dy` to
/// vanish for `k < depth` (each stage's mean-zero hypothesis); `depth ≤ 3`.
pub fn nested_antiderivative(
    g: &FieldState,
    depth: usize,
) -> Result<Vec<FieldState>, KernelError> {
    let grid = g.grid();
    if grid.dim() != 1 {
        return Err(KernelError::BadConfig(
            "nested antiderivatives are defined for one-dimensional fields".into(),
        ));
    }
    if depth == 0 || depth > 3 {
        return Err(KernelError::BadConfig(format!(
            "nesting depth must be 1..=3, got {depth}"
        )));
    }
    let nodes = grid.axis(0).nodes();
    let values = g.values();
    for power in 0..depth {
        let mut moment = 0.0;
        let mut mass = 0.0;
        for (i, (&y, &v)) in nodes.iter().zip(values).enumerate() {
            let w = grid.weight_plain(i) * y.powi(power as i32);
            moment += w * v;
            mass += w.abs() * v.abs();
        }
        if moment.abs() > MEAN_ZERO_TOL * mass.max(1e-300) {
            return Err(KernelError::BadConfig(format!(
                "moment of order {power} is {moment:.3e}, not zero; nesting to depth {depth} \
                 needs vanishing moments below that depth"
            )));
        }
    }
    let mut stages = Vec::with_capacity(depth);
    let mut current = g.clone();
    for _ in 0..depth {
        let next = antiderivative(&current)?;
        current = next.components()[0].clone();
        stages.push(current.clone());
    }
    Ok(stages)
}

/// 64-point Gauss–Legendre nodes and weights on `[-1, 1]`, computed once by
/// Newton iteration on the Legendre recurrence.
fn gauss_legendre_64() -> (&'static [f64], &'static [f64]) {
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (n, w) = TABLE.get_or_init(|| {
        const N: usize = 64;
        let mut nodes = vec![0.0; N];
        let mut weights = vec![0.0; N];
        for i in 0..N {
            // Chebyshev-like initial guess, then Newton on P_N
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(N, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            nodes[N - 1 - i] = x;
            weights[N - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    });
    (n, w)
}

/// Legendre polynomial `P_n(x)` and its derivative via the three-term
/// recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quintic (6-point) Lagrange interpolation on a uniform 1-D grid, clamped
/// to the boundary stencil.  The order is chosen so ray-quadrature error
/// stays well below the antiderivative's stated tolerance.
fn sample_quintic_1d(grid: &WeightedGrid, values: &[f64], x: f64) -> f64 {
    let nodes = grid.axis(0).nodes();
    let n = nodes.len();
    let h = grid.axis(0).spacing();
    let u = ((x - nodes[0]) / h).clamp(0.0, (n - 1) as f64);
    let k = (u.floor() as usize).min(n - 2);
    // 6-point window [k-2, k+3], shifted inside the grid at the edges
    let start = k.saturating_sub(2).min(n - 6);
    let t = u - start as f64; // position in window units
    let mut sum = 0.0;
    for j in 0..6 {
        let mut weight = 1.0;
        for m in 0..6 {
            if m != j {
                weight *= (t - m as f64) / (j as f64 - m as f64);
            }
        }
        sum += weight * values[start + j];
    }
    sum
}

/// Bicubic (Catmull–Rom) interpolation on a 2-D grid, edge-clamped.
fn sample_bicubic_2d(grid: &WeightedGrid, values: &[f64], x: &[f64]) -> f64 {
    let n0 = grid.axis(0).len();
    let n1 = grid.axis(1).len();
    let bracket = |axis: usize, q: f64| -> (i64, f64) {
        let nodes = grid.axis(axis).nodes();
        let h = grid.axis(axis).spacing();
        let u = ((q - nodes[0]) / h).clamp(0.0, (nodes.len() - 1) as f64);
        let k = (u.floor() as usize).min(nodes.len() - 2);
        (k as i64, u - k as f64)
    };
    let (k0, t0) = bracket(0, x[0]);
    let (k1, t1) = bracket(1, x[1]);
    let mut rows = [0.0; 4];
    for (slot, di) in (-1i64..=2).enumerate() {
        let i = (k0 + di).clamp(0, n0 as i64 - 1) as usize;
        let mut line = [0.0; 4];
        for (ls, dj) in (-1i64..=2).enumerate() {
            let j = (k1 + dj).clamp(0, n1 as i64 - 1) as usize;
            line[ls] = values[i * n1 + j];
        }
        rows[slot] = catmull(line, t1);
    }
    catmull(rows, t0)
}

fn catmull(v: [f64; 4], t: f64) -> f64 {
    let [a, b, c, d] = v;
    0.5 * (2.0 * b
        + t * ((c - a)
            + t * ((2.0 * a - 5.0 * b + 4.0 * c - d) + t * (3.0 * (b - c) + d - a))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{indices_of_degree, phi_field, rho_1d, MultiIndex};
    use approx::assert_relative_eq;

    fn grid_1d() -> Arc<WeightedGrid> {
        Arc::new(WeightedGrid::new_1d(40.0, 2001).unwrap())
    }

    #[test]
    fn kernel_value_at_the_origin_and_long_time_limit() {
        let t: f64 = 0.7;
        let q = 1.0 - (-t).exp();
        let expected = t.exp() * (4.0 * std::f64::consts::PI * q).powf(-0.5);
        assert_relative_eq!(
            mehler_kernel(t, &[0.0], &[0.0]).unwrap(),
            expected,
            max_relative = 1e-14
        );
        // t → ∞: e^t (4π)^{-N/2} e^{-|x|²/4}, the rank-one projection onto 1
        let t = 40.0;
        for (y, x) in [(0.3, 1.1), (-2.0, 0.4), (5.0, -3.0)] {
            let k = mehler_kernel(t, &[y], &[x]).unwrap();
            let limit = t.exp() * rho_1d(x);
            assert_relative_eq!(k, limit, max_relative = 1e-6);
        }
        assert!(mehler_kernel(0.0, &[0.0], &[0.0]).is_err());
        assert!(mehler_kernel(-1.0, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn detailed_balance_holds_to_round_off() {
        // ρ(y) K(t, y, x) = ρ(x) K(t, x, y)
        let samples = [
            (0.5, 1.3, -2.0),
            (0.5, 0.0, 4.0),
            (2.0, -3.5, -1.2),
            (1e-6, 0.8, 0.9),
            (7.0, 2.0, 2.5),
        ];
        for (t, y, x) in samples {
            let lhs = rho_1d(y) * mehler_kernel(t, &[y], &[x]).unwrap();
            let rhs = rho_1d(x) * mehler_kernel(t, &[x], &[y]).unwrap();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
        }
        // and in two dimensions with the product weight
        let rho2 = |p: &[f64]| rho_1d(p[0]) * rho_1d(p[1]);
        let y = [1.0, -0.7];
        let x = [0.3, 2.2];
        let lhs = rho2(&y) * mehler_kernel(0.8, &y, &x).unwrap();
        let rhs = rho2(&x) * mehler_kernel(0.8, &x, &y).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn semigroup_reproduces_the_spectrum() {
        // e^{tL} φ_β = e^{(1-|β|/2)t} φ_β
        let grid = grid_1d();
        let t = 0.5;
        for degree in 0..=2u32 {
            for beta in indices_of_degree(1, degree) {
                let phi = phi_field(&grid, &beta).unwrap();
                let f = FieldState::new(grid.clone(), phi.clone(), 10.0).unwrap();
                let out = apply_semigroup(t, &f).unwrap();
                assert_eq!(out.s(), 10.0);
                let factor = ((1.0 - degree as f64 / 2.0) * t).exp();
                let mut worst = 0.0f64;
                grid.for_each_node(|i, y| {
                    if y[0].abs() <= 20.0 {
                        let expected = factor * phi[i];
                        let err = (out.values()[i] - expected).abs() / (1.0 + expected.abs());
                        worst = worst.max(err);
                    }
                });
                assert!(
                    worst < 1e-6,
                    "eigenrelation error {worst:.3e} for degree {degree}"
                );
            }
        }
    }

    #[test]
    fn semigroup_eigenrelation_in_two_dimensions() {
        let grid = Arc::new(WeightedGrid::new_2d(12.0, 241).unwrap());
        let beta = MultiIndex::new(vec![1, 1]).unwrap();
        let phi = phi_field(&grid, &beta).unwrap();
        let f = FieldState::new(grid.clone(), phi.clone(), 5.0).unwrap();
        let out = apply_semigroup(0.5, &f).unwrap();
        // |β| = 2 ⇒ eigenvalue 0 ⇒ the field is invariant
        let mut worst = 0.0f64;
        grid.for_each_node(|i, y| {
            if y[0].abs() <= 6.0 && y[1].abs() <= 6.0 {
                let err = (out.values()[i] - phi[i]).abs() / (1.0 + phi[i].abs());
                worst = worst.max(err);
            }
        });
        assert!(worst < 1e-6, "2-D eigenrelation error {worst:.3e}");
    }

    #[test]
    fn semigroup_composition_property() {
        let grid = grid_1d();
        let f = FieldState::from_fn(grid.clone(), 3.0, |y| {
            (-y[0] * y[0] / 8.0).exp() * (1.0 + 0.3 * y[0])
        })
        .unwrap();
        let once = apply_semigroup(0.8, &f).unwrap();
        let twice = apply_semigroup(0.4, &apply_semigroup(0.4, &f).unwrap()).unwrap();
        let diff: Vec<f64> = once
            .values()
            .iter()
            .zip(twice.values())
            .map(|(a, b)| a - b)
            .collect();
        let diff_field = FieldState::new(grid.clone(), diff, 3.0).unwrap();
        let rel = diff_field.norm_rho() / once.norm_rho();
        assert!(rel < 1e-6, "semigroup composition defect {rel:.3e}");
    }

    #[test]
    fn polynomial_growth_is_preserved() {
        // |f| ≤ (1+|x|)³ ⇒ |e^{tL} f| ≤ C e^t (1 + e^{-t/2}|y|)³
        let grid = grid_1d();
        let f = FieldState::from_fn(grid.clone(), 1.0, |y| (1.0 + y[0].abs()).powi(3)).unwrap();
        for t in [0.5, 2.0] {
            let out = apply_semigroup(t, &f).unwrap();
            let mut worst = 0.0f64;
            grid.for_each_node(|i, y| {
                if y[0].abs() <= 20.0 {
                    let bound = t.exp() * (1.0 + (-t / 2.0).exp() * y[0].abs()).powi(3);
                    worst = worst.max(out.values()[i] / bound);
                }
            });
            assert!(
                worst.is_finite() && worst < 20.0,
                "growth constant {worst:.3} at t = {t}"
            );
            // the constant is genuinely O(1), not an artifact of the window
            assert!(worst > 0.5, "suspiciously small constant {worst:.3}");
        }
    }

    #[test]
    fn split_kernel_with_zero_potential_is_the_semigroup() {
        let grid = grid_1d();
        let f = FieldState::from_fn(grid.clone(), 10.0, |y| (-y[0] * y[0] / 6.0).exp()).unwrap();
        let plain = apply_semigroup(1.0, &f).unwrap();
        let split = apply_split_kernel(|_, _| 0.0, 11.0, 10.0, &f, 8).unwrap();
        for (a, b) in plain.values().iter().zip(split.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-13);
        }
        assert_eq!(split.s(), 11.0);
    }

    #[test]
    fn split_kernel_window_is_enforced() {
        let grid = grid_1d();
        let params = ModelParams::new(3.0, 1).unwrap();
        let f = FieldState::constant(grid, 1.0, 10.0).unwrap();
        assert!(apply_perturbed(&params, 21.0, 10.0, &f, 4).is_err());
        assert!(apply_perturbed(&params, 10.0, 10.0, &f, 4).is_err());
        assert!(apply_perturbed(&params, 11.0, 10.0, &f, 0).is_err());
        assert!(apply_perturbed(&params, 20.0, 10.0, &f, 16).is_ok());
    }

    #[test]
    fn splitting_converges_at_second_order() {
        let grid = Arc::new(WeightedGrid::new_1d(40.0, 1001).unwrap());
        let params = ModelParams::new(3.0, 1).unwrap();
        let f = FieldState::from_fn(grid.clone(), 10.0, |y| {
            (-y[0] * y[0] / 10.0).exp() * (1.0 + 0.2 * y[0])
        })
        .unwrap();
        let reference = apply_perturbed(&params, 10.5, 10.0, &f, 64).unwrap();
        let err = |sub: usize| {
            let out = apply_perturbed(&params, 10.5, 10.0, &f, sub).unwrap();
            let diff: Vec<f64> = out
                .values()
                .iter()
                .zip(reference.values())
                .map(|(a, b)| a - b)
                .collect();
            FieldState::new(grid.clone(), diff, 10.5).unwrap().norm_rho()
        };
        let e4 = err(4);
        let e8 = err(8);
        // pure second order against a 64-substep reference gives
        // (1/16 − 1/4096)/(1/64 − 1/4096) = 5; allow prefactor wiggle
        assert!(
            e4 / e8 > 3.9,
            "splitting order too low: e4 = {e4:.3e}, e8 = {e8:.3e}"
        );
    }

    #[test]
    fn perturbed_kernel_is_dominated_by_the_semigroup() {
        // |K(s,σ)f| ≤ C e^{(s-σ)L}|f| with C close to 1 for the small
        // potential of the reference profile
        let grid = grid_1d();
        let params = ModelParams::new(3.0, 1).unwrap();
        let f = FieldState::from_fn(grid.clone(), 10.0, |y| (-y[0] * y[0] / 4.0).exp()).unwrap();
        let perturbed = apply_perturbed(&params, 11.0, 10.0, &f, 16).unwrap();
        let plain = apply_semigroup(1.0, &f).unwrap();
        let floor = 1e-12 * plain.sup_norm();
        let mut worst = 0.0f64;
        for (&k, &e) in perturbed.values().iter().zip(plain.values()) {
            if e > floor {
                worst = worst.max(k / e);
            }
        }
        assert!(
            worst < 1.2,
            "domination constant {worst:.4} is larger than the potential warrants"
        );
        assert!(worst > 0.8, "kernel lost mass it should not lose: {worst:.4}");
    }

    #[test]
    fn outer_data_decays_under_the_perturbed_kernel() {
        // f supported outside the cutoff: ‖K(s,σ)f‖∞ decays with rate
        // close to 1/p
        let grid = Arc::new(WeightedGrid::new_1d(40.0, 1001).unwrap());
        let params = ModelParams::new(3.0, 1).unwrap();
        let sigma = 6.0;
        let cutoff = crate::profile::CutoffSpec::default();
        let f = FieldState::from_fn(grid.clone(), sigma, |y| {
            1.0 - cutoff.value(y[0].abs(), sigma)
        })
        .unwrap();
        let mut gaps = Vec::new();
        let mut logs = Vec::new();
        for k in 1..=6 {
            let s = sigma + k as f64;
            let out = apply_perturbed(&params, s, sigma, &f, 8 * k).unwrap();
            gaps.push(s - sigma);
            logs.push(out.sup_norm().ln());
        }
        // least-squares slope of log‖·‖∞ against (s − σ)
        let n = gaps.len() as f64;
        let gbar = gaps.iter().sum::<f64>() / n;
        let lbar = logs.iter().sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (&g, &l) in gaps.iter().zip(&logs) {
            sxx += (g - gbar) * (g - gbar);
            sxy += (g - gbar) * (l - lbar);
        }
        let rate = -sxy / sxx;
        assert!(
            rate >= 1.0 / params.p() - 0.2,
            "outer decay rate {rate:.3} below the expected {:.3}",
            1.0 / params.p() - 0.2
        );
    }

    #[test]
    fn antiderivative_matches_the_closed_form() {
        // g = φ₂ρ₁ has the exact antiderivative −2yρ₁(y)
        let grid = grid_1d();
        let g = FieldState::from_fn(grid.clone(), 1.0, |y| {
            (y[0] * y[0] - 2.0) * rho_1d(y[0])
        })
        .unwrap();
        let anti = antiderivative(&g).unwrap();
        assert_eq!(anti.dim(), 1);
        let mut worst = 0.0f64;
        grid.for_each_node(|i, y| {
            let expected = -2.0 * y[0] * rho_1d(y[0]);
            worst = worst.max((anti.component(0).values()[i] - expected).abs());
        });
        assert!(worst < 1e-8, "closed-form defect {worst:.3e}");

        // and it matches the cumulative integral from the left up to the
        // trapezoid oracle's own h²-truncation (≈ h²/12·|g'| ~ 5e-5)
        let nodes = grid.axis(0).nodes();
        let h = grid.axis(0).spacing();
        let mut cumulative = vec![0.0; nodes.len()];
        for i in 1..nodes.len() {
            cumulative[i] = cumulative[i - 1]
                + 0.5 * h * (g.values()[i - 1] + g.values()[i]);
        }
        let mut worst = 0.0f64;
        for (a, c) in anti.component(0).values().iter().zip(&cumulative) {
            worst = worst.max((a - c).abs());
        }
        assert!(worst < 2e-4, "cumulative-integral defect {worst:.3e}");
    }

    #[test]
    fn divergence_recovers_the_field() {
        let grid = grid_1d();
        let g = FieldState::from_fn(grid.clone(), 1.0, |y| {
            (y[0] * y[0] - 2.0) * rho_1d(y[0])
        })
        .unwrap();
        let anti = antiderivative(&g).unwrap();
        let div = divergence(&anti).unwrap();
        let mut worst = 0.0f64;
        for (d, v) in div.values().iter().zip(g.values()) {
            worst = worst.max((d - v).abs());
        }
        // the fifth-order stencil's truncation (~h⁵|g⁽⁶⁾|) sits below the
        // antiderivative's own quadrature/interpolation noise at ~1e-8
        assert!(worst < 1e-6, "divergence defect {worst:.3e}");
    }

    #[test]
    fn derivative_weights_match_tabulated_values() {
        // six-node first-derivative row centred two nodes in, h = 1:
        // [1/20, −1/2, −1/3, 1, −1/4, 1/30]
        let xs: Vec<f64> = (0..6).map(|j| j as f64).collect();
        let row = fornberg_weights(2.0, &xs, 1).pop().unwrap();
        let expect = [
            1.0 / 20.0,
            -0.5,
            -1.0 / 3.0,
            1.0,
            -0.25,
            1.0 / 30.0,
        ];
        for (w, e) in row.iter().zip(expect) {
            assert!((w - e).abs() < 1e-14, "weight {w} vs {e}");
        }
    }

    #[test]
    fn antiderivative_decay_bound() {
        // |g^{(-1)}(y)| e^{|y|²/4} / (1 + |y|^q) stays bounded (q = 2)
        let grid = grid_1d();
        let g = FieldState::from_fn(grid.clone(), 1.0, |y| {
            (y[0] * y[0] - 2.0) * rho_1d(y[0])
        })
        .unwrap();
        let anti = antiderivative(&g).unwrap();
        let mut sup = 0.0f64;
        grid.for_each_node(|i, y| {
            let r = y[0].abs();
            if r <= 30.0 {
                let weighted = anti.component(0).values()[i].abs() * (r * r / 4.0).exp()
                    / (1.0 + r * r);
                sup = sup.max(weighted);
            }
        });
        assert!(sup.is_finite() && sup < 1.0, "decay constant {sup:.3}");
    }

    #[test]
    fn nonzero_mean_is_rejected() {
        let grid = grid_1d();
        let g = FieldState::from_fn(grid.clone(), 1.0, |y| rho_1d(y[0])).unwrap();
        assert!(matches!(
            antiderivative(&g),
            Err(KernelError::NonzeroMean { .. })
        ));
    }

    #[test]
    fn two_dimensional_antiderivative_matches_a_radial_closed_form() {
        // g(y) = (|y|² − 4)e^{-|y|²/4} is mean-free with vanishing radial
        // moment ∫₀^∞ r·g(r) dr, so its antiderivative is smooth through
        // the origin; solving (r f)' = r g gives it in closed form:
        // g^{(-1)}(y) = −2 y e^{-|y|²/4}
        let grid = Arc::new(WeightedGrid::new_2d(14.0, 281).unwrap());
        let g = FieldState::from_fn(grid.clone(), 1.0, |y| {
            let r_sq = y[0] * y[0] + y[1] * y[1];
            (r_sq - 4.0) * (-r_sq / 4.0).exp()
        })
        .unwrap();
        let anti = antiderivative(&g).unwrap();
        assert_eq!(anti.dim(), 2);
        let mut worst = 0.0f64;
        grid.for_each_node(|i, y| {
            let r_sq = y[0] * y[0] + y[1] * y[1];
            let amp = -2.0 * (-r_sq / 4.0).exp();
            for a in 0..2 {
                worst = worst.max((anti.component(a).values()[i] - amp * y[a]).abs());
            }
        });
        // the ray samples come through bicubic interpolation, which caps
        // the achievable accuracy on this lattice
        assert!(worst < 2e-3, "2-D closed-form defect {worst:.3e}");

        // the divergence identity closes the loop; differencing divides the
        // interpolation-level noise above by h, so the bar sits higher here
        let div = divergence(&anti).unwrap();
        let mut worst = 0.0f64;
        grid.for_each_node(|i, y| {
            if y[0].abs() <= 10.0 && y[1].abs() <= 10.0 {
                worst = worst.max((div.values()[i] - g.values()[i]).abs());
            }
        });
        assert!(worst < 5e-2, "2-D divergence defect {worst:.3e}");

        // origin components vanish: the y-prefactor kills them
        let center = grid.len() / 2;
        assert_eq!(anti.component(0).values()[center], 0.0);
        assert_eq!(anti.component(1).values()[center], 0.0);
    }

    #[test]
    fn triple_nesting_follows_the_eigenfunction_chain() {
        // antiderivatives of φ₃ρ₁: −2φ₂ρ₁, then 4yρ₁, then −8ρ₁
        let grid = grid_1d();
        let g = FieldState::from_fn(grid.clone(), 1.0, |y| {
            (y[0] * y[0] * y[0] - 6.0 * y[0]) * rho_1d(y[0])
        })
        .unwrap();
        let stages = nested_antiderivative(&g, 3).unwrap();
        assert_eq!(stages.len(), 3);
        let expected: [Box<dyn Fn(f64) -> f64>; 3] = [
            Box::new(|y| -2.0 * (y * y - 2.0) * rho_1d(y)),
            Box::new(|y| 4.0 * y * rho_1d(y)),
            Box::new(|y| -8.0 * rho_1d(y)),
        ];
        for (stage, oracle) in stages.iter().zip(&expected) {
            let mut worst = 0.0f64;
            grid.for_each_node(|i, y| {
                worst = worst.max((stage.values()[i] - oracle(y[0])).abs());
            });
            assert!(worst < 1e-7, "nesting stage defect {worst:.3e}");
        }
        // a field with a surviving first moment cannot be nested twice
        let bad = FieldState::from_fn(grid.clone(), 1.0, |y| y[0] * rho_1d(y[0])).unwrap();
        assert!(nested_antiderivative(&bad, 1).is_ok());
        assert!(nested_antiderivative(&bad, 2).is_err());
    }

    #[test]
    fn gauss_legendre_table_integrates_polynomials_exactly() {
        let (nodes, weights) = gauss_legendre_64();
        assert_eq!(nodes.len(), 64);
        // ∫_{-1}^{1} x^{2k} dx = 2/(2k+1), exact up to degree 127
        for k in [0usize, 3, 10, 31] {
            let integral: f64 = nodes
                .iter()
                .zip(weights)
                .map(|(&x, &w)| w * x.powi(2 * k as i32))
                .sum();
            assert_relative_eq!(integral, 2.0 / (2.0 * k as f64 + 1.0), max_relative = 1e-12);
        }
        // nodes are sorted and symmetric
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        for i in 0..32 {
            assert_relative_eq!(nodes[i], -nodes[63 - i], epsilon = 1e-14);
        }
    }
}
