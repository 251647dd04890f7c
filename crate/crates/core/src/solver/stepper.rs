//! Semi-implicit time stepping for the similarity-variable flows.
//!
//! One step of either flow treats diffusion implicitly (a constant
//! tridiagonal solve per axis, factored once) and everything else —
//! convection, reaction, potential, nonlinear remainder — explicitly:
//!
//! ```text
//! (I - ds·Δ_h) w^{n+1} = w^n + ds·[ -(y/2)·∇_up w^n + R(w^n) ].
//! ```
//!
//! Convection is differenced one-sided *against* the outward characteristic
//! flow `dy/ds = y/2` with a three-point second-order stencil; on a symmetric
//! grid the stencil always stays inside the domain, so no boundary condition
//! is imposed beyond it.  Boundary rows carry no diffusion.  In two
//! dimensions the implicit factor is applied in alternating directions.

use std::sync::Arc;

use crate::profile::ModelParams;
use crate::solver::SolverError;
use crate::spectral::WeightedGrid;

/// Prefactored Thomas solve for `I - ds·D2` with identity boundary rows.
#[derive(Debug, Clone)]
pub(crate) struct Tridiag {
    n: usize,
    upper: Vec<f64>,
    inv_diag: Vec<f64>,
    lower: f64,
}

impl Tridiag {
    fn new(n: usize, mu: f64) -> Self {
        // row 0 and row n-1 are identity; interior rows (-mu, 1+2mu, -mu)
        let mut upper = vec![0.0; n];
        let mut inv_diag = vec![1.0; n];
        let mut prev_upper = 0.0;
        for i in 1..n - 1 {
            let denom = (1.0 + 2.0 * mu) - (-mu) * prev_upper;
            let u = -mu / denom;
            upper[i] = u;
            inv_diag[i] = 1.0 / denom;
            prev_upper = u;
        }
        // last row: identity, but the elimination still sees the lower entry 0
        Self {
            n,
            upper,
            inv_diag,
            lower: -mu,
        }
    }

    /// Solve in place; `d` holds the right-hand side on entry and the
    /// solution on exit.
    fn solve(&self, d: &mut [f64]) {
        debug_assert_eq!(d.len(), self.n);
        for i in 1..self.n - 1 {
            d[i] = (d[i] - self.lower * d[i - 1]) * self.inv_diag[i];
        }
        // identity last row: d[n-1] stays
        for i in (1..self.n - 1).rev() {
            d[i] -= self.upper[i] * d[i + 1];
        }
    }
}

/// Exponent dispatch so the hot loops avoid `powf` for the common integer
/// exponents.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PowKind {
    Two,
    Three,
    Five,
    General(f64),
}

impl PowKind {
    fn of(p: f64) -> Self {
        if p == 2.0 {
            Self::Two
        } else if p == 3.0 {
            Self::Three
        } else if p == 5.0 {
            Self::Five
        } else {
            Self::General(p)
        }
    }

    /// `x^{p-1}` for `x > 0`.
    #[inline]
    fn pow_pm1(&self, x: f64) -> f64 {
        match self {
            Self::Two => x,
            Self::Three => x * x,
            Self::Five => (x * x) * (x * x),
            Self::General(p) => x.powf(p - 1.0),
        }
    }
}

/// Workspace and factored operators for one (grid, ds) pair.
pub(crate) struct StepContext {
    params: ModelParams,
    grid: Arc<WeightedGrid>,
    ds: f64,
    tri: Vec<Tridiag>,
    pow: PowKind,
    rhs: Vec<f64>,
    col: Vec<f64>,
}

impl StepContext {
    pub fn new(
        params: ModelParams,
        grid: Arc<WeightedGrid>,
        ds: f64,
    ) -> Result<Self, SolverError> {
        if !(ds > 0.0) || !ds.is_finite() {
            return Err(SolverError::BadConfig(format!(
                "time step must be positive, got {ds}"
            )));
        }
        // explicit centered/upwind convection against implicit unit diffusion
        // needs ds·a² ≤ 2 with a = max |y|/2; keep a safety factor
        let a_max = (0..grid.dim())
            .map(|i| grid.axis(i).extent() / 2.0)
            .fold(0.0f64, f64::max);
        if ds * a_max * a_max > 1.8 {
            return Err(SolverError::BadConfig(format!(
                "time step {ds} unstable for drift speed {a_max}: require ds·a² ≤ 1.8"
            )));
        }
        let tri = (0..grid.dim())
            .map(|i| {
                let h = grid.axis(i).spacing();
                Tridiag::new(grid.axis(i).len(), ds / (h * h))
            })
            .collect();
        let n = grid.len();
        let col = vec![0.0; grid.axis(0).len()];
        Ok(Self {
            params,
            grid: grid.clone(),
            ds,
            tri,
            pow: PowKind::of(params.p()),
            rhs: vec![0.0; n],
            col,
        })
    }

    /// One step of the full similarity flow
    /// `w_s = Δw - (y/2)·∇w - w/(p-1) + |w|^{p-1}w`.
    pub fn step_plain(&mut self, w: &mut [f64]) {
        let ds = self.ds;
        match self.grid.dim() {
            1 => {
                let nodes = self.grid.axis(0).nodes();
                let h = self.grid.axis(0).spacing();
                let n = nodes.len();
                for i in 0..n {
                    let conv = -0.5 * nodes[i] * upwind(w, i, n, h, nodes[i]);
                    self.rhs[i] = w[i] + ds * (conv + self.params.reaction(w[i]));
                }
                self.tri[0].solve(&mut self.rhs);
                w.copy_from_slice(&self.rhs);
            }
            2 => {
                self.explicit_2d(w, |params, _idx, wi| params.reaction(wi));
                self.implicit_2d(w);
            }
            _ => unreachable!(),
        }
    }

    /// One step of the linearized flow around a frozen snapshot `w_ref` of
    /// the reference:
    /// `v_s = (L + γ)v + B(v)`, `γ = p(w_ref^{p-1} - κ^{p-1})`,
    /// `B(v) = |w_ref+v|^{p-1}(w_ref+v) - w_ref^p - p·w_ref^{p-1} v`.
    pub fn step_linearized(&mut self, v: &mut [f64], w_ref: &[f64]) {
        let ds = self.ds;
        let kappa_pm1 = self.params.kappa_pow_pm1();
        let p = self.params.p();
        match self.grid.dim() {
            1 => {
                let nodes = self.grid.axis(0).nodes();
                let h = self.grid.axis(0).spacing();
                let n = nodes.len();
                for i in 0..n {
                    let conv = -0.5 * nodes[i] * upwind(v, i, n, h, nodes[i]);
                    let gamma = p * (self.pow.pow_pm1(w_ref[i].abs()) - kappa_pm1);
                    let linear = v[i] + gamma * v[i];
                    let b = nonlinear_remainder(&self.params, self.pow, w_ref[i], v[i]);
                    self.rhs[i] = v[i] + ds * (conv + linear + b);
                }
                self.tri[0].solve(&mut self.rhs);
                v.copy_from_slice(&self.rhs);
            }
            2 => {
                let pow = self.pow;
                let params = self.params;
                self.explicit_2d(v, move |_, idx, vi| {
                    let gamma = p * (pow.pow_pm1(w_ref[idx].abs()) - kappa_pm1);
                    vi + gamma * vi + nonlinear_remainder(&params, pow, w_ref[idx], vi)
                });
                self.implicit_2d(v);
            }
            _ => unreachable!(),
        }
    }

    fn explicit_2d(
        &mut self,
        w: &[f64],
        zero_order: impl Fn(&ModelParams, usize, f64) -> f64,
    ) {
        let ds = self.ds;
        let n0 = self.grid.axis(0).len();
        let n1 = self.grid.axis(1).len();
        let x0 = self.grid.axis(0).nodes();
        let x1 = self.grid.axis(1).nodes();
        let h0 = self.grid.axis(0).spacing();
        let h1 = self.grid.axis(1).spacing();
        for i in 0..n0 {
            let base = i * n1;
            for j in 0..n1 {
                let idx = base + j;
                let row = &w[base..base + n1];
                let d_axis1 = upwind(row, j, n1, h1, x1[j]);
                let d_axis0 = upwind_strided(w, i, n0, n1, j, h0, x0[i]);
                let conv = -0.5 * (x0[i] * d_axis0 + x1[j] * d_axis1);
                self.rhs[idx] = w[idx] + ds * (conv + zero_order(&self.params, idx, w[idx]));
            }
        }
    }

    /// Factored implicit solve `(I - ds·Dxx)(I - ds·Dyy)` applied to
    /// `self.rhs`, writing the result into `w`.
    fn implicit_2d(&mut self, w: &mut [f64]) {
        let n0 = self.grid.axis(0).len();
        let n1 = self.grid.axis(1).len();
        for i in 0..n0 {
            self.tri[1].solve(&mut self.rhs[i * n1..(i + 1) * n1]);
        }
        for j in 0..n1 {
            for i in 0..n0 {
                self.col[i] = self.rhs[i * n1 + j];
            }
            self.tri[0].solve(&mut self.col);
            for i in 0..n0 {
                w[i * n1 + j] = self.col[i];
            }
        }
    }
}

/// Second-order one-sided first derivative, differenced against the flow
/// `dy/ds = y/2` (stencil on the inflow side of the node).
#[inline]
fn upwind(v: &[f64], i: usize, n: usize, h: f64, y: f64) -> f64 {
    if y > 0.0 {
        debug_assert!(i >= 2);
        (3.0 * v[i] - 4.0 * v[i - 1] + v[i - 2]) / (2.0 * h)
    } else if y < 0.0 {
        debug_assert!(i + 2 < n);
        (-3.0 * v[i] + 4.0 * v[i + 1] - v[i + 2]) / (2.0 * h)
    } else {
        // the drift vanishes at the origin; value is irrelevant
        0.0
    }
}

#[inline]
fn upwind_strided(v: &[f64], i: usize, n0: usize, stride: usize, offset: usize, h: f64, y: f64) -> f64 {
    let at = |k: usize| v[k * stride + offset];
    if y > 0.0 {
        debug_assert!(i >= 2);
        (3.0 * at(i) - 4.0 * at(i - 1) + at(i - 2)) / (2.0 * h)
    } else if y < 0.0 {
        debug_assert!(i + 2 < n0);
        (-3.0 * at(i) + 4.0 * at(i + 1) - at(i + 2)) / (2.0 * h)
    } else {
        0.0
    }
}

/// Quadratic-and-higher remainder of the nonlinearity around `w_ref`,
/// evaluated cancellation-free: for `|v| ≪ |w_ref|` the direct difference
/// loses all significant digits, so a two-term Taylor expansion takes over.
#[inline]
pub(crate) fn nonlinear_remainder(params: &ModelParams, pow: PowKind, w_ref: f64, v: f64) -> f64 {
    let p = params.p();
    if w_ref > 0.0 && v.abs() <= 1e-4 * w_ref {
        let wp3 = pow.pow_pm1(w_ref) / (w_ref * w_ref); // w_ref^{p-3}
        0.5 * p * (p - 1.0) * wp3 * v * v * (w_ref + (p - 2.0) * v / 3.0)
    } else {
        params.nonlinearity(w_ref + v)
            - params.nonlinearity(w_ref)
            - p * pow.pow_pm1(w_ref.abs()) * v
    }
}

/// Diagnostic right-hand side `Δw - (y/2)·∇w - w/(p-1) + |w|^{p-1}w` with the
/// same spatial discretization as the stepper (centered diffusion inside,
/// one-sided at the boundary, upwind convection).
pub fn evaluate_rhs(params: &ModelParams, grid: &WeightedGrid, w: &[f64]) -> Result<Vec<f64>, SolverError> {
    if w.len() != grid.len() {
        return Err(SolverError::BadConfig(format!(
            "field has {} values but grid has {} nodes",
            w.len(),
            grid.len()
        )));
    }
    if let Some(node) = w.iter().position(|x| !x.is_finite()) {
        return Err(SolverError::NonFinite { s: f64::NAN, node });
    }
    let mut out = vec![0.0; w.len()];
    match grid.dim() {
        1 => {
            let nodes = grid.axis(0).nodes();
            let h = grid.axis(0).spacing();
            let n = nodes.len();
            for i in 0..n {
                let d2 = second_diff(w, i, n, h);
                let conv = -0.5 * nodes[i] * upwind(w, i, n, h, nodes[i]);
                out[i] = d2 + conv + params.reaction(w[i]);
            }
        }
        2 => {
            let n0 = grid.axis(0).len();
            let n1 = grid.axis(1).len();
            let x0 = grid.axis(0).nodes();
            let x1 = grid.axis(1).nodes();
            let h0 = grid.axis(0).spacing();
            let h1 = grid.axis(1).spacing();
            for i in 0..n0 {
                for j in 0..n1 {
                    let row = &w[i * n1..(i + 1) * n1];
                    let col: Vec<f64> = (0..n0).map(|k| w[k * n1 + j]).collect();
                    let d2 = second_diff(row, j, n1, h1) + second_diff(&col, i, n0, h0);
                    let conv = -0.5
                        * (x0[i] * upwind(&col, i, n0, h0, x0[i])
                            + x1[j] * upwind(row, j, n1, h1, x1[j]));
                    out[i * n1 + j] = d2 + conv + params.reaction(w[i * n1 + j]);
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(out)
}

#[inline]
fn second_diff(v: &[f64], i: usize, n: usize, h: f64) -> f64 {
    let hh = h * h;
    if i == 0 {
        (v[0] - 2.0 * v[1] + v[2]) / hh
    } else if i == n - 1 {
        (v[n - 1] - 2.0 * v[n - 2] + v[n - 3]) / hh
    } else {
        (v[i + 1] - 2.0 * v[i] + v[i - 1]) / hh
    }
}
