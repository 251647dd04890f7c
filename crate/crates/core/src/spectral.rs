//! Weighted grids and the polynomial eigenbasis of `L = Δ - (y/2)·∇ + 1`.
//!
//! The basis is the tensor family `φ_β(y) = Π_i φ_{β_i}(y_i)` built from the
//! one-dimensional polynomials
//!
//! ```text
//! φ_k(ξ) = Σ_{i=0}^{⌊k/2⌋} k! / (i! (k-2i)!) · (-1)^i ξ^{k-2i},
//! ```
//!
//! so `φ_0 = 1`, `φ_1 = ξ`, `φ_2 = ξ² - 2`, `φ_3 = ξ³ - 6ξ`.  They are
//! orthogonal for the Gaussian weight `ρ_1(ξ) = (4π)^{-1/2} e^{-ξ²/4}` with
//! `∫ φ_k φ_n ρ_1 = 2^k k! δ_{k,n}`, and `L φ_β = (1 - |β|/2) φ_β`.
//!
//! Quadrature is the trapezoidal rule against `ρ` on a uniform symmetric
//! grid; the Gaussian weight makes the domain truncation error negligible at
//! the default extents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("multi-index dimension {index_dim} does not match grid dimension {grid_dim}")]
    DimensionMismatch { index_dim: usize, grid_dim: usize },
    #[error("matrix input is not symmetric at ({i},{j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Multi-index `β ∈ N^dim` labelling the eigenfunction `φ_β`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Result<Self, SpectralError> {
        if entries.is_empty() {
            return Err(SpectralError::InvalidArgument(
                "multi-index needs at least one entry".into(),
            ));
        }
        Ok(Self(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total degree `|β| = Σ β_i`.
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    /// Eigenvalue of `L` on `φ_β`.
    pub fn eigenvalue(&self) -> f64 {
        1.0 - f64::from(self.degree()) / 2.0
    }
}

/// All multi-indices of the given dimension and total degree, in ascending
/// lexicographic order (first entry varies slowest).
pub fn indices_of_degree(dim: usize, degree: u32) -> Vec<MultiIndex> {
    fn rec(dim: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if dim == 1 {
            prefix.push(degree);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for head in 0..=degree {
            prefix.push(head);
            rec(dim - 1, degree - head, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree, &mut Vec::new(), &mut out);
    out
}

/// One-dimensional eigenpolynomial `φ_k(ξ)`.
pub fn phi_1d(k: u32, xi: f64) -> f64 {
    let kf = factorial(k);
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut i = 0u32;
    while 2 * i <= k {
        let coeff = kf / (factorial(i) * factorial(k - 2 * i));
        sum += sign * coeff * xi.powi((k - 2 * i) as i32);
        sign = -sign;
        i += 1;
    }
    sum
}

/// Tensor eigenfunction `φ_β(y)`.
pub fn phi_value(beta: &MultiIndex, y: &[f64]) -> f64 {
    beta.0
        .iter()
        .zip(y)
        .map(|(&k, &yi)| phi_1d(k, yi))
        .product()
}

/// Exact Gaussian norm `‖φ_β‖²_ρ = Π 2^{β_i} β_i!`.
pub fn phi_norm_sq(beta: &MultiIndex) -> f64 {
    beta.0
        .iter()
        .map(|&k| 2f64.powi(k as i32) * factorial(k))
        .product()
}

fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

/// Gaussian density `ρ_1(ξ) = (4π)^{-1/2} e^{-ξ²/4}` (unit mass).
pub fn rho_1d(xi: f64) -> f64 {
    (-xi * xi / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Axis {
    nodes: Vec<f64>,
    h: f64,
    extent: f64,
}

impl Axis {
    pub(crate) fn new(extent: f64, n: usize) -> Result<Self, SpectralError> {
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(SpectralError::InvalidGrid(format!(
                "extent must be positive and finite, got {extent}"
            )));
        }
        if n < 3 || n % 2 == 0 {
            return Err(SpectralError::InvalidGrid(format!(
                "node count must be odd and at least 3 so the grid is symmetric and contains 0, got {n}"
            )));
        }
        let c = (n - 1) / 2;
        let h = extent / c as f64;
        // (i - c)·h is exactly antisymmetric in floating point, and node c is 0.
        let nodes = (0..n).map(|i| (i as f64 - c as f64) * h).collect();
        Ok(Self { nodes, h, extent })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut w = vec![self.h; n];
        w[0] = self.h / 2.0;
        w[n - 1] = self.h / 2.0;
        w
    }
}

/// Uniform symmetric tensor grid with per-axis Gaussian quadrature tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedGrid {
    axes: Vec<Axis>,
    /// trapezoid × ρ_1 weights per axis
    weighted: Vec<Vec<f64>>,
    /// plain trapezoid weights per axis (for un-weighted integrals)
    plain: Vec<Vec<f64>>,
}

impl WeightedGrid {
    pub fn new_1d(extent: f64, nodes: usize) -> Result<Self, SpectralError> {
        Self::from_axes(vec![Axis::new(extent, nodes)?])
    }

    /// Square grid `[-extent, extent]²` with `nodes` points per axis.
    pub fn new_2d(extent: f64, nodes: usize) -> Result<Self, SpectralError> {
        Self::from_axes(vec![Axis::new(extent, nodes)?, Axis::new(extent, nodes)?])
    }

    /// Default laboratory grids: `[-40, 40]` with 2001 nodes in one
    /// dimension, `[-20, 20]²` with 401 nodes per axis in two.
    pub fn default_for_dim(dim: usize) -> Result<Self, SpectralError> {
        match dim {
            1 => Self::new_1d(40.0, 2001),
            2 => Self::new_2d(20.0, 401),
            d => Err(SpectralError::InvalidGrid(format!(
                "only dimensions 1 and 2 are supported, got {d}"
            ))),
        }
    }

    pub(crate) fn from_axes(axes: Vec<Axis>) -> Result<Self, SpectralError> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(SpectralError::InvalidGrid(format!(
                "only dimensions 1 and 2 are supported, got {}",
                axes.len()
            )));
        }
        let weighted = axes
            .iter()
            .map(|ax| {
                ax.trapezoid_weights()
                    .iter()
                    .zip(ax.nodes())
                    .map(|(&w, &x)| w * rho_1d(x))
                    .collect()
            })
            .collect();
        let plain = axes.iter().map(|ax| ax.trapezoid_weights()).collect();
        Ok(Self {
            axes,
            weighted,
            plain,
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, i: usize) -> &Axis {
        &self.axes[i]
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn layout_eq(&self, other: &WeightedGrid) -> bool {
        self.axes.len() == other.axes.len()
            && self
                .axes
                .iter()
                .zip(&other.axes)
                .all(|(a, b)| a.len() == b.len() && a.extent == b.extent)
    }

    /// Row-major coordinates of a flat index (axis 0 slowest).
    pub fn coords(&self, idx: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0].nodes[idx]],
            2 => {
                let n1 = self.axes[1].len();
                vec![
                    self.axes[0].nodes[idx / n1],
                    self.axes[1].nodes[idx % n1],
                ]
            }
            _ => unreachable!(),
        }
    }

    pub fn for_each_node(&self, mut f: impl FnMut(usize, &[f64])) {
        match self.axes.len() {
            1 => {
                for (i, &x) in self.axes[0].nodes.iter().enumerate() {
                    f(i, &[x]);
                }
            }
            2 => {
                let n1 = self.axes[1].len();
                for (i, &x0) in self.axes[0].nodes.iter().enumerate() {
                    for (j, &x1) in self.axes[1].nodes.iter().enumerate() {
                        f(i * n1 + j, &[x0, x1]);
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    /// |y| at a flat index.
    pub fn radius(&self, idx: usize) -> f64 {
        let y = self.coords(idx);
        y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Gaussian quadrature weight (trapezoid × ρ) at a flat index.
    pub fn weight_rho(&self, idx: usize) -> f64 {
        match self.axes.len() {
            1 => self.weighted[0][idx],
            2 => {
                let n1 = self.axes[1].len();
                self.weighted[0][idx / n1] * self.weighted[1][idx % n1]
            }
            _ => unreachable!(),
        }
    }

    /// Plain trapezoid weight at a flat index.
    pub fn weight_plain(&self, idx: usize) -> f64 {
        match self.axes.len() {
            1 => self.plain[0][idx],
            2 => {
                let n1 = self.axes[1].len();
                self.plain[0][idx / n1] * self.plain[1][idx % n1]
            }
            _ => unreachable!(),
        }
    }

    /// Total quadrature mass `∫ ρ ≈ 1`.
    pub fn rho_mass(&self) -> f64 {
        self.weighted
            .iter()
            .map(|w| w.iter().sum::<f64>())
            .product()
    }

    pub(crate) fn weighted_axis(&self, i: usize) -> &[f64] {
        &self.weighted[i]
    }

    pub(crate) fn plain_axis(&self, i: usize) -> &[f64] {
        &self.plain[i]
    }
}

/// `∫ a b ρ` by grid quadrature, fixed summation order.
pub fn inner_rho(grid: &WeightedGrid, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), grid.len());
    debug_assert_eq!(b.len(), grid.len());
    match grid.dim() {
        1 => {
            let w = grid.weighted_axis(0);
            let mut acc = 0.0;
            for i in 0..w.len() {
                acc += w[i] * a[i] * b[i];
            }
            acc
        }
        2 => {
            let w0 = grid.weighted_axis(0);
            let w1 = grid.weighted_axis(1);
            let n1 = w1.len();
            let mut acc = 0.0;
            for i in 0..w0.len() {
                let mut row = 0.0;
                let base = i * n1;
                for j in 0..n1 {
                    row += w1[j] * a[base + j] * b[base + j];
                }
                acc += w0[i] * row;
            }
            acc
        }
        _ => unreachable!(),
    }
}

/// Evaluate `φ_β` on every node of the grid.
pub fn phi_field(grid: &WeightedGrid, beta: &MultiIndex) -> Result<Vec<f64>, SpectralError> {
    if beta.dim() != grid.dim() {
        return Err(SpectralError::DimensionMismatch {
            index_dim: beta.dim(),
            grid_dim: grid.dim(),
        });
    }
    let per_axis: Vec<Vec<f64>> = beta
        .entries()
        .iter()
        .enumerate()
        .map(|(ax, &k)| grid.axis(ax).nodes().iter().map(|&x| phi_1d(k, x)).collect())
        .collect();
    let mut out = vec![0.0; grid.len()];
    match grid.dim() {
        1 => out.copy_from_slice(&per_axis[0]),
        2 => {
            let n1 = grid.axis(1).len();
            for i in 0..grid.axis(0).len() {
                for j in 0..n1 {
                    out[i * n1 + j] = per_axis[0][i] * per_axis[1][j];
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(out)
}

/// Projection of a field onto the degree-`m` eigenspace: the coefficients of
/// `P_m f = Σ_{|β|=m} ⟨f, φ_β⟩_ρ / ‖φ_β‖²_ρ · φ_β` keyed by multi-index, in
/// lexicographic order.
#[derive(Debug, Clone)]
pub struct ModeProjection {
    degree: u32,
    terms: Vec<(MultiIndex, f64)>,
}

impl ModeProjection {
    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn terms(&self) -> &[(MultiIndex, f64)] {
        &self.terms
    }

    pub fn coefficient(&self, beta: &MultiIndex) -> Option<f64> {
        self.terms
            .iter()
            .find(|(b, _)| b == beta)
            .map(|&(_, c)| c)
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(beta, c)| c * phi_value(beta, y))
            .sum()
    }

    /// `‖P_m(v)‖_ρ`, using the exact eigenfunction norms.
    pub fn norm_rho(&self) -> f64 {
        self.terms
            .iter()
            .map(|(beta, c)| c * c * phi_norm_sq(beta))
            .sum::<f64>()
            .sqrt()
    }

    /// Reconstruct the projected polynomial on a grid.
    pub fn to_field(&self, grid: &WeightedGrid) -> Result<Vec<f64>, SpectralError> {
        let mut out = vec![0.0; grid.len()];
        for (beta, c) in &self.terms {
            let phi = phi_field(grid, beta)?;
            for (o, p) in out.iter_mut().zip(&phi) {
                *o += c * p;
            }
        }
        Ok(out)
    }
}

/// Project a field onto the eigenspace of total degree `m`.  Normalization
/// uses the exact norms `‖φ_β‖² = Π 2^{β_i} β_i!`.
pub fn project_mode(
    grid: &WeightedGrid,
    values: &[f64],
    m: u32,
) -> Result<ModeProjection, SpectralError> {
    if values.len() != grid.len() {
        return Err(SpectralError::GridMismatch);
    }
    let mut terms = Vec::new();
    for beta in indices_of_degree(grid.dim(), m) {
        let phi = phi_field(grid, &beta)?;
        let c = inner_rho(grid, values, &phi) / phi_norm_sq(&beta);
        terms.push((beta, c));
    }
    Ok(ModeProjection { degree: m, terms })
}

/// Symmetric `N×N` matrix with a validated constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dim: 1,
            data: vec![value],
        }
    }

    /// Multiple of the identity.
    pub fn isotropic(dim: usize, value: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, value);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SpectralError> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(SpectralError::InvalidArgument(
                "matrix rows must form a square array".into(),
            ));
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if rows[i][j] != rows[j][i] {
                    return Err(SpectralError::NotSymmetric { i, j });
                }
            }
        }
        Ok(Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i,j)` and `(j,i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn minus(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// `½ yᵀ M y`.
    pub fn quadratic_form_half(&self, y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += self.get(i, j) * y[i] * y[j];
            }
        }
        acc / 2.0
    }
}

/// Null-mode matrix of a field: `∫ f(y) M(y) ρ(y) dy` with
/// `M_ij(y) = ¼ y_i y_j - ½ δ_ij`.  For `f = ½ yᵀA y - tr A` this recovers
/// `A` exactly.
pub fn project_quadratic(
    grid: &WeightedGrid,
    values: &[f64],
) -> Result<SymmetricMatrix, SpectralError> {
    if values.len() != grid.len() {
        return Err(SpectralError::GridMismatch);
    }
    let dim = grid.dim();
    let mut m = SymmetricMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let mut weight_fn = vec![0.0; grid.len()];
            grid.for_each_node(|idx, y| {
                let delta = if i == j { 0.5 } else { 0.0 };
                weight_fn[idx] = 0.25 * y[i] * y[j] - delta;
            });
            m.set(i, j, inner_rho(grid, values, &weight_fn));
        }
    }
    Ok(m)
}

/// Centered finite-difference application of `L = Δ - (y/2)·∇ + 1`
/// (one-sided at the boundary).  Diagnostic counterpart of the eigenvalue
/// relation `L φ_β = (1 - |β|/2) φ_β`.
pub fn apply_generator_fd(grid: &WeightedGrid, values: &[f64]) -> Result<Vec<f64>, SpectralError> {
    if values.len() != grid.len() {
        return Err(SpectralError::GridMismatch);
    }
    let mut out = values.to_vec(); // identity part
    match grid.dim() {
        1 => {
            let nodes = grid.axis(0).nodes();
            let h = grid.axis(0).spacing();
            let n = nodes.len();
            for i in 0..n {
                let (d1, d2) = stencil_1d(values, i, n, h);
                out[i] += d2 - 0.5 * nodes[i] * d1;
            }
        }
        2 => {
            let n0 = grid.axis(0).len();
            let n1 = grid.axis(1).len();
            let h0 = grid.axis(0).spacing();
            let h1 = grid.axis(1).spacing();
            let x0 = grid.axis(0).nodes();
            let x1 = grid.axis(1).nodes();
            for i in 0..n0 {
                for j in 0..n1 {
                    let row: Vec<f64> = (0..n0).map(|k| values[k * n1 + j]).collect();
                    let (d1a, d2a) = stencil_1d(&row, i, n0, h0);
                    let col = &values[i * n1..(i + 1) * n1];
                    let (d1b, d2b) = stencil_1d(col, j, n1, h1);
                    out[i * n1 + j] += d2a + d2b - 0.5 * (x0[i] * d1a + x1[j] * d1b);
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(out)
}

fn stencil_1d(v: &[f64], i: usize, n: usize, h: f64) -> (f64, f64) {
    if i == 0 {
        let d1 = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
        let d2 = (v[0] - 2.0 * v[1] + v[2]) / (h * h);
        (d1, d2)
    } else if i == n - 1 {
        let d1 = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
        let d2 = (v[n - 1] - 2.0 * v[n - 2] + v[n - 3]) / (h * h);
        (d1, d2)
    } else {
        let d1 = (v[i + 1] - v[i - 1]) / (2.0 * h);
        let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
        (d1, d2)
    }
}
