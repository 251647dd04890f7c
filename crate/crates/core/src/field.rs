//! A scalar field sampled on a weighted grid at one similarity time.

use std::sync::Arc;

use thiserror::Error;

use crate::spectral::WeightedGrid;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field has {values} values but grid has {nodes} nodes")]
    LengthMismatch { values: usize, nodes: usize },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("similarity time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("fields live on different grids")]
    GridMismatch,
}

/// Values of `w(·, s)` (or of a perturbation) on a [`WeightedGrid`].
#[derive(Debug, Clone)]
pub struct FieldState {
    grid: Arc<WeightedGrid>,
    values: Vec<f64>,
    s: f64,
}

impl FieldState {
    pub fn new(grid: Arc<WeightedGrid>, values: Vec<f64>, s: f64) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::LengthMismatch {
                values: values.len(),
                nodes: grid.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite { node });
        }
        if !(s > 0.0) {
            return Err(FieldError::NonPositiveTime(s));
        }
        Ok(Self { grid, values, s })
    }

    /// Constant field, useful for equilibria.
    pub fn constant(grid: Arc<WeightedGrid>, value: f64, s: f64) -> Result<Self, FieldError> {
        let n = grid.len();
        Self::new(grid, vec![value; n], s)
    }

    pub fn from_fn(
        grid: Arc<WeightedGrid>,
        s: f64,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Result<Self, FieldError> {
        let mut values = vec![0.0; grid.len()];
        grid.for_each_node(|idx, y| values[idx] = f(y));
        Self::new(grid, values, s)
    }

    pub fn grid(&self) -> &Arc<WeightedGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn same_grid(&self, other: &FieldState) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.layout_eq(&other.grid)
    }

    /// Gaussian-weighted inner product `∫ f g ρ dy` by grid quadrature.
    pub fn inner_rho(&self, other: &FieldState) -> Result<f64, FieldError> {
        if !self.same_grid(other) {
            return Err(FieldError::GridMismatch);
        }
        Ok(crate::spectral::inner_rho(
            &self.grid,
            &self.values,
            &other.values,
        ))
    }

    pub fn norm_rho(&self) -> f64 {
        crate::spectral::inner_rho(&self.grid, &self.values, &self.values).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_values() {
        let grid = Arc::new(WeightedGrid::new_1d(10.0, 101).unwrap());
        assert!(matches!(
            FieldState::new(grid.clone(), vec![0.0; 7], 1.0),
            Err(FieldError::LengthMismatch { .. })
        ));
        let mut vals = vec![0.0; 101];
        vals[13] = f64::NAN;
        assert!(matches!(
            FieldState::new(grid.clone(), vals, 1.0),
            Err(FieldError::NonFinite { node: 13 })
        ));
        assert!(matches!(
            FieldState::constant(grid, 1.0, -2.0),
            Err(FieldError::NonPositiveTime(_))
        ));
    }

    #[test]
    fn inner_product_requires_matching_grids() {
        let a = Arc::new(WeightedGrid::new_1d(10.0, 101).unwrap());
        let b = Arc::new(WeightedGrid::new_1d(10.0, 201).unwrap());
        let fa = FieldState::constant(a, 1.0, 1.0).unwrap();
        let fb = FieldState::constant(b, 1.0, 1.0).unwrap();
        assert!(matches!(fa.inner_rho(&fb), Err(FieldError::GridMismatch)));
    }
}
