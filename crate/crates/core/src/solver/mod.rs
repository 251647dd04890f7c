//! Time evolution in similarity variables.
//!
//! The full flow advanced here is
//!
//! ```text
//! w_s = Δw - (y/2)·∇w - w/(p-1) + |w|^{p-1}w,
//! ```
//!
//! discretized on a fixed symmetric grid with implicit diffusion and
//! explicit upwinded convection (see [`stepper`]).  [`simulate`] drives a
//! state from `s0` to a target time, storing snapshots at a fixed stride and
//! stopping early — with an event attached — if the sup norm passes a
//! blow-up guard or stops being finite.
//!
//! [`generate_reference`] produces the tuned trajectory that sits on the
//! boundary between blow-up and decay for as long as the arithmetic allows;
//! [`dilation_shift`] reinterprets such a trajectory under a parabolic
//! dilation of the underlying solution, which in these variables is a pure
//! time translation `s ↦ s + 2·log λ`.

mod reference;
mod stepper;
mod store;

pub use reference::{dilation_shift, generate_reference, ReferenceTrajectory, StageRecord};
pub use stepper::evaluate_rhs;
pub use store::{load_trajectory, save_trajectory};

pub(crate) use stepper::StepContext;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, FieldState};
use crate::modes::ShrinkingSetSpec;
use crate::profile::{ModelParams, ProfileError};
use crate::spectral::{SymmetricMatrix, WeightedGrid};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("field stopped being finite at s = {s} (node {node})")]
    NonFinite { s: f64, node: usize },
    #[error("trajectory covers [{first}, {last}] but s = {s} was requested")]
    OutOfRange { s: f64, first: f64, last: f64 },
    #[error("sign bracket failed while tuning {what}: no sign change over [{lo}, {hi}]")]
    BracketFailure { what: &'static str, lo: f64, hi: f64 },
    #[error("reference tuning stalled: {0}")]
    Stalled(String),
    #[error("i/o failure on trajectory store: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory file is not usable: {0}")]
    BadStore(String),
}

/// Step size and storage cadence for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Time step in `s`.
    pub ds: f64,
    /// Spacing between stored snapshots; must be an integer multiple of `ds`.
    pub store_stride: f64,
    /// A run aborts with [`FlowEvent::BlowUp`] once `‖w‖∞ > guard · κ`.
    pub blowup_guard: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            ds: 1e-3,
            store_stride: 0.1,
            blowup_guard: 1e3,
        }
    }
}

impl SolverConfig {
    /// Number of steps between stored frames, after checking divisibility.
    pub fn steps_per_frame(&self) -> Result<usize, SolverError> {
        if !(self.ds > 0.0 && self.ds.is_finite()) {
            return Err(SolverError::BadConfig(format!(
                "time step must be positive, got {}",
                self.ds
            )));
        }
        if !(self.blowup_guard > 1.0) {
            return Err(SolverError::BadConfig(format!(
                "blow-up guard must exceed 1, got {}",
                self.blowup_guard
            )));
        }
        let ratio = self.store_stride / self.ds;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-6 {
            return Err(SolverError::BadConfig(format!(
                "store stride {} is not a multiple of the time step {}",
                self.store_stride, self.ds
            )));
        }
        Ok(k as usize)
    }
}

/// Recipes for the state a run starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialDataSpec {
    /// Full-flow data built on the decaying profile: a relative perturbation
    /// whose numerator is affine in `ξ = y/√s0` and whose denominator matches
    /// the profile's own parabolic scale,
    /// `w = f(ξ)·(1 + (d0 + d1·ξ)/(p-1 + (p-1)²|ξ|²/(4p)))`.
    ProfileFamily { d0: f64, d1: Vec<f64> },
    /// Linearized-flow data placed on the shrinking set's boundary scale:
    /// `v = (A/s0^{2+η}·(d0 + d1·y) + ½ yᵀĉy - 2 tr ĉ)·χ(2y, s0)` with
    /// `ĉ = target/s0² + A² d2/s0^{2+η}`.  Unit-sized `d` parameters span the
    /// admissible box.
    ShrinkingFamily {
        d0: f64,
        d1: Vec<f64>,
        d2: SymmetricMatrix,
        set: ShrinkingSetSpec,
    },
    /// Verbatim nodal values.
    Custom { label: String, values: Vec<f64> },
}

/// Why a run stopped before its target time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FlowEvent {
    /// Sup norm exceeded `guard·κ`; the solution is committed to blow-up.
    BlowUp { s: f64, sup: f64 },
    /// A non-finite value appeared (overflow past the guard window).
    NonFinite { s: f64 },
}

/// One stored snapshot.
#[derive(Debug, Clone)]
pub struct Frame {
    pub s: f64,
    pub values: Vec<f64>,
}

/// A stored run: snapshots at a fixed stride, plus the termination event if
/// the run ended early.
#[derive(Debug, Clone)]
pub struct Trajectory {
    params: ModelParams,
    grid: Arc<WeightedGrid>,
    stride: f64,
    origin: String,
    frames: Vec<Frame>,
    event: Option<FlowEvent>,
}

impl Trajectory {
    pub(crate) fn new_empty(
        params: ModelParams,
        grid: Arc<WeightedGrid>,
        stride: f64,
        origin: String,
    ) -> Self {
        Self {
            params,
            grid,
            stride,
            origin,
            frames: Vec::new(),
            event: None,
        }
    }

    pub(crate) fn push_frame(&mut self, s: f64, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.grid.len());
        self.frames.push(Frame { s, values });
    }

    pub(crate) fn set_event(&mut self, event: FlowEvent) {
        self.event = Some(event);
    }

    pub(crate) fn truncate_after(&mut self, s: f64) {
        let keep = self
            .frames
            .iter()
            .take_while(|f| f.s <= s + 1e-9)
            .count();
        self.frames.truncate(keep);
    }

    /// Reassemble a trajectory from stored parts (used by the on-disk loader).
    pub(crate) fn from_parts(
        params: ModelParams,
        grid: Arc<WeightedGrid>,
        stride: f64,
        origin: String,
        frames: Vec<Frame>,
        event: Option<FlowEvent>,
    ) -> Self {
        Self {
            params,
            grid,
            stride,
            origin,
            frames,
            event,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &Arc<WeightedGrid> {
        &self.grid
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    /// Free-text description of where the data came from.
    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn event(&self) -> Option<FlowEvent> {
        self.event
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_s(&self) -> f64 {
        self.frames.first().map_or(f64::NAN, |f| f.s)
    }

    pub fn last_s(&self) -> f64 {
        self.frames.last().map_or(f64::NAN, |f| f.s)
    }

    /// Snapshot index whose time is closest to `s`.
    pub fn nearest_index(&self, s: f64) -> Result<usize, SolverError> {
        if self.frames.is_empty() {
            return Err(SolverError::BadStore("trajectory holds no frames".into()));
        }
        let first = self.first_s();
        let idx = ((s - first) / self.stride).round();
        let idx = idx.clamp(0.0, (self.frames.len() - 1) as f64) as usize;
        Ok(idx)
    }

    /// The stored snapshot nearest to `s` as a [`FieldState`].
    pub fn field(&self, index: usize) -> Result<FieldState, SolverError> {
        let frame = self
            .frames
            .get(index)
            .ok_or_else(|| SolverError::BadStore(format!("no frame {index}")))?;
        Ok(FieldState::new(
            self.grid.clone(),
            frame.values.clone(),
            frame.s,
        )?)
    }

    /// Cubic interpolation (uniform Catmull–Rom in time, per node) of the
    /// stored snapshots at an arbitrary time inside the stored span.
    pub fn sample_into(&self, s: f64, out: &mut [f64]) -> Result<(), SolverError> {
        let first = self.first_s();
        let last = self.last_s();
        if self.frames.len() < 2 || s < first - 1e-9 || s > last + 1e-9 {
            return Err(SolverError::OutOfRange { s, first, last });
        }
        debug_assert_eq!(out.len(), self.grid.len());
        let x = ((s - first) / self.stride).clamp(0.0, (self.frames.len() - 1) as f64);
        let k = (x.floor() as usize).min(self.frames.len() - 2);
        let t = x - k as f64;
        let f1 = &self.frames[k].values;
        let f2 = &self.frames[k + 1].values;
        let f0 = &self.frames[k.saturating_sub(1)].values;
        let f3 = &self.frames[(k + 2).min(self.frames.len() - 1)].values;
        for i in 0..out.len() {
            let (a, b, c, d) = (f0[i], f1[i], f2[i], f3[i]);
            out[i] = 0.5
                * (2.0 * b
                    + t * ((c - a)
                        + t * ((2.0 * a - 5.0 * b + 4.0 * c - d)
                            + t * (3.0 * (b - c) + d - a))));
        }
        Ok(())
    }

    /// Interpolated snapshot as a [`FieldState`].
    pub fn sample(&self, s: f64) -> Result<FieldState, SolverError> {
        let mut out = vec![0.0; self.grid.len()];
        self.sample_into(s, &mut out)?;
        Ok(FieldState::new(self.grid.clone(), out, s)?)
    }
}

/// Build the starting state for a run.  Profile-family data feeds the full
/// flow; shrinking-family data is a perturbation for the linearized flow.
pub fn make_initial(
    spec: &InitialDataSpec,
    params: &ModelParams,
    grid: &Arc<WeightedGrid>,
    s0: f64,
) -> Result<FieldState, SolverError> {
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(SolverError::BadConfig(format!(
            "initial time must be positive, got {s0}"
        )));
    }
    let dim = grid.dim();
    match spec {
        InitialDataSpec::ProfileFamily { d0, d1 } => {
            if d1.len() != dim {
                return Err(SolverError::BadConfig(format!(
                    "linear coefficient has {} entries for a {}-d grid",
                    d1.len(),
                    dim
                )));
            }
            let p = params.p();
            let denom_scale = (p - 1.0) * (p - 1.0) / (4.0 * p);
            let sqrt_s0 = s0.sqrt();
            let state = FieldState::from_fn(grid.clone(), s0, |y| {
                let mut xi_sq = 0.0;
                let mut lin = *d0;
                for (yi, di) in y.iter().zip(d1) {
                    let xi = yi / sqrt_s0;
                    xi_sq += xi * xi;
                    lin += di * xi;
                }
                params.base_profile(xi_sq) * (1.0 + lin / (p - 1.0 + denom_scale * xi_sq))
            })?;
            Ok(state)
        }
        InitialDataSpec::ShrinkingFamily { d0, d1, d2, set } => {
            if d1.len() != dim || d2.dim() != dim || set.dim() != dim {
                return Err(SolverError::BadConfig(format!(
                    "perturbation coefficients must match the grid dimension {dim}"
                )));
            }
            let boundary_scale = set.amplitude / s0.powf(2.0 + set.eta);
            let quad_scale = set.amplitude * boundary_scale;
            let mut hat = SymmetricMatrix::zeros(dim);
            for i in 0..dim {
                for j in i..dim {
                    hat.set(i, j, set.target.get(i, j) / (s0 * s0) + quad_scale * d2.get(i, j));
                }
            }
            let trace_term = 2.0 * hat.trace();
            let cutoff = set.cutoff.clone();
            let state = FieldState::from_fn(grid.clone(), s0, |y| {
                let mut lin = *d0;
                let mut r_sq = 0.0;
                for (yi, di) in y.iter().zip(d1) {
                    lin += di * yi;
                    r_sq += yi * yi;
                }
                let inner = boundary_scale * lin + hat.quadratic_form_half(y) - trace_term;
                inner * cutoff.value(2.0 * r_sq.sqrt(), s0)
            })?;
            Ok(state)
        }
        InitialDataSpec::Custom { values, .. } => {
            Ok(FieldState::new(grid.clone(), values.clone(), s0)?)
        }
    }
}

/// March the full similarity flow from `spec` at `s0` to `s_end`, storing
/// snapshots every `config.store_stride`.  Ends early with an event if the
/// blow-up guard trips or a value stops being finite; the frames collected up
/// to that point are kept.
pub fn simulate(
    params: &ModelParams,
    grid: &Arc<WeightedGrid>,
    config: &SolverConfig,
    spec: &InitialDataSpec,
    s0: f64,
    s_end: f64,
) -> Result<Trajectory, SolverError> {
    if matches!(spec, InitialDataSpec::ShrinkingFamily { .. }) {
        return Err(SolverError::BadConfig(
            "shrinking-family data is a perturbation for the linearized flow; \
             use the shooting module"
            .into(),
        ));
    }
    if !(s_end > s0) {
        return Err(SolverError::BadConfig(format!(
            "target time {s_end} does not exceed start time {s0}"
        )));
    }
    let steps_per = config.steps_per_frame()?;
    let initial = make_initial(spec, params, grid, s0)?;
    let origin = match spec {
        InitialDataSpec::ProfileFamily { d0, d1 } => {
            format!("profile family, d0 = {d0}, d1 = {d1:?}")
        }
        InitialDataSpec::Custom { label, .. } => format!("custom data: {label}"),
        InitialDataSpec::ShrinkingFamily { .. } => unreachable!(),
    };
    let mut ctx = StepContext::new(*params, grid.clone(), config.ds)?;
    let mut traj = Trajectory::new_empty(*params, grid.clone(), config.store_stride, origin);
    let mut w = initial.values().to_vec();
    traj.push_frame(s0, w.clone());

    let guard = config.blowup_guard * params.kappa();
    let frames_wanted = ((s_end - s0) / config.store_stride).ceil() as usize;
    'outer: for frame_idx in 1..=frames_wanted {
        for _ in 0..steps_per {
            ctx.step_plain(&mut w);
            let sup = w.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            let s_here = s0 + (frame_idx - 1) as f64 * config.store_stride;
            if !sup.is_finite() {
                traj.set_event(FlowEvent::NonFinite { s: s_here });
                break 'outer;
            }
            if sup > guard {
                traj.set_event(FlowEvent::BlowUp { s: s_here, sup });
                break 'outer;
            }
        }
        traj.push_frame(s0 + frame_idx as f64 * config.store_stride, w.clone());
    }
    Ok(traj)
}
