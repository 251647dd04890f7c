//! Shooting for perturbations that never leave the shrinking set.
//!
//! The linearized flow around the reference has `1 + N` expanding directions
//! (the constant and coordinate modes) and `N(N+1)/2` marginal ones (the
//! quadratic modes, which must track `𝒜/s²`).  A trajectory stays in the
//! set only if its initial data is tuned in exactly those `1 + N + N(N+1)/2`
//! parameters; everything else is damped.  This module performs that tuning
//! the way the underlying topological argument says it must be possible:
//!
//! * each trial integrates the linearized flow and watches the membership
//!   margins at every stored stride; the first stride outside the set is the
//!   **exit**, attributed to the worst margin (ties break toward the lower
//!   component in the fixed order);
//! * in one dimension the three parameters nest — an outer bisection on
//!   `d0` reads the sign of the mean mode at exit, a middle one on `d1`
//!   reads the linear mode, an inner one on `d2` reads the tracked quadratic
//!   mode.  Each level evaluates its midpoint first and short-circuits when
//!   the exit is not attributed to its own component, so the symmetric case
//!   costs one simulation per outer iteration;
//! * in two dimensions (six parameters) the levels are replaced by
//!   coordinate-wise bisection sweeps repeated until no sweep improves the
//!   exit time, relying on the empirical monotonicity of each mode's exit
//!   sign in its own parameter; violations are reported, not hidden.
//!
//! Every simulation a search performs is logged in a history table that can
//! be dumped as CSV.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::field::FieldState;
use crate::modes::{
    check_membership, decompose, ComponentId, MembershipReport, ModeDecomposition, ModesError,
    ShrinkingSetSpec,
};
use crate::profile::ModelParams;
use crate::solver::{
    make_initial, InitialDataSpec, ReferenceTrajectory, SolverConfig, SolverError, StepContext,
    Trajectory,
};
use crate::spectral::SymmetricMatrix;

#[derive(Debug, Error)]
pub enum ShootingError {
    #[error("invalid search setup: {0}")]
    BadSetup(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Modes(#[from] ModesError),
    #[error(transparent)]
    Field(#[from] crate::field::FieldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("reference covers [{lo}, {hi}] but shooting needs [{need_lo}, {need_hi}]")]
    Coverage {
        lo: f64,
        hi: f64,
        need_lo: f64,
        need_hi: f64,
    },
}

/// Parameter ranges searched over: `d0`, the `N` entries of `d1`, and the
/// upper-triangle row-major entries of `d2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub d0: (f64, f64),
    pub d1: Vec<(f64, f64)>,
    pub d2: Vec<(f64, f64)>,
}

impl SearchBox {
    /// The admissible data family covers the unit-scale box `[-2, 2]` in
    /// every parameter.
    pub fn standard(dim: usize) -> Self {
        Self {
            d0: (-2.0, 2.0),
            d1: vec![(-2.0, 2.0); dim],
            d2: vec![(-2.0, 2.0); dim * (dim + 1) / 2],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<(), ShootingError> {
        let entries = dim * (dim + 1) / 2;
        if self.d1.len() != dim || self.d2.len() != entries {
            return Err(ShootingError::BadSetup(format!(
                "box has {} linear and {} quadratic ranges; dimension {} needs {} and {}",
                self.d1.len(),
                self.d2.len(),
                dim,
                dim,
                entries
            )));
        }
        for &(lo, hi) in std::iter::once(&self.d0).chain(&self.d1).chain(&self.d2) {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(ShootingError::BadSetup(format!(
                    "degenerate range ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    fn axis_count(&self) -> usize {
        1 + self.d1.len() + self.d2.len()
    }

    fn axis_range(&self, axis: usize) -> (f64, f64) {
        if axis == 0 {
            self.d0
        } else if axis <= self.d1.len() {
            self.d1[axis - 1]
        } else {
            self.d2[axis - 1 - self.d1.len()]
        }
    }

    fn center(&self) -> TrialPoint {
        let mid = |r: (f64, f64)| 0.5 * (r.0 + r.1);
        TrialPoint {
            d0: mid(self.d0),
            d1: self.d1.iter().map(|&r| mid(r)).collect(),
            d2: self.d2.iter().map(|&r| mid(r)).collect(),
        }
    }
}

/// One point of the data family.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPoint {
    pub d0: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl TrialPoint {
    /// Value along one flat axis in the `d0, d1…, d2…` ordering used by
    /// [`SearchBox`] and the sweep lattice.
    pub fn axis(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.d0
        } else if axis <= self.d1.len() {
            self.d1[axis - 1]
        } else {
            self.d2[axis - 1 - self.d1.len()]
        }
    }

    fn with_axis(&self, axis: usize, value: f64) -> Self {
        let mut out = self.clone();
        if axis == 0 {
            out.d0 = value;
        } else if axis <= self.d1.len() {
            out.d1[axis - 1] = value;
        } else {
            out.d2[axis - 1 - self.d1.len()] = value;
        }
        out
    }

    fn quad_matrix(&self, dim: usize) -> SymmetricMatrix {
        let mut m = SymmetricMatrix::zeros(dim);
        let mut slot = 0;
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, self.d2[slot]);
                slot += 1;
            }
        }
        m
    }

    /// Label the axis the way the CSV headers do.
    pub fn axis_label(dim: usize, axis: usize) -> String {
        if axis == 0 {
            "d0".into()
        } else if axis <= dim {
            format!("d1_{}", axis - 1)
        } else {
            let mut slot = axis - 1 - dim;
            for i in 0..dim {
                for j in i..dim {
                    if slot == 0 {
                        return format!("d2_{i}{j}");
                    }
                    slot -= 1;
                }
            }
            unreachable!()
        }
    }
}

/// Cadence and budget for a shooting run.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootConfig {
    /// Starting time for the perturbation.
    pub s0: f64,
    /// Survival horizon: a trial that stays inside until here counts as
    /// survived.
    pub horizon: f64,
    /// Strides to keep monitoring after an exit (margin growth check).
    pub post_exit_strides: usize,
    /// Time stepping for the linearized flow.
    pub solver: SolverConfig,
    /// Bisection budget per level / per coordinate pass.
    pub max_level_iters: u32,
}

impl ShootConfig {
    pub fn standard(s0: f64, horizon: f64) -> Self {
        Self {
            s0,
            horizon,
            post_exit_strides: 5,
            solver: SolverConfig::default(),
            max_level_iters: 60,
        }
    }
}

/// How much per-stride data a trial keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RecordKind {
    /// Membership reports only.
    Margins,
    /// Reports plus mode scalars (remainder fields dropped).
    Modes,
    /// Everything, including the perturbation field at every stride.
    Fields,
}

/// First stride outside the set.
#[derive(Debug, Clone)]
pub struct ExitEvent {
    pub s_exit: f64,
    /// Component with the worst margin at exit.
    pub component: ComponentId,
    /// Sign of the measured mode value behind that margin (0 for the
    /// remainder components, which carry no natural sign).
    pub sign: f64,
    pub report: MembershipReport,
    /// Worst margin at each of the following strides; infinite once the
    /// field stops being finite or trips the growth guard.
    pub post_margins: Vec<f64>,
    pub blew_up: bool,
}

#[derive(Debug, Clone)]
pub enum ShootOutcome {
    Survived,
    Exited(ExitEvent),
}

impl ShootOutcome {
    pub fn survived(&self) -> bool {
        matches!(self, Self::Survived)
    }

    pub fn exit(&self) -> Option<&ExitEvent> {
        match self {
            Self::Survived => None,
            Self::Exited(e) => Some(e),
        }
    }
}

/// One simulated trial.
#[derive(Debug, Clone)]
pub struct Trial {
    pub point: TrialPoint,
    pub outcome: ShootOutcome,
    /// Membership report at every stride until exit (inclusive).
    pub reports: Vec<MembershipReport>,
    /// Mode scalars per stride (empty unless recorded).
    pub modes: Vec<ModeDecomposition>,
    /// Perturbation frames (only under [`RecordKind::Fields`]).
    pub frames: Option<Trajectory>,
}

impl Trial {
    /// Time the trial stopped being inside (horizon if it survived).
    pub fn stop_s(&self, config: &ShootConfig) -> f64 {
        match &self.outcome {
            ShootOutcome::Survived => config.horizon,
            ShootOutcome::Exited(e) => e.s_exit,
        }
    }
}

/// One row of the search log.
#[derive(Debug, Clone)]
pub struct HistoryRow {
    pub level: usize,
    pub point: TrialPoint,
    pub stop_s: f64,
    pub survived: bool,
    pub component: Option<ComponentId>,
    pub sign: f64,
}

/// Search result: the best trial, the full evaluation log, and any
/// monotonicity warnings the coordinate sweeps hit.
#[derive(Debug)]
pub struct ShootReport {
    pub best: Trial,
    pub history: Vec<HistoryRow>,
    pub warnings: Vec<String>,
}

fn mode_value(dec: &ModeDecomposition, set: &ShrinkingSetSpec, id: ComponentId) -> f64 {
    match id {
        ComponentId::Mean => dec.mean,
        ComponentId::Linear(i) => dec.linear[i],
        ComponentId::Quad(i, j) => dec.quad.get(i, j) - set.target.get(i, j) / (dec.s * dec.s),
        ComponentId::Inner | ComponentId::Outer => 0.0,
    }
}

/// Integrate the linearized flow for one data point, watching membership at
/// every stride.  Stops at the first stride outside the set (then keeps
/// monitoring for `post_exit_strides`) or at the horizon.
pub fn exit_time(
    params: &ModelParams,
    reference: &ReferenceTrajectory,
    set: &ShrinkingSetSpec,
    config: &ShootConfig,
    point: &TrialPoint,
    record: RecordKind,
) -> Result<Trial, ShootingError> {
    let grid = reference.trajectory().grid().clone();
    let stride = config.solver.store_stride;
    let need_hi = config.horizon + config.post_exit_strides as f64 * stride;
    let (ref_lo, ref_hi) = (
        reference.trajectory().first_s(),
        reference.trajectory().last_s(),
    );
    if ref_lo > config.s0 + 1e-9 || ref_hi < need_hi - 1e-9 {
        return Err(ShootingError::Coverage {
            lo: ref_lo,
            hi: ref_hi,
            need_lo: config.s0,
            need_hi,
        });
    }
    let steps_per = config.solver.steps_per_frame()?;
    let dim = grid.dim();
    let spec = InitialDataSpec::ShrinkingFamily {
        d0: point.d0,
        d1: point.d1.clone(),
        d2: point.quad_matrix(dim),
        set: set.clone(),
    };
    let state = make_initial(&spec, params, &grid, config.s0)?;
    let mut v = state.values().to_vec();
    let mut ctx = StepContext::new(*params, grid.clone(), config.solver.ds)?;
    let mut w_ref = vec![0.0; grid.len()];
    let guard = 1e3 * params.kappa();

    let mut reports = Vec::new();
    let mut modes = Vec::new();
    let mut frames = if record >= RecordKind::Fields {
        let mut t = Trajectory::new_empty(
            *params,
            grid.clone(),
            stride,
            format!(
                "shooting trial d0 = {}, d1 = {:?}, d2 = {:?}",
                point.d0, point.d1, point.d2
            ),
        );
        t.push_frame(config.s0, v.clone());
        Some(t)
    } else {
        None
    };

    let keep = |dec: ModeDecomposition, sink: &mut Vec<ModeDecomposition>| {
        let mut slim = dec;
        slim.inner_remainder = Vec::new();
        slim.outer_remainder = Vec::new();
        sink.push(slim);
    };

    let mut exit: Option<ExitEvent> = None;
    let mut blew_up = false;
    let mut stride_index = 0usize;
    let total_strides = ((config.horizon - config.s0) / stride).round() as usize;
    let post_limit = config.post_exit_strides;

    // stride 0 report (initial data can already sit outside for corner points)
    let dec = decompose(
        &FieldState::new(grid.clone(), v.clone(), config.s0)?,
        set,
    )?;
    let report = check_membership(&dec, set);
    if !report.inside {
        let (component, _) = report.worst();
        exit = Some(ExitEvent {
            s_exit: config.s0,
            component,
            sign: mode_value(&dec, set, component).signum(),
            report: report.clone(),
            post_margins: Vec::new(),
            blew_up: false,
        });
    }
    reports.push(report);
    if record >= RecordKind::Modes {
        keep(dec, &mut modes);
    }

    'run: while stride_index
        < total_strides + if exit.is_some() { post_limit } else { 0 }
    {
        // advance one stride
        for step in 0..steps_per {
            let s_now = config.s0 + stride_index as f64 * stride + step as f64 * config.solver.ds;
            reference.sample_into(s_now, &mut w_ref)?;
            ctx.step_linearized(&mut v, &w_ref);
            let sup = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            if !sup.is_finite() || sup > guard {
                blew_up = true;
                break 'run;
            }
        }
        stride_index += 1;
        let s_here = config.s0 + stride_index as f64 * stride;

        let dec = decompose(&FieldState::new(grid.clone(), v.clone(), s_here)?, set)?;
        let report = check_membership(&dec, set);
        if let Some(ev) = exit.as_mut() {
            ev.post_margins.push(report.worst().1);
            if ev.post_margins.len() >= post_limit {
                if record >= RecordKind::Modes {
                    keep(dec, &mut modes);
                }
                if let Some(t) = frames.as_mut() {
                    t.push_frame(s_here, v.clone());
                }
                reports.push(report);
                break 'run;
            }
        } else if !report.inside {
            let (component, _) = report.worst();
            exit = Some(ExitEvent {
                s_exit: s_here,
                component,
                sign: mode_value(&dec, set, component).signum(),
                report: report.clone(),
                post_margins: Vec::new(),
                blew_up: false,
            });
        }
        reports.push(report);
        if record >= RecordKind::Modes {
            keep(dec, &mut modes);
        }
        if let Some(t) = frames.as_mut() {
            t.push_frame(s_here, v.clone());
        }
    }

    if blew_up {
        match exit.as_mut() {
            Some(ev) => {
                ev.blew_up = true;
                while ev.post_margins.len() < post_limit {
                    ev.post_margins.push(f64::INFINITY);
                }
            }
            None => {
                // guard tripped between strides before any margin exit —
                // attribute to the outer component at the last report
                let last = reports.last().expect("at least the initial report");
                let (component, _) = last.worst();
                exit = Some(ExitEvent {
                    s_exit: config.s0 + stride_index as f64 * stride,
                    component,
                    sign: 0.0,
                    report: last.clone(),
                    post_margins: vec![f64::INFINITY; post_limit],
                    blew_up: true,
                });
            }
        }
    }

    let outcome = match exit {
        Some(ev) => ShootOutcome::Exited(ev),
        None => ShootOutcome::Survived,
    };
    Ok(Trial {
        point: point.clone(),
        outcome,
        reports,
        modes,
        frames,
    })
}

struct SearchEngine<'a> {
    params: &'a ModelParams,
    reference: &'a ReferenceTrajectory,
    set: &'a ShrinkingSetSpec,
    config: &'a ShootConfig,
    record: RecordKind,
    history: Vec<HistoryRow>,
    warnings: Vec<String>,
}

impl<'a> SearchEngine<'a> {
    fn eval(&mut self, level: usize, point: &TrialPoint) -> Result<Trial, ShootingError> {
        let trial = exit_time(
            self.params,
            self.reference,
            self.set,
            self.config,
            point,
            self.record,
        )?;
        let (component, sign) = match trial.outcome.exit() {
            Some(e) => (Some(e.component), e.sign),
            None => (None, 0.0),
        };
        self.history.push(HistoryRow {
            level,
            point: point.clone(),
            stop_s: trial.stop_s(self.config),
            survived: trial.outcome.survived(),
            component,
            sign,
        });
        Ok(trial)
    }

    /// Does this exit belong to the component a level bisection steers?
    fn owns(level_component: ComponentId, exit: ComponentId) -> bool {
        match (level_component, exit) {
            (ComponentId::Mean, ComponentId::Mean) => true,
            (ComponentId::Linear(a), ComponentId::Linear(b)) => a == b,
            (ComponentId::Quad(a, b), ComponentId::Quad(c, d)) => (a, b) == (c, d),
            _ => false,
        }
    }

    /// Nested bisection.  `levels` lists `(axis, steered component)` pairs
    /// outermost first; the recursion bottoms out in a plain evaluation.
    /// Each level tries its midpoint first and returns immediately when the
    /// exit is not attributed to its own component, so a level whose mode is
    /// already under control costs a single subtree evaluation.
    fn tune_levels(
        &mut self,
        box_: &SearchBox,
        levels: &[(usize, ComponentId)],
        depth: usize,
        point: &TrialPoint,
    ) -> Result<Trial, ShootingError> {
        let ((axis, component), rest) = match levels.split_first() {
            None => return self.eval(depth, point),
            Some((&head, rest)) => (head, rest),
        };
        let (mut lo, mut hi) = box_.axis_range(axis);
        let mid_point = point.with_axis(axis, 0.5 * (lo + hi));
        let mid_trial = self.tune_levels(box_, rest, depth + 1, &mid_point)?;
        let exit = match mid_trial.outcome.exit() {
            None => return Ok(mid_trial),
            Some(e) => e,
        };
        if !Self::owns(component, exit.component) {
            // this level's mode is not the binding constraint here; let the
            // caller's level handle it
            return Ok(mid_trial);
        }
        let mut best = mid_trial.clone();
        let mid_sign = exit.sign;

        // bracket: the level's mode grows with its own parameter, so probe
        // the side opposite to the midpoint's sign
        let probe_value = if mid_sign > 0.0 { lo } else { hi };
        let probe_point = point.with_axis(axis, probe_value);
        let probe_trial = self.tune_levels(box_, rest, depth + 1, &probe_point)?;
        if probe_trial.outcome.survived() {
            return Ok(probe_trial);
        }
        if probe_trial.stop_s(self.config) > best.stop_s(self.config) {
            best = probe_trial.clone();
        }
        let probe_exit = probe_trial.outcome.exit().expect("checked above");
        if !Self::owns(component, probe_exit.component) || probe_exit.sign == mid_sign {
            self.warnings.push(format!(
                "axis {} ({component}): no sign change between {} and {}",
                TrialPoint::axis_label(self.set.dim(), axis),
                0.5 * (lo + hi),
                probe_value,
            ));
            return Ok(best);
        }
        // shrink toward the midpoint: the sign there tells which half of the
        // range still brackets the change
        if mid_sign > 0.0 {
            hi = 0.5 * (lo + hi);
        } else {
            lo = 0.5 * (lo + hi);
        }

        for _ in 0..self.config.max_level_iters {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            let trial = self.tune_levels(box_, rest, depth + 1, &point.with_axis(axis, mid))?;
            match trial.outcome.exit() {
                None => return Ok(trial),
                Some(e) => {
                    if !Self::owns(component, e.component) {
                        // the level's own mode stopped binding: good enough
                        return Ok(trial);
                    }
                    if trial.stop_s(self.config) > best.stop_s(self.config) {
                        best = trial.clone();
                    }
                    if e.sign > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
            }
        }
        Ok(best)
    }
}

/// Shooting search over the box.  One dimension uses the nested three-level
/// bisection; two dimensions use coordinate sweeps.  The best trial records
/// mode scalars; pass `record` to change what every trial keeps.
pub fn shoot(
    params: &ModelParams,
    reference: &ReferenceTrajectory,
    set: &ShrinkingSetSpec,
    config: &ShootConfig,
    box_: &SearchBox,
    record: RecordKind,
) -> Result<ShootReport, ShootingError> {
    let dim = reference.trajectory().grid().dim();
    box_.validate(dim)?;
    let mut engine = SearchEngine {
        params,
        reference,
        set,
        config,
        record,
        history: Vec::new(),
        warnings: Vec::new(),
    };

    let best = if dim == 1 {
        // outer level steers the mean, then the linear mode, innermost the
        // tracked quadratic mode
        let levels = [
            (0, ComponentId::Mean),
            (1, ComponentId::Linear(0)),
            (2, ComponentId::Quad(0, 0)),
        ];
        engine.tune_levels(box_, &levels, 0, &box_.center())?
    } else {
        coordinate_sweeps(&mut engine, box_)?
    };

    Ok(ShootReport {
        best,
        history: engine.history,
        warnings: engine.warnings,
    })
}

/// Coordinate-wise bisection sweeps for the six-parameter search.
fn coordinate_sweeps(
    engine: &mut SearchEngine,
    box_: &SearchBox,
) -> Result<Trial, ShootingError> {
    let dim = engine.set.dim();
    let axis_component = |axis: usize| -> ComponentId {
        if axis == 0 {
            ComponentId::Mean
        } else if axis <= dim {
            ComponentId::Linear(axis - 1)
        } else {
            let mut slot = axis - 1 - dim;
            for i in 0..dim {
                for j in i..dim {
                    if slot == 0 {
                        return ComponentId::Quad(i, j);
                    }
                    slot -= 1;
                }
            }
            unreachable!()
        }
    };

    let mut current = box_.center();
    let mut best = engine.eval(0, &current)?;
    const MAX_PASSES: usize = 4;
    for _pass in 0..MAX_PASSES {
        if best.outcome.survived() {
            break;
        }
        let before = best.stop_s(engine.config);
        for axis in 0..box_.axis_count() {
            let component = axis_component(axis);
            let trial = engine.tune_levels(box_, &[(axis, component)], axis, &current)?;
            if trial.stop_s(engine.config) >= best.stop_s(engine.config) {
                current = trial.point.clone();
                best = trial;
            }
            if best.outcome.survived() {
                break;
            }
        }
        if best.stop_s(engine.config) <= before + 1e-9 {
            break; // fixpoint
        }
    }
    Ok(best)
}

/// Trials at the centers of the box's faces: for each axis, both endpoints
/// with every other coordinate at its midpoint.  Exercises the claim that
/// boundary data leaves the set immediately through its own mode.
pub fn boundary_exit_survey(
    params: &ModelParams,
    reference: &ReferenceTrajectory,
    set: &ShrinkingSetSpec,
    config: &ShootConfig,
    box_: &SearchBox,
) -> Result<Vec<(String, Trial)>, ShootingError> {
    let dim = reference.trajectory().grid().dim();
    box_.validate(dim)?;
    let center = box_.center();
    let mut out = Vec::new();
    for axis in 0..box_.axis_count() {
        let (lo, hi) = box_.axis_range(axis);
        for value in [lo, hi] {
            let point = center.with_axis(axis, value);
            let trial = exit_time(params, reference, set, config, &point, RecordKind::Margins)?;
            out.push((TrialPoint::axis_label(dim, axis), trial));
        }
    }
    Ok(out)
}

/// One row of an exit-map sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub point: TrialPoint,
    pub stop_s: f64,
    pub survived: bool,
    pub component: Option<ComponentId>,
    pub sign: f64,
    pub blew_up: bool,
}

/// Exit map over a lattice of `resolution` points per axis (endpoints
/// included).  Trials run in parallel; the row order is the deterministic
/// row-major lattice order regardless of scheduling.
pub fn sweep(
    params: &ModelParams,
    reference: &ReferenceTrajectory,
    set: &ShrinkingSetSpec,
    config: &ShootConfig,
    box_: &SearchBox,
    resolution: usize,
) -> Result<Vec<SweepRow>, ShootingError> {
    let dim = reference.trajectory().grid().dim();
    box_.validate(dim)?;
    if resolution < 2 {
        return Err(ShootingError::BadSetup(format!(
            "lattice needs at least 2 points per axis, got {resolution}"
        )));
    }
    let axes = box_.axis_count();
    let total = resolution.pow(axes as u32);
    let lattice_value = |axis: usize, k: usize| {
        let (lo, hi) = box_.axis_range(axis);
        lo + (hi - lo) * k as f64 / (resolution - 1) as f64
    };
    let rows: Result<Vec<SweepRow>, ShootingError> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut coords = vec![0usize; axes];
            for axis in (0..axes).rev() {
                coords[axis] = rem % resolution;
                rem /= resolution;
            }
            let center = box_.center();
            let mut point = center;
            for axis in 0..axes {
                point = point.with_axis(axis, lattice_value(axis, coords[axis]));
            }
            let trial = exit_time(params, reference, set, config, &point, RecordKind::Margins)?;
            let (component, sign, blew_up) = match trial.outcome.exit() {
                Some(e) => (Some(e.component), e.sign, e.blew_up),
                None => (None, 0.0, false),
            };
            let stop_s = trial.stop_s(config);
            Ok(SweepRow {
                point: trial.point,
                stop_s,
                survived: trial.outcome.survived(),
                component,
                sign,
                blew_up,
            })
        })
        .collect();
    rows
}

/// Dump sweep rows as CSV (deterministic bytes for a given input).
pub fn write_sweep_csv(
    mut out: impl Write,
    dim: usize,
    rows: &[SweepRow],
) -> Result<(), ShootingError> {
    write!(out, "d0")?;
    for i in 0..dim {
        write!(out, ",d1_{i}")?;
    }
    for i in 0..dim {
        for j in i..dim {
            write!(out, ",d2_{i}{j}")?;
        }
    }
    writeln!(out, ",stop_s,survived,component,sign,blew_up")?;
    for row in rows {
        write!(out, "{}", row.point.d0)?;
        for v in &row.point.d1 {
            write!(out, ",{v}")?;
        }
        for v in &row.point.d2 {
            write!(out, ",{v}")?;
        }
        let comp = row
            .component
            .map(|c| c.to_string())
            .unwrap_or_else(|| "none".into());
        writeln!(
            out,
            ",{},{},{},{},{}",
            row.stop_s, row.survived, comp, row.sign, row.blew_up
        )?;
    }
    Ok(())
}

/// Dump a search history as CSV.
pub fn write_history_csv(
    mut out: impl Write,
    dim: usize,
    history: &[HistoryRow],
) -> Result<(), ShootingError> {
    write!(out, "level,d0")?;
    for i in 0..dim {
        write!(out, ",d1_{i}")?;
    }
    for i in 0..dim {
        for j in i..dim {
            write!(out, ",d2_{i}{j}")?;
        }
    }
    writeln!(out, ",stop_s,survived,component,sign")?;
    for row in history {
        write!(out, "{},{}", row.level, row.point.d0)?;
        for v in &row.point.d1 {
            write!(out, ",{v}")?;
        }
        for v in &row.point.d2 {
            write!(out, ",{v}")?;
        }
        let comp = row
            .component
            .map(|c| c.to_string())
            .unwrap_or_else(|| "none".into());
        writeln!(out, ",{},{},{},{}", row.stop_s, row.survived, comp, row.sign)?;
    }
    Ok(())
}
