//! Run configuration: a TOML file describing one experiment.
//!
//! The schema mirrors the laboratory's domain types (see the field docs on
//! each struct).  Every run directory receives a canonical copy of the
//! effective configuration — re-serialized, with the output directory
//! stripped — and the manifest's `config_sha256` is the hash of exactly that
//! canonical text, so semantically identical configs hash identically no
//! matter how the source file was formatted or where the run landed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use selfsim_core::profile::CutoffSpec;
use selfsim_core::{ModelParams, ShrinkingSetSpec, SolverConfig, SymmetricMatrix, WeightedGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Experiment selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    /// Tune and store a reference trajectory.
    Reference,
    /// Nested-bisection search for a surviving perturbation.
    Shoot,
    /// Dilation pair: fit the quadratic correction and compare with the
    /// closed-form target `κ log λ / p`.
    Dilation,
    /// Full dichotomy verdict on a trajectory difference.
    Classify,
    /// Eigenbasis and kernel identities (orthogonality, eigenrelation,
    /// detailed balance).
    KernelSuite,
    /// Physical-variable difference bounds, band by band.
    Theorem2Report,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Tag::Reference => "reference",
            Tag::Shoot => "shoot",
            Tag::Dilation => "dilation",
            Tag::Classify => "classify",
            Tag::KernelSuite => "kernel-suite",
            Tag::Theorem2Report => "theorem2-report",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    /// A field failed validation; `path` is the TOML key path.
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

fn invalid(path: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.to_string(),
    }
}

/// `[model]`: the equation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Nonlinearity exponent `p > 1`.
    pub p: f64,
    /// Spatial dimension (1 or 2).
    pub dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { p: 3.0, dim: 1 }
    }
}

/// `[grid]`: the symmetric uniform lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Half-width of the computational box.
    pub extent: f64,
    /// Nodes per axis (odd, so the origin is a node).
    pub nodes: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            extent: 40.0,
            nodes: 2001,
        }
    }
}

/// `[set]`: the shrinking-set constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SetConfig {
    /// Amplitude constant `A > 1`.
    pub amplitude: f64,
    /// Decay exponent `η ∈ (0, 1/2)`.
    pub eta: f64,
    /// Tracked quadratic target, upper triangle row-major
    /// (`N(N+1)/2` entries).
    pub target: Vec<f64>,
    /// Cutoff radius coefficient `K`.
    pub cutoff_scale: f64,
}

impl Default for SetConfig {
    fn default() -> Self {
        Self {
            amplitude: 30.0,
            eta: 0.25,
            target: vec![0.3],
            cutoff_scale: 5.0,
        }
    }
}

/// `[experiment]`: windows and knobs that depend on the tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Similarity time the run starts from.
    pub s0: f64,
    /// Similarity time the run (or search) aims for.
    pub horizon: f64,
    /// Dilation factor `λ` for the shifted partner trajectory.
    pub lambda: f64,
    /// Fit window `[lo, hi]` for regressions; derived from the horizon when
    /// absent.
    pub fit_window: Option<[f64; 2]>,
    /// Lattice points per axis for `sweep`.
    pub sweep_resolution: usize,
    /// Outer cap of the intermediate band (physical units, `< 1`).
    pub epsilon0: f64,
    /// Strides to keep monitoring after a shooting exit.
    pub post_exit_strides: usize,
    /// Bisection budget per level for the shooting search.
    pub max_level_iters: u32,
    /// Optional pre-computed trajectory for `classify` (side A).
    pub trajectory_a: Option<PathBuf>,
    /// Optional pre-computed trajectory for `classify` (side B).
    pub trajectory_b: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            s0: 10.0,
            horizon: 40.0,
            lambda: std::f64::consts::E,
            fit_window: None,
            sweep_resolution: 3,
            epsilon0: 0.5,
            post_exit_strides: 5,
            max_level_iters: 60,
            trajectory_a: None,
            trajectory_b: None,
        }
    }
}

/// One experiment: the full, self-contained description of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Which experiment to execute.
    pub tag: Tag,
    /// Output directory; the `--out` flag overrides it.  Not part of the
    /// run's identity: the canonical form strips it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "SolverConfig::default")]
    pub solver: SolverConfig,
    #[serde(default)]
    pub set: SetConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    /// Parse a config file without validating it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    /// Cross-field validation; returns the constructed domain objects so
    /// the experiment code cannot drift from what was validated.
    pub fn validate(&self) -> Result<ValidatedConfig, ConfigError> {
        let params = ModelParams::new(self.model.p, self.model.dim)
            .map_err(|e| invalid("model", e))?;

        if !(self.grid.extent > 0.0 && self.grid.extent.is_finite()) {
            return Err(invalid(
                "grid.extent",
                format!("must be positive and finite, got {}", self.grid.extent),
            ));
        }
        let grid = match self.model.dim {
            1 => WeightedGrid::new_1d(self.grid.extent, self.grid.nodes),
            _ => WeightedGrid::new_2d(self.grid.extent, self.grid.nodes),
        }
        .map_err(|e| invalid("grid", e))?;

        self.solver
            .steps_per_frame()
            .map_err(|e| invalid("solver", e))?;

        if !(self.set.eta > 0.0 && self.set.eta < 0.5) {
            return Err(invalid(
                "set.eta",
                format!(
                    "decay exponent must lie in (0, 1/2), got {}",
                    self.set.eta
                ),
            ));
        }
        let entries = self.model.dim * (self.model.dim + 1) / 2;
        if self.set.target.len() != entries {
            return Err(invalid(
                "set.target",
                format!(
                    "needs the {} upper-triangle entries for dimension {}, got {}",
                    entries,
                    self.model.dim,
                    self.set.target.len()
                ),
            ));
        }
        let mut target = SymmetricMatrix::zeros(self.model.dim);
        let mut slot = 0;
        for i in 0..self.model.dim {
            for j in i..self.model.dim {
                target.set(i, j, self.set.target[slot]);
                slot += 1;
            }
        }
        let cutoff = CutoffSpec::new(self.set.cutoff_scale)
            .map_err(|e| invalid("set.cutoff_scale", e))?;
        let set = ShrinkingSetSpec::new(self.set.amplitude, self.set.eta, target, cutoff.clone())
            .map_err(|e| invalid("set", e))?;

        let exp = &self.experiment;
        if !(exp.s0 > 0.0 && exp.s0.is_finite()) {
            return Err(invalid(
                "experiment.s0",
                format!("must be positive and finite, got {}", exp.s0),
            ));
        }
        if !(exp.horizon > exp.s0) {
            return Err(invalid(
                "experiment.horizon",
                format!("must exceed s0 = {}, got {}", exp.s0, exp.horizon),
            ));
        }
        if !(exp.lambda > 0.0 && exp.lambda.is_finite()) {
            return Err(invalid(
                "experiment.lambda",
                format!("must be positive and finite, got {}", exp.lambda),
            ));
        }
        if !(exp.epsilon0 > 0.0 && exp.epsilon0 < 1.0) {
            return Err(invalid(
                "experiment.epsilon0",
                format!("must lie in (0, 1), got {}", exp.epsilon0),
            ));
        }
        if exp.sweep_resolution < 2 {
            return Err(invalid(
                "experiment.sweep_resolution",
                format!("needs at least 2 points per axis, got {}", exp.sweep_resolution),
            ));
        }

        // tag-specific coverage requirements
        let shift = 2.0 * exp.lambda.ln();
        let fit_window = match exp.fit_window {
            Some([lo, hi]) => {
                if !(lo < hi) {
                    return Err(invalid(
                        "experiment.fit_window",
                        format!("window [{lo}, {hi}] is not increasing"),
                    ));
                }
                if lo < exp.s0 {
                    return Err(invalid(
                        "experiment.fit_window",
                        format!("starts at {lo}, before s0 = {}", exp.s0),
                    ));
                }
                [lo, hi]
            }
            None => {
                // a centered window in the run's second half
                let hi = match self.tag {
                    Tag::Dilation | Tag::Classify | Tag::Theorem2Report => exp.horizon - shift,
                    _ => exp.horizon,
                };
                let lo = exp.s0 + 0.5 * (hi - exp.s0);
                [lo, hi]
            }
        };
        match self.tag {
            Tag::Dilation | Tag::Classify | Tag::Theorem2Report => {
                if exp.lambda == 1.0 {
                    return Err(invalid(
                        "experiment.lambda",
                        "the dilated partner coincides with the base at λ = 1",
                    ));
                }
                if fit_window[1] + shift > exp.horizon + 1e-9 {
                    return Err(invalid(
                        "experiment.horizon",
                        format!(
                            "the dilated partner needs coverage to fit_window.hi + 2 log λ = {:.3}, \
                             but the horizon is {}",
                            fit_window[1] + shift,
                            exp.horizon
                        ),
                    ));
                }
            }
            Tag::KernelSuite => {
                if self.model.dim != 1 {
                    return Err(invalid(
                        "model.dim",
                        "the kernel suite runs on the one-dimensional grid",
                    ));
                }
            }
            _ => {}
        }

        Ok(ValidatedConfig {
            params,
            grid: Arc::new(grid),
            solver: self.solver,
            set,
            cutoff,
            fit_window,
        })
    }

    /// Canonical TOML: the effective configuration re-serialized with the
    /// output directory stripped.  This is what gets written into the run
    /// directory and hashed into the manifest.
    pub fn canonical_toml(&self) -> String {
        let mut stripped = self.clone();
        stripped.out_dir = None;
        toml::to_string(&stripped).expect("config serializes")
    }

    /// SHA-256 of [`RunConfig::canonical_toml`], lowercase hex.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical_toml().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// Domain objects constructed during validation.
pub struct ValidatedConfig {
    pub params: ModelParams,
    pub grid: Arc<WeightedGrid>,
    pub solver: SolverConfig,
    pub set: ShrinkingSetSpec,
    pub cutoff: CutoffSpec,
    /// Effective fit window (explicit or derived).
    pub fit_window: [f64; 2],
}

/// Convenience: sorted map type used for manifest metrics and checks.
pub type Metrics = BTreeMap<String, f64>;

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RunConfig {
        toml::from_str(text).expect("config parses")
    }

    #[test]
    fn defaults_fill_every_section() {
        let config = parse("tag = \"kernel-suite\"\n");
        assert_eq!(config.model.p, 3.0);
        assert_eq!(config.grid.nodes, 2001);
        assert_eq!(config.set.amplitude, 30.0);
        config.validate().expect("default config is valid");
    }

    #[test]
    fn eta_out_of_range_cites_the_field_path() {
        let config = parse("tag = \"shoot\"\n[set]\neta = 0.9\n");
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("set.eta"), "message: {err}");
        assert!(err.contains("(0, 1/2)"), "message: {err}");
    }

    #[test]
    fn wrong_target_arity_cites_the_field_path() {
        let config = parse("tag = \"shoot\"\n[model]\ndim = 2\n[set]\ntarget = [0.3]\n");
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("set.target"), "message: {err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("tag = \"shoot\"\n[grid]\nspacing = 0.1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("spacing"), "message: {err}");
    }

    #[test]
    fn hash_ignores_formatting_and_out_dir() {
        let a = parse("tag = \"dilation\"\nout_dir = \"runs/a\"\n");
        let b = parse("# comment\ntag   = \"dilation\"\nout_dir = \"elsewhere\"\n");
        assert_eq!(a.sha256(), b.sha256());
        let c = parse("tag = \"dilation\"\n[experiment]\nlambda = 2.0\n");
        assert_ne!(a.sha256(), c.sha256());
    }

    #[test]
    fn dilation_horizon_must_cover_the_shifted_window() {
        let config = parse(
            "tag = \"dilation\"\n[experiment]\ns0 = 8.0\nhorizon = 20.0\nfit_window = [12.0, 19.5]\n",
        );
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("experiment.horizon"), "message: {err}");
    }
}
