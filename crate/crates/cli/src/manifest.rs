//! Run manifests: the structured record a run leaves behind.
//!
//! A manifest names the experiment, pins the configuration hash and code
//! version, lists every artifact the run produced (relative paths — the
//! directory is relocatable), and records the scalar metrics and pass/fail
//! checks.  Serialization uses sorted maps and carries no timestamps, so two
//! runs of the same configuration produce byte-identical manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest parse error in {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("cannot diff a {left} run against a {right} run")]
    TagMismatch { left: String, right: String },
    #[error(
        "{dir} already holds a run of a different configuration ({found}); \
         use a fresh output directory"
    )]
    Occupied { dir: PathBuf, found: String },
}

/// Record of one completed run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Experiment tag, as in the configuration.
    pub tag: String,
    /// `run` or `sweep`.
    pub operation: String,
    /// SHA-256 of the canonical configuration.
    pub config_sha256: String,
    /// Version of the binary that produced the run.
    pub code_version: String,
    /// Classifier verdict, when the experiment produces one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<String>,
    /// Every file the run wrote, relative to the run directory, sorted.
    pub artifacts: Vec<String>,
    /// Scalar results.
    pub metrics: BTreeMap<String, f64>,
    /// Pass/fail gates; the process exit code is 0 iff all are true.
    pub checks: BTreeMap<String, bool>,
}

impl RunManifest {
    pub fn new(tag: impl Into<String>, operation: &str, config_sha256: String) -> Self {
        Self {
            tag: tag.into(),
            operation: operation.to_string(),
            config_sha256,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            verdict: None,
            artifacts: Vec::new(),
            metrics: BTreeMap::new(),
            checks: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.values().all(|&ok| ok)
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn check(&mut self, name: &str, ok: bool) {
        self.checks.insert(name.to_string(), ok);
    }

    /// Write the manifest itself into `dir`.
    pub fn save(&mut self, dir: &Path) -> Result<(), ManifestError> {
        self.artifacts.sort();
        self.artifacts.dedup();
        let path = dir.join(MANIFEST_NAME);
        let text = toml::to_string(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|source| ManifestError::Io { path, source })
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ManifestError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Human-readable summary (the `report` subcommand's output).
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} ({})  v{}", self.tag, self.operation, self.code_version);
        let _ = writeln!(out, "config {}", self.config_sha256);
        if let Some(verdict) = &self.verdict {
            let _ = writeln!(out, "verdict: {verdict}");
        }
        if !self.metrics.is_empty() {
            let _ = writeln!(out, "metrics:");
            for (name, value) in &self.metrics {
                let _ = writeln!(out, "  {name} = {value}");
            }
        }
        if !self.checks.is_empty() {
            let _ = writeln!(out, "checks:");
            for (name, ok) in &self.checks {
                let _ = writeln!(out, "  [{}] {name}", if *ok { "pass" } else { "FAIL" });
            }
        }
        let _ = writeln!(out, "artifacts: {}", self.artifacts.join(", "));
        out
    }
}

/// Guard an output directory: a directory may hold at most one run, so a
/// rerun is accepted only when the configuration hash matches (the run is
/// then reproduced in place).
pub fn claim_dir(dir: &Path, config_sha256: &str) -> Result<(), ManifestError> {
    let manifest_path = dir.join(MANIFEST_NAME);
    if manifest_path.exists() {
        let existing = RunManifest::load(&manifest_path)?;
        if existing.config_sha256 != config_sha256 {
            return Err(ManifestError::Occupied {
                dir: dir.to_path_buf(),
                found: existing.config_sha256,
            });
        }
    }
    std::fs::create_dir_all(dir).map_err(|source| ManifestError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Field-wise comparison of two manifests.  Identical runs produce an empty
/// string; otherwise each differing field gets one line, with binary orders
/// (`log2` of the ratio) for positive metric pairs so refinement studies can
/// read convergence off the diff directly.
pub fn diff_runs(left: &RunManifest, right: &RunManifest) -> Result<String, ManifestError> {
    if left.tag != right.tag || left.operation != right.operation {
        return Err(ManifestError::TagMismatch {
            left: format!("{} {}", left.tag, left.operation),
            right: format!("{} {}", right.tag, right.operation),
        });
    }
    let mut out = String::new();
    if left.config_sha256 != right.config_sha256 {
        let _ = writeln!(
            out,
            "config: {} -> {}",
            &left.config_sha256[..12.min(left.config_sha256.len())],
            &right.config_sha256[..12.min(right.config_sha256.len())]
        );
    }
    if left.code_version != right.code_version {
        let _ = writeln!(out, "version: {} -> {}", left.code_version, right.code_version);
    }
    if left.verdict != right.verdict {
        let display = |v: &Option<String>| v.clone().unwrap_or_else(|| "-".to_string());
        let _ = writeln!(out, "verdict: {} -> {}", display(&left.verdict), display(&right.verdict));
    }

    let metric_names: std::collections::BTreeSet<&String> =
        left.metrics.keys().chain(right.metrics.keys()).collect();
    for name in metric_names {
        match (left.metrics.get(name), right.metrics.get(name)) {
            (Some(a), Some(b)) if a.to_bits() != b.to_bits() => {
                if *a > 0.0 && *b > 0.0 {
                    let orders = (b / a).log2();
                    let _ = writeln!(
                        out,
                        "metric {name}: {a} -> {b}  ({orders:+.2} binary orders)"
                    );
                } else {
                    let _ = writeln!(out, "metric {name}: {a} -> {b}");
                }
            }
            (Some(a), None) => {
                let _ = writeln!(out, "metric {name}: {a} -> (absent)");
            }
            (None, Some(b)) => {
                let _ = writeln!(out, "metric {name}: (absent) -> {b}");
            }
            _ => {}
        }
    }

    let check_names: std::collections::BTreeSet<&String> =
        left.checks.keys().chain(right.checks.keys()).collect();
    for name in check_names {
        match (left.checks.get(name), right.checks.get(name)) {
            (Some(a), Some(b)) if a != b => {
                let _ = writeln!(out, "check {name}: {a} -> {b}");
            }
            (Some(a), None) => {
                let _ = writeln!(out, "check {name}: {a} -> (absent)");
            }
            (None, Some(b)) => {
                let _ = writeln!(out, "check {name}: (absent) -> {b}");
            }
            _ => {}
        }
    }

    let left_files: std::collections::BTreeSet<&String> = left.artifacts.iter().collect();
    let right_files: std::collections::BTreeSet<&String> = right.artifacts.iter().collect();
    for only_left in left_files.difference(&right_files) {
        let _ = writeln!(out, "artifact {only_left}: removed");
    }
    for only_right in right_files.difference(&left_files) {
        let _ = writeln!(out, "artifact {only_right}: added");
    }

    Ok(out)
}
