//! Library half of the `selfsim` binary: configuration schema, run
//! manifests, and the experiment runners.  Kept as a library so integration
//! tests can exercise validation and diffing without spawning the binary.

pub mod config;
pub mod experiments;
pub mod manifest;
