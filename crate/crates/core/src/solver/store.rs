//! On-disk trajectory format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset 0   8 bytes   magic "SSBLOWT1"
//! offset 8   8 bytes   u64 header length H
//! offset 16  H bytes   JSON header (serde_json, one object)
//! then       frames    frame_count × (8 bytes time + values_len × 8 bytes)
//! ```
//!
//! The header carries the model parameters, the axis layout (`extent`,
//! `nodes` per axis — node positions are derived, not stored), the stride,
//! the origin string, the termination event and the body dimensions.  A
//! reader validates the body length against the header before touching the
//! records, so truncated files fail loudly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::profile::ModelParams;
use crate::solver::{FlowEvent, Frame, SolverError, Trajectory};
use crate::spectral::{Axis, WeightedGrid};

const MAGIC: &[u8; 8] = b"SSBLOWT1";

#[derive(Debug, Serialize, Deserialize)]
struct AxisHeader {
    extent: f64,
    nodes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    params: ModelParams,
    axes: Vec<AxisHeader>,
    stride: f64,
    origin: String,
    event: Option<FlowEvent>,
    frame_count: usize,
    values_len: usize,
}

/// Write a trajectory to `path`, overwriting any existing file.
pub fn save_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<(), SolverError> {
    let grid = traj.grid();
    let header = StoreHeader {
        params: *traj.params(),
        axes: (0..grid.dim())
            .map(|i| AxisHeader {
                extent: grid.axis(i).extent(),
                nodes: grid.axis(i).len(),
            })
            .collect(),
        stride: traj.stride(),
        origin: traj.origin().to_string(),
        event: traj.event(),
        frame_count: traj.frames().len(),
        values_len: grid.len(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| SolverError::BadStore(format!("header serialization: {e}")))?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for frame in traj.frames() {
        out.write_all(&frame.s.to_le_bytes())?;
        for v in &frame.values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a trajectory written by [`save_trajectory`].
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, SolverError> {
    let mut input = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SolverError::BadStore(
            "bad magic: not a trajectory file".into(),
        ));
    }
    let mut len_bytes = [0u8; 8];
    input.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 20 {
        return Err(SolverError::BadStore(format!(
            "header length {header_len} is implausible"
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    input.read_exact(&mut header_bytes)?;
    let header: StoreHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| SolverError::BadStore(format!("header parse: {e}")))?;

    let axes = header
        .axes
        .iter()
        .map(|a| Axis::new(a.extent, a.nodes))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SolverError::BadStore(format!("axis reconstruction: {e}")))?;
    let grid = Arc::new(
        WeightedGrid::from_axes(axes)
            .map_err(|e| SolverError::BadStore(format!("grid reconstruction: {e}")))?,
    );
    if grid.len() != header.values_len {
        return Err(SolverError::BadStore(format!(
            "header claims {} values per frame but the axes give {}",
            header.values_len,
            grid.len()
        )));
    }

    let mut frames = Vec::with_capacity(header.frame_count);
    let mut record = vec![0u8; 8 * (header.values_len + 1)];
    for k in 0..header.frame_count {
        input.read_exact(&mut record).map_err(|e| {
            SolverError::BadStore(format!(
                "truncated body: frame {k} of {}: {e}",
                header.frame_count
            ))
        })?;
        let s = f64::from_le_bytes(record[..8].try_into().expect("slice of 8"));
        let values = record[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("slice of 8")))
            .collect();
        frames.push(Frame { s, values });
    }
    let mut excess = [0u8; 1];
    if input.read(&mut excess)? != 0 {
        return Err(SolverError::BadStore(
            "trailing bytes after the last frame".into(),
        ));
    }

    Ok(Trajectory::from_parts(
        header.params,
        grid,
        header.stride,
        header.origin,
        frames,
        header.event,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{simulate, InitialDataSpec, SolverConfig};

    fn sample_trajectory() -> Trajectory {
        let params = ModelParams::new(3.0, 1).unwrap();
        let grid = Arc::new(WeightedGrid::new_1d(10.0, 101).unwrap());
        let spec = InitialDataSpec::ProfileFamily {
            d0: 0.05,
            d1: vec![0.0],
        };
        simulate(&params, &grid, &SolverConfig::default(), &spec, 5.0, 6.0).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let traj = sample_trajectory();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.traj");
        save_trajectory(&path, &traj).unwrap();
        let back = load_trajectory(&path).unwrap();

        assert_eq!(back.params(), traj.params());
        assert!(back.grid().layout_eq(traj.grid()));
        assert_eq!(back.stride(), traj.stride());
        assert_eq!(back.origin(), traj.origin());
        assert_eq!(back.event(), traj.event());
        assert_eq!(back.frames().len(), traj.frames().len());
        for (a, b) in back.frames().iter().zip(traj.frames()) {
            assert_eq!(a.s.to_bits(), b.s.to_bits());
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let traj = sample_trajectory();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.traj");
        save_trajectory(&path, &traj).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad_magic = dir.path().join("bad_magic.traj");
        std::fs::write(&bad_magic, &bytes).unwrap();
        assert!(matches!(
            load_trajectory(&bad_magic),
            Err(SolverError::BadStore(_))
        ));

        let mut truncated = std::fs::read(&path).unwrap();
        truncated.truncate(truncated.len() - 13);
        let short = dir.path().join("short.traj");
        std::fs::write(&short, &truncated).unwrap();
        assert!(matches!(
            load_trajectory(&short),
            Err(SolverError::BadStore(_))
        ));
    }
}
