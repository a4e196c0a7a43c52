//! One JSON object per line, append-only. Every serialized field is a pure
//! function of (config, seed) so runs are reproducible byte for byte; wall
//! time is kept on the record for operator display but never written.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub sample: usize,
    pub loss: f64,
    /// ||tau_l - h_l|| for l = 1..=L, after relaxation.
    pub layer_gaps: Vec<f64>,
    /// Influence factor per layer (capped output/layer gap ratio).
    pub influence: Vec<f64>,
    /// Estimated contraction rate per layer; None when no finite estimate
    /// exists (too few iterations or a blowup marker).
    pub alphas: Vec<Option<f64>>,
    /// Relaxation sweeps (or worst per-layer iteration count for the
    /// sequential methods).
    pub sweeps: usize,
    /// True when relaxation diverged and the feedforward update was skipped.
    pub diverged: bool,
    /// Seconds spent in the step; excluded from serialization so outputs
    /// stay deterministic.
    #[serde(skip)]
    pub wall_time: f64,
}

pub fn write_jsonl(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut buffer = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buffer, record)?;
        buffer.push(b'\n');
    }
    std::fs::write(path, buffer).map_err(|e| HarnessError::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(HarnessError::from))
        .collect()
}

/// Append records to an open writer (used by long runs that stream).
pub fn append_jsonl(writer: &mut impl Write, record: &MetricsRecord) -> Result<()> {
    serde_json::to_writer(&mut *writer, record)?;
    writer.write_all(b"\n").map_err(|e| HarnessError::Io {
        path: "<stream>".into(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> MetricsRecord {
        MetricsRecord {
            epoch: 2,
            sample: 7,
            loss: 0.125,
            layer_gaps: vec![0.5, 0.25],
            influence: vec![0.25, 1.0],
            alphas: vec![Some(0.2), None],
            sweeps: 4,
            diverged: false,
            wall_time: 123.456,
        }
    }

    #[test]
    fn wall_time_never_reaches_the_file() {
        let json = serde_json::to_string(&sample_record()).unwrap();
        assert!(!json.contains("wall_time"));
        assert!(json.contains("\"alphas\":[0.2,null]"));
    }

    #[test]
    fn jsonl_round_trip_drops_only_wall_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let records = vec![sample_record(), sample_record()];
        write_jsonl(&records, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].loss, records[0].loss);
        assert_eq!(back[0].alphas, records[0].alphas);
        assert_eq!(back[0].wall_time, 0.0);
    }
}
