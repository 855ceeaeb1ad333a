//! Chain trace records and their JSON-lines serialization.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::TreeStats;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("failed to access trace file: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt trace record at line {line}: {source}")]
    Corrupt { line: usize, source: serde_json::Error },
}

/// One iteration of one chain. `trees`, `accepted`, and `moves` hold one
/// entry per tree in the ensemble (a single entry for CART).
///
/// `log_lik` is the quantity the run reports per iteration: for a single
/// classification tree the leaf-integrated marginal likelihood of the data
/// given the tree, for Gaussian models the data log density at the current
/// fit and sigma2, and for multi-tree classification the Bernoulli log
/// likelihood at the probit-transformed fit.
///
/// `moves` records the proposed move kind per tree, or `"stalled"` when the
/// proposal retry cap was exhausted and the iteration kept the current tree
/// as a forced self-transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub chain: u32,
    pub iteration: u32,
    pub trees: Vec<TreeStats>,
    pub log_lik: f64,
    pub sigma2: Option<f64>,
    pub missing_rate: Option<f64>,
    pub accepted: Vec<bool>,
    pub moves: Vec<String>,
}

impl TraceRecord {
    /// Mean leaf count over the ensemble at this iteration.
    pub fn mean_leaves(&self) -> f64 {
        let total: u32 = self.trees.iter().map(|s| s.n_leaves).sum();
        total as f64 / self.trees.len() as f64
    }

    /// Maximum tree depth over the ensemble at this iteration.
    pub fn max_depth(&self) -> u32 {
        self.trees.iter().map(|s| s.depth).max().unwrap_or(0)
    }
}

/// Writes one record per line as JSON.
pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<(), TraceError> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)
            .map_err(|e| TraceError::Io(std::io::Error::other(e)))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines trace, reporting the first corrupt record with its
/// 1-based line number. Blank lines are ignored.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|source| TraceError::Corrupt { line: idx + 1, source })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record(iteration: u32) -> TraceRecord {
        TraceRecord {
            chain: 0,
            iteration,
            trees: vec![TreeStats { n_leaves: 3, delta: 1, depth: 2 }],
            log_lik: -12.5,
            sigma2: Some(0.25),
            missing_rate: None,
            accepted: vec![true],
            moves: vec!["grow".into()],
        }
    }

    #[test]
    fn round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let records: Vec<_> = (0..5).map(sample_record).collect();
        write_trace(&path, &records).unwrap();
        assert_eq!(read_trace(&path).unwrap(), records);
    }

    #[test]
    fn corrupt_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let good = serde_json::to_string(&sample_record(0)).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n")).unwrap();
        match read_trace(&path) {
            Err(TraceError::Corrupt { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected corrupt-record error, got {other:?}"),
        }
    }
}
