//! Line-by-line comparison of two event logs.

use std::path::Path;

use microcrowd_core::store::read_lines;
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Comparison {
    Identical,
    /// First seq at which the logs differ; a missing line counts.
    Diverges { seq: u64 },
}

/// Compares two logs already read into lines; line `i` holds seq `i + 1`.
pub fn compare_lines(a: &[String], b: &[String]) -> Comparison {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Comparison::Diverges { seq: i as u64 + 1 },
        None if a.len() == b.len() => Comparison::Identical,
        None => Comparison::Diverges { seq: a.len().min(b.len()) as u64 + 1 },
    }
}

/// Reads both logs, checking every line's checksum, and compares them.
pub fn compare_runs(a: &Path, b: &Path) -> Result<Comparison, SimError> {
    let a = read_lines(a).map_err(|e| SimError::CorruptLog(format!("{}: {e}", a.display())))?;
    let b = read_lines(b).map_err(|e| SimError::CorruptLog(format!("{}: {e}", b.display())))?;
    Ok(compare_lines(&a, &b))
}
