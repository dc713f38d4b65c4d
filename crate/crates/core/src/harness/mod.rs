//! Benchmark generation, reports and file plumbing.

pub mod gen;
pub mod report;

use std::io::Write;
use std::path::Path;

use crate::error::{CrvError, Result};

pub use gen::{generate_benchmark, is_robust, GenConfig, GenSummary};
pub use report::{
    emit_report, format_speedup, parse_summary_csv, sha256_hex, speedup, summarize, CascadeReport, ReportFormat,
    ReportMeta, SummaryRow,
};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CrvError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CrvError::io(path, e))?;
    tmp.persist(path).map_err(|e| CrvError::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        let missing = dir.path().join("no/such/dir/out.txt");
        assert!(matches!(write_atomic(&missing, b"x"), Err(CrvError::Io { .. })));
    }
}
