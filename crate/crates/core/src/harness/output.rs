//! Output files: CSV tables, JSON reports and the metadata sidecar.
//!
//! Files are rendered in memory and each one is moved into place with a
//! single rename, so a failed command never leaves a half-written file.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};

/// A named output file.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: Vec<u8>,
}

impl OutputFile {
    pub fn new(name: impl Into<String>, contents: impl Into<Vec<u8>>) -> Self {
        OutputFile {
            name: name.into(),
            contents: contents.into(),
        }
    }

    pub fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Result<Self> {
        let mut s = serde_json::to_string_pretty(value)
            .map_err(|e| Error::invalid(format!("cannot encode JSON: {e}")))?;
        s.push('\n');
        Ok(OutputFile::new(name, s))
    }
}

/// CSV writer with the crate's dialect: comma, header row, LF.
pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Builds a CSV file from a header and string rows.
pub fn csv_file(name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<OutputFile> {
    let mut w = csv_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(OutputFile::new(name, bytes))
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Run metadata written next to the outputs as `<command>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub kind: String,
    pub seed: Option<u64>,
    pub rng: &'static str,
    /// Seconds since the Unix epoch; absent with `--no-timestamp`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    pub files: Vec<String>,
    /// The experiment file as executed, after overrides.
    pub spec: String,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes every file and the sidecar into `dir`; returns the paths written.
pub fn write_all(dir: &Path, files: &[OutputFile], meta: &Metadata) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(files.len() + 1);
    for f in files {
        let p = dir.join(&f.name);
        write_atomic(&p, &f.contents)?;
        written.push(p);
    }
    let side = OutputFile::json(format!("{}.meta.json", meta.command), meta)?;
    let p = dir.join(&side.name);
    write_atomic(&p, &side.contents)?;
    written.push(p);
    Ok(written)
}

/// Shortest round-trip representation.
pub(crate) fn num(x: f64) -> String {
    format!("{x}")
}

pub(crate) fn fixed4(x: f64) -> String {
    format!("{x:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_dialect() {
        let f = csv_file("t.csv", &["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
        assert_eq!(String::from_utf8(f.contents).unwrap(), "a,b\n1,\"x,y\"\n");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
