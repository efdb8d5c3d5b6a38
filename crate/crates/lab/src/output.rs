//! Reading inputs with diagnostics and writing result files.
//!
//! Outputs are staged in memory and written only once a command has finished
//! computing, so a failing command never leaves partial results behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{LabError, LabResult};

/// Parses a JSON file, reporting the line and column of any syntax or
/// validation error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> LabResult<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    parse_json(path, &text)
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> LabResult<T> {
    serde_json::from_str(text).map_err(|e| LabError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> LabResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)
        .map_err(|e| LabError::Runtime(format!("serializing report: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

/// RFC 4180 CSV with a header row.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> LabResult<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let err = |e: csv::Error| LabError::Runtime(format!("writing csv: {e}"));
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| LabError::Runtime(format!("writing csv: {e}")))
}

/// Files produced by one command, keyed by name relative to the output
/// directory.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Outputs::default()
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: impl Into<String>, value: &T) -> LabResult<()> {
        let bytes = json_bytes(value)?;
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    /// Writes every file under `dir`, each through a temporary file and a
    /// rename.
    pub fn commit(self, dir: &Path) -> LabResult<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in self.files {
            let path = dir.join(&name);
            let tmp = dir.join(format!(".{name}.tmp"));
            fs::write(&tmp, &bytes).map_err(|e| LabError::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| LabError::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Shortest round-trip decimal form of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
