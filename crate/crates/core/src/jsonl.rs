//! Versioned JSONL files. Every record carries `"schema": "lenspipe/v1"`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA: &str = "lenspipe/v1";

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema: String,
    #[serde(flatten)]
    record: T,
}

#[derive(Serialize)]
struct VersionedRef<'a, T> {
    schema: &'static str,
    #[serde(flatten)]
    record: &'a T,
}

/// Serializes one record as a schema-tagged JSON line (no trailing newline).
pub fn to_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(&VersionedRef {
        schema: SCHEMA,
        record,
    })
    .expect("records serialize to JSON")
}

/// Parses one schema-tagged line.
pub fn from_line<T: DeserializeOwned>(line: &str) -> Result<T, String> {
    let v: Versioned<T> = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if v.schema != SCHEMA {
        return Err(format!("unsupported schema {:?}, expected {SCHEMA:?}", v.schema));
    }
    Ok(v.record)
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_with(path, from_line)
}

/// Reads unversioned JSONL, such as raw review logs.
pub fn read_plain<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    read_with(path, |line| serde_json::from_str(line).map_err(|e| e.to_string()))
}

fn read_with<T>(path: &Path, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line).map_err(|message| JsonlError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}

pub fn write<'a, T, I>(path: &Path, records: I) -> Result<(), JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let io_err = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        writeln!(w, "{}", to_line(r)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
