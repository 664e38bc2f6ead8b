//! JSON-lines helpers shared by every file format in the toolkit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|source| JsonlError::Io { path: shown.clone(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| JsonlError::Io { path: shown.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: shown.clone(),
            line: i + 1,
            source,
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Reads a file if it exists; a missing file is an empty list.
pub fn read_if_exists<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    if path.exists() {
        read(path)
    } else {
        Ok(Vec::new())
    }
}

pub fn to_string<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("serializable record"));
        s.push('\n');
    }
    s
}

pub fn write<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let shown = path.display().to_string();
    let io = |source| JsonlError::Io { path: shown.clone(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(to_string(items).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}

pub fn append<T: Serialize>(path: &Path, item: &T) -> Result<(), JsonlError> {
    let shown = path.display().to_string();
    let io = |source| JsonlError::Io { path: shown.clone(), source };
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut line = serde_json::to_string(item).expect("serializable record");
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(io)
}
