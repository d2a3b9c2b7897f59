//! Line-delimited JSON helpers.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

impl JsonlError {
    fn io(path: &Path, source: io::Error) -> Self {
        JsonlError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Read every non-blank line of `path` as a `T`. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl_to<T: Serialize, W: Write>(
    writer: &mut W,
    items: impl IntoIterator<Item = T>,
) -> io::Result<usize> {
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut *writer, &item)?;
        writer.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}

pub fn write_jsonl<T: Serialize>(
    path: &Path,
    items: impl IntoIterator<Item = T>,
) -> Result<usize, JsonlError> {
    let file = File::create(path).map_err(|e| JsonlError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let n = write_jsonl_to(&mut writer, items).map_err(|e| JsonlError::io(path, e))?;
    writer.flush().map_err(|e| JsonlError::io(path, e))?;
    Ok(n)
}
