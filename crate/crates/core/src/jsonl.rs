//! Line-delimited JSON helpers. Blank lines are skipped; line numbers in
//! errors are 1-based.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("failed to encode record: {0}")]
    Encode(#[source] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl JsonlError {
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}

pub fn parse_lines<T, I>(lines: I) -> Result<Vec<T>, JsonlError>
where
    T: DeserializeOwned,
    I: IntoIterator<Item = io::Result<String>>,
{
    let mut out = Vec::new();
    for (i, line) in lines.into_iter().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

/// Parses records and keeps each one's 1-based line number.
pub fn parse_lines_numbered<T, I>(lines: I) -> Result<Vec<(usize, T)>, JsonlError>
where
    T: DeserializeOwned,
    I: IntoIterator<Item = io::Result<String>>,
{
    let mut out = Vec::new();
    for (i, line) in lines.into_iter().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, JsonlError> {
    parse_lines(BufReader::new(File::open(path)?).lines())
}

pub fn read_jsonl_numbered<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<(usize, T)>, JsonlError> {
    parse_lines_numbered(BufReader::new(File::open(path)?).lines())
}

pub fn write_jsonl_to<T: Serialize, W: Write>(items: &[T], w: W) -> Result<(), JsonlError> {
    let mut w = BufWriter::new(w);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(JsonlError::Encode)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<(), JsonlError> {
    write_jsonl_to(items, File::create(path)?)
}
