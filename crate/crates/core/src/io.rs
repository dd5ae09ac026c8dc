//! Line-delimited JSON artifacts. The first line of every file is a header
//! record `{"header": {...}}`; each following line is one record.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactHeader {
    pub artifact: String,
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactHeader {
    pub fn new(artifact: impl Into<String>, config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            artifact: artifact.into(),
            format_version: FORMAT_VERSION,
            config_hash: config_hash.into(),
            seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ArtifactHeader,
}

pub fn to_jsonl<T: Serialize>(header: &ArtifactHeader, records: &[T]) -> Result<String> {
    let mut out = serde_json::to_string(&HeaderLine { header: header.clone() })?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: &ArtifactHeader, records: &[T]) -> Result<()> {
    write_file(path, to_jsonl(header, records)?.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(ArtifactHeader, Vec<T>)> {
    if !path.exists() {
        return Err(Error::Missing { what: "record file", path: path.to_path_buf() });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |detail: String| Error::Record { path: path.to_path_buf(), detail };
    let first = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let header: HeaderLine = serde_json::from_str(first).map_err(|e| bad(format!("header: {e}")))?;
    let records = lines
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(format!("line {}: {e}", i + 2))))
        .collect::<Result<Vec<T>>>()?;
    Ok((header.header, records))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
