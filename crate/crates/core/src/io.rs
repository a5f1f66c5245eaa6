//! Artifact file helpers: atomic writes, JSON, little-endian f32 buffers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Provenance attached to every artifact header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ArtifactMeta {
    pub schema_version: u32,
    pub config_hash: String,
}

impl ArtifactMeta {
    pub fn new(config_hash: impl Into<String>) -> Self {
        ArtifactMeta {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.into(),
        }
    }

    pub fn check(&self, path: &Path) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::artifact(
                path,
                format!(
                    "schema version {} does not match expected {}",
                    self.schema_version, SCHEMA_VERSION
                ),
            ));
        }
        Ok(())
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes to a sibling temp file and renames it into place, so readers never
/// observe a truncated artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_required(path)?;
    serde_json::from_slice(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a file, reporting a missing file as an artifact error naming the path.
pub fn read_required(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::artifact(path, "required artifact is missing"))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f32_from_le_bytes(path: &Path, bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::artifact(path, format!("length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/a.bin");
        write_atomic(&path, b"abc").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"abc");
        assert!(!tmp_path(&path).exists());
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_required(Path::new("/nonexistent/graph.json")).unwrap_err();
        assert!(err.to_string().contains("graph.json"));
    }

    #[test]
    fn f32_bytes_are_little_endian() {
        let b = f32_to_le_bytes(&[1.0]);
        assert_eq!(b, vec![0, 0, 0x80, 0x3f]);
        assert_eq!(f32_from_le_bytes(Path::new("x"), &b).unwrap(), vec![1.0]);
        assert!(f32_from_le_bytes(Path::new("x"), &b[..3]).is_err());
    }
}
