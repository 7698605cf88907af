//! Small helpers for the TOML manifests that sit next to tensor files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Document {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Document {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolves a path stored in a manifest relative to the manifest's directory.
pub fn sibling(manifest: &Path, name: &str) -> PathBuf {
    match manifest.parent() {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

/// File stem used to derive tensor file names next to a manifest.
pub fn stem(manifest: &Path) -> String {
    manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
