//! Run manifests and write-once output directories.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// One command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub wall_seconds: f64,
}

/// The single manifest of a directory; runs are only ever appended.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub runs: Vec<RunManifest>,
}

impl ManifestFile {
    pub fn read(dir: &Path) -> Result<Option<Self>, CliError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    /// Most recent run of `command`.
    pub fn last(&self, command: &str) -> Option<&RunManifest> {
        self.runs.iter().rev().find(|r| r.command == command)
    }
}

pub fn versions() -> BTreeMap<String, String> {
    [
        ("jitai-core".to_string(), jitai_core::VERSION.to_string()),
        ("jitai-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ]
    .into_iter()
    .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path, label: String) -> Result<FileDigest, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: label,
        sha256: sha256_hex(&bytes),
    })
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// An output directory that records a checksum for every file written.
pub struct OutDir {
    root: PathBuf,
    outputs: Vec<FileDigest>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        write_atomic(&path, bytes)?;
        self.outputs.retain(|d| d.path != rel);
        self.outputs.push(FileDigest {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn outputs(&self) -> &[FileDigest] {
        &self.outputs
    }

    /// Appends `run` to the directory's manifest.
    pub fn finish(self, mut run: RunManifest) -> Result<PathBuf, CliError> {
        run.outputs = self.outputs;
        let mut file = ManifestFile::read(&self.root)?.unwrap_or_default();
        file.runs.push(run);
        let mut text = serde_json::to_string_pretty(&file).expect("manifest serializes");
        text.push('\n');
        let path = self.root.join(MANIFEST);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
