//! Deployment manifests: fixed-size digests over a package tree so an
//! operator can verify an installation before pointing workers at it.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Digest family used by manifests. Recorded in the file so vectors stay
/// self-describing.
pub const DIGEST_ALGO: &str = "sha256";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest root {0:?} is not readable: {1}")]
    RootUnreadable(PathBuf, std::io::Error),

    #[error("unsupported digest algorithm {0:?} (expected {DIGEST_ALGO:?})")]
    UnsupportedDigest(String),

    #[error("io error on {0:?}: {1}")]
    Io(PathBuf, std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    /// Path relative to the package root, `/`-separated.
    pub path: String,
    pub bytes: u64,
    /// Hex-encoded digest, lowercase.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub package_version: String,
    pub digest_algo: String,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FileStatus {
    Ok,
    Missing,
    SizeMismatch,
    DigestMismatch,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileReport {
    pub path: String,
    pub status: FileStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub pass: bool,
    pub files: Vec<FileReport>,
}

fn digest_file(path: &Path) -> std::io::Result<(u64, String)> {
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        total += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok((total, hex::encode(hasher.finalize())))
}

/// Builds a manifest over the given paths (relative to `root`).
pub fn build_manifest(
    root: &Path,
    paths: &[&str],
    package_version: &str,
) -> Result<Manifest, ManifestError> {
    let mut files = Vec::with_capacity(paths.len());
    for p in paths {
        let full = root.join(p);
        let (bytes, digest) = digest_file(&full).map_err(|e| ManifestError::Io(full.clone(), e))?;
        files.push(ManifestFile {
            path: (*p).to_string(),
            bytes,
            digest,
        });
    }
    Ok(Manifest {
        package_version: package_version.to_string(),
        digest_algo: DIGEST_ALGO.to_string(),
        files,
    })
}

/// Checks every manifest entry against the tree under `root`.
///
/// An unreadable root is an error; a missing individual file is a per-file
/// `MISSING` status. Size is checked before the digest so truncation is
/// reported as `SIZE_MISMATCH` even though the digest differs too.
pub fn verify_manifest(
    manifest: &Manifest,
    root: &Path,
) -> Result<VerificationReport, ManifestError> {
    if manifest.digest_algo != DIGEST_ALGO {
        return Err(ManifestError::UnsupportedDigest(
            manifest.digest_algo.clone(),
        ));
    }
    std::fs::read_dir(root).map_err(|e| ManifestError::RootUnreadable(root.to_path_buf(), e))?;
    let mut files = Vec::with_capacity(manifest.files.len());
    for entry in &manifest.files {
        let full = root.join(&entry.path);
        let status = match digest_file(&full) {
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => FileStatus::Missing,
            Err(e) => return Err(ManifestError::Io(full, e)),
            Ok((bytes, _)) if bytes != entry.bytes => FileStatus::SizeMismatch,
            Ok((_, digest)) if digest != entry.digest => FileStatus::DigestMismatch,
            Ok(_) => FileStatus::Ok,
        };
        files.push(FileReport {
            path: entry.path.clone(),
            status,
        });
    }
    let pass = files.iter().all(|f| f.status == FileStatus::Ok);
    Ok(VerificationReport { pass, files })
}

pub fn read_manifest_file(path: &Path) -> Result<Manifest, ManifestError> {
    let data = std::fs::read(path).map_err(|e| ManifestError::Io(path.to_path_buf(), e))?;
    Ok(serde_json::from_slice(&data)?)
}

pub fn write_manifest_file(path: &Path, manifest: &Manifest) -> Result<(), ManifestError> {
    let data = serde_json::to_vec_pretty(manifest)?;
    std::fs::write(path, data).map_err(|e| ManifestError::Io(path.to_path_buf(), e))
}
