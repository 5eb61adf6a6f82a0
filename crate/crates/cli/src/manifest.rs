//! Run manifests and output-directory bookkeeping.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::KeyError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fingerprint {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn fingerprint(path: &Path) -> io::Result<Fingerprint> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(Fingerprint {
        path: path.display().to_string(),
        bytes,
        sha256: hex::encode(hasher.finalize()),
    })
}

/// Everything needed to rerun a command: resolved settings, input
/// fingerprints, seed and tool version. Contains no timestamps, so reruns
/// produce identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<&'static str, String>,
    pub inputs: Vec<Fingerprint>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: BTreeMap<&'static str, String>, inputs: Vec<Fingerprint>) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config,
            inputs,
        }
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(self)?)
    }
}

/// Writes through a sibling temp file so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

/// Creates `dir`, refusing to reuse it when `marker` shows a completed run
/// unless `force` is set.
pub fn prepare_out_dir(dir: &Path, marker: &str, force: bool) -> Result<PathBuf, KeyError> {
    if dir.join(marker).exists() && !force {
        return Err(KeyError::new(
            "out",
            format!(
                "{} already holds a completed run (pass --force to overwrite)",
                dir.display()
            ),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| KeyError::new("out", format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}
