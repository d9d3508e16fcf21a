use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{rel, PipelineConfig, Stage};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the output root for pipeline files, as given otherwise.
    pub path: PathBuf,
    pub sha256: String,
}

/// What a stage read and wrote, with content hashes. Carries no timestamps,
/// so identical reruns produce identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn hash_all(out: &Path, paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    let mut v = paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: rel(out, p),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    v.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(v)
}

impl Manifest {
    pub fn build(
        stage: Stage,
        cfg: &PipelineConfig,
        out: &Path,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<Self> {
        Ok(Self {
            stage: stage.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: hex::encode(Sha256::digest(cfg.hash_text()?.as_bytes())),
            inputs: hash_all(out, inputs)?,
            outputs: hash_all(out, outputs)?,
        })
    }

    pub fn path(out: &Path, stage: Stage) -> PathBuf {
        out.join("manifests").join(format!("{}.json", stage.name()))
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let stage: Stage = self.stage.parse()?;
        let path = Self::path(out, stage);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub fn read_manifest(out: &Path, stage: Stage) -> Result<Manifest> {
    let path = Manifest::path(out, stage);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
