//! Output-directory manifest: every artifact a recipe writes, with a sha256
//! content hash, so reruns can be diffed byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
struct ManifestDoc<'a> {
    recipe: &'a str,
    seed: u64,
    artifacts: &'a BTreeMap<String, String>,
}

/// Collects artifact hashes as files are written and renders `manifest.json`.
pub struct Manifest {
    recipe: String,
    seed: u64,
    out_dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(recipe: &str, seed: u64, out_dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Data(format!("create `{}`: {e}", out_dir.display())))?;
        Ok(Self {
            recipe: recipe.to_string(),
            seed,
            out_dir: out_dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes one artifact under the output directory and records its hash.
    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, bytes.as_ref())
            .map_err(|e| CliError::Data(format!("write `{}`: {e}", path.display())))?;
        self.record(name)
    }

    /// Records an already-written artifact (for writers that stream to disk).
    pub fn record(&mut self, name: &str) -> Result<(), CliError> {
        let path = self.path(name);
        let bytes = std::fs::read(&path)
            .map_err(|e| CliError::Data(format!("read back `{}`: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        self.artifacts.insert(name.to_string(), hex_string(&digest));
        Ok(())
    }

    /// Serializes the manifest document; artifact order is the sorted path
    /// order, so the bytes are deterministic.
    pub fn render(&self) -> String {
        let doc = ManifestDoc {
            recipe: &self.recipe,
            seed: self.seed,
            artifacts: &self.artifacts,
        };
        let mut json = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        json.push('\n');
        json
    }

    pub fn finish(self) -> Result<(), CliError> {
        let rendered = self.render();
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, rendered)
            .map_err(|e| CliError::Data(format!("write `{}`: {e}", path.display())))?;
        Ok(())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
