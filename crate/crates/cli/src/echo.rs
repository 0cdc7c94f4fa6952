//! Config echoes: the effective parameters of a run, written as TOML and
//! referenced by hash from every CSV the run produces.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct Echo {
    text: String,
    hash: String,
}

impl Echo {
    pub fn new<T: Serialize>(body: &T) -> anyhow::Result<Self> {
        let text = toml::to_string(body).context("serializing config echo")?;
        Ok(Self::from_text(text))
    }

    pub fn from_text(text: String) -> Self {
        let hash = hex(&Sha256::digest(text.as_bytes()));
        Echo { text, hash }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// The leading comment line of every CSV output.
    pub fn csv_comment(&self) -> String {
        format!("# config_sha256={}", self.hash)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        fs::write(path, &self.text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Echo path for a single-file output: `<out>.config.toml`.
pub fn sidecar(out: &Path) -> std::path::PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.toml");
    out.with_file_name(name)
}
