//! Output bookkeeping: every file a command writes is hashed and recorded in
//! `manifest.txt` next to the effective configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use scaleflow::csv::CsvTable;
use scaleflow::kv::KvBlock;
use scaleflow::{Error, FieldStack};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, MANIFEST_PREFIX};
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes files below the run directory and remembers their hashes.
pub struct Outputs {
    root: PathBuf,
    written: Vec<(String, String)>,
}

impl Outputs {
    pub fn new(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| io(&path, e))?;
        self.written.retain(|(r, _)| r != rel);
        self.written.push((rel.to_string(), sha256_hex(bytes)));
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn fields(&mut self, rel: &str, stack: &FieldStack) -> Result<PathBuf, CliError> {
        self.bytes(rel, &scaleflow::wfld::encode(stack))
    }

    pub fn csv(&mut self, rel: &str, table: &CsvTable) -> Result<PathBuf, CliError> {
        self.bytes(rel, table.render().as_bytes())
    }

    pub fn text(&mut self, rel: &str, text: &str) -> Result<PathBuf, CliError> {
        self.bytes(rel, text.as_bytes())
    }

    pub fn written(&self) -> &[(String, String)] {
        &self.written
    }
}

/// Merges this command's record into `<out>/manifest.txt`.
///
/// The file holds the effective configuration (readable again with
/// `--config`), followed by `manifest.*` entries: version, configuration
/// hash, commands run, derived seeds and output hashes.
pub fn update(
    cfg: &RunConfig,
    command: &str,
    seeds: &[(&str, u64)],
    outputs: &Outputs,
) -> Result<(), CliError> {
    let path = cfg.out.join(MANIFEST_FILE);
    let recorded = cfg.recorded();
    let config_hash = sha256_hex(recorded.to_string().as_bytes());

    let mut previous = KvBlock::new();
    if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        let old = KvBlock::parse(&text)?;
        if old.get("manifest.config_sha256") == Some(config_hash.as_str()) {
            for (k, v) in old.iter() {
                if k.starts_with(MANIFEST_PREFIX) {
                    previous.set(k, v);
                }
            }
        } else {
            log::warn!("{} was written with a different configuration; starting a new record", path.display());
        }
    }

    let mut commands: Vec<String> = previous
        .get("manifest.commands")
        .map(|c| c.split(',').filter(|s| !s.is_empty()).map(String::from).collect())
        .unwrap_or_default();
    if !commands.iter().any(|c| c == command) {
        commands.push(command.to_string());
    }

    let mut block = recorded;
    block.set("manifest.version", env!("CARGO_PKG_VERSION"));
    block.set("manifest.config_sha256", &config_hash);
    block.set("manifest.commands", commands.join(","));
    for (k, v) in previous.iter() {
        block.set(k, v);
    }
    block.set("manifest.commands", commands.join(","));
    for (name, seed) in seeds {
        block.set(&format!("manifest.seed.{name}"), seed);
    }
    for (rel, hash) in outputs.written() {
        block.set(&format!("manifest.output.{rel}"), hash);
    }
    std::fs::write(&path, block.to_string()).map_err(|e| io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
