//! Artifact bookkeeping: atomic writes, hashes and the per-command manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::GlobalArgs;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes through a temporary sibling and renames it into place, so the
/// final name only ever holds a complete file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    /// Reusable as `--config` to repeat the run.
    config_file: String,
    config: serde_json::Value,
    inputs: &'a BTreeMap<String, FileRecord>,
    artifacts: &'a BTreeMap<String, FileRecord>,
}

/// Collects inputs and outputs of one command and writes its manifest.
pub struct Run {
    command: &'static str,
    out: PathBuf,
    seed: u64,
    inputs: BTreeMap<String, FileRecord>,
    artifacts: BTreeMap<String, FileRecord>,
}

impl Run {
    pub fn start(command: &'static str, global: &GlobalArgs) -> anyhow::Result<Self> {
        fs::create_dir_all(&global.out)
            .with_context(|| format!("creating {}", global.out.display()))?;
        Ok(Run {
            command,
            out: global.out.clone(),
            seed: global.seed,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        })
    }

    /// Reads an input file, recording its hash.
    pub fn read(&mut self, role: &str, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(
            role.to_string(),
            FileRecord {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            },
        );
        Ok(bytes)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        self.artifacts.insert(
            name.to_string(),
            FileRecord {
                path: path.display().to_string(),
                sha256: sha256_hex(bytes),
            },
        );
        Ok(path)
    }

    /// Writes `<command>.toml` (the resolved flags) and `<command>.manifest.json`.
    pub fn finish<A: Serialize>(mut self, global: &GlobalArgs, args: &A) -> anyhow::Result<()> {
        let mut top = toml::Table::try_from(global).context("serializing global flags")?;
        let section = toml::Table::try_from(args).context("serializing flags")?;
        top.insert(self.command.to_string(), toml::Value::Table(section.clone()));
        let config_name = format!("{}.toml", self.command);
        self.write(&config_name, toml::to_string(&top)?.as_bytes())?;
        let mut config = serde_json::to_value(global)?;
        if let (Some(obj), serde_json::Value::Object(flags)) = (config.as_object_mut(), serde_json::to_value(args)?) {
            obj.extend(flags);
        }
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config_file: config_name,
            config,
            inputs: &self.inputs,
            artifacts: &self.artifacts,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.out.join(format!("{}.manifest.json", self.command));
        write_atomic(&path, text.as_bytes())
    }
}
