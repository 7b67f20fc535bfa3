//! Resolved configuration, output layout and provenance records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ccol_core::config::{Preset, RunConfig};
use ccol_core::synthworld::{EntrySource, Manifest, Split, SynthWorld};
use ccol_core::trainer::{Dataset, SampleLoader};
use ccol_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::GlobalArgs;

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl Context {
    /// Resolves the configuration before any work starts; `extra` overrides
    /// come from subcommand flags and win over `--set`.
    pub fn new(g: &GlobalArgs, extra: &[String]) -> Result<Self> {
        let preset: Preset = g.preset.parse()?;
        let mut overrides = g.overrides.clone();
        overrides.extend_from_slice(extra);
        if g.workers == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        Ok(Context {
            config: RunConfig::resolve(preset, g.config.as_deref(), &overrides)?,
            out: g.out.clone(),
            force: g.force,
        })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn manifest_path(&self, split: Split) -> PathBuf {
        self.data_dir().join(format!("{}.jsonl", split.name()))
    }

    /// The run config the data directory was built with. Its world and STFT
    /// settings must match the current ones, since synthetic samples are
    /// regenerated from them.
    pub fn data_config(&self) -> Result<RunConfig> {
        let path = self.data_dir().join("provenance.json");
        if !path.exists() {
            return Ok(self.config.clone());
        }
        let p: Provenance = serde_json::from_slice(&std::fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        if p.config.world != self.config.world || p.config.stft != self.config.stft {
            return Err(Error::Config(format!(
                "{} was built with different world/stft settings; rebuild the dataset or pass matching --set overrides",
                self.data_dir().display()
            )));
        }
        Ok(p.config)
    }

    /// Loads a manifest with the loader its entries need.
    pub fn dataset(&self, path: &Path, split: Split) -> Result<Dataset> {
        let manifest = Manifest::read(path, split)?;
        let external = manifest
            .entries
            .first()
            .map(|e| e.source().map(|s| matches!(s, EntrySource::External(_))))
            .transpose()?
            .unwrap_or(false);
        let loader = if external {
            SampleLoader::External(self.config.stft.clone())
        } else {
            let cfg = self.data_config()?;
            if manifest.world_seed != cfg.world.world_seed && !manifest.is_empty() {
                return Err(Error::Config(format!(
                    "{} was generated with world seed {}, config has {}",
                    path.display(),
                    manifest.world_seed,
                    cfg.world.world_seed
                )));
            }
            SampleLoader::Synthetic(SynthWorld::new(cfg.world, cfg.stft)?)
        };
        Dataset::new(manifest, loader)
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Fails unless `path` is absent or `--force` was given.
pub fn check_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// What produced a set of outputs. Contains no timestamps, so reruns with
/// identical inputs write identical records.
#[derive(Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    /// Input files and their SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Provenance {
            tool: "ccol".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config.hash(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let s = ccol_core::evalsuite::report::to_json(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}
