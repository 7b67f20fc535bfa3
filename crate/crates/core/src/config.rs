//! Run configuration: the resolved settings of every module, built-in
//! presets, config files (JSON or TOML) and dotted-key overrides.
//!
//! Precedence is preset < file < overrides. Unknown keys are rejected at
//! every level.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalsuite::EvalConfig;
use crate::nets::ArchConfig;
use crate::synthworld::{SplitCounts, WorldConfig};
use crate::tfspace::StftConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub stft: StftConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Desk scale: full-size spectrograms, 2000 training composites.
    Desk,
    /// Original split sizes and schedule.
    Paper,
    /// Small grid and networks for the benchmark ablations.
    Bench,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" | "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            "bench" => Ok(Preset::Bench),
            _ => Err(Error::config(format!(
                "unknown preset `{s}` (expected default, desk, paper or bench)"
            ))),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Desk)
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => RunConfig {
                world: WorldConfig::default(),
                stft: StftConfig::default(),
                arch: ArchConfig::default(),
                train: TrainConfig::default(),
                eval: EvalConfig::default(),
            },
            Preset::Paper => RunConfig {
                world: WorldConfig::paper_scale(),
                train: TrainConfig::paper(),
                ..RunConfig::preset(Preset::Desk)
            },
            Preset::Bench => bench(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.stft.validate()?;
        self.arch.validate(self.stft.net_grid())?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.world.feature_dim != self.arch.feature_dim {
            return Err(Error::config(format!(
                "world.feature_dim {} differs from arch.feature_dim {}",
                self.world.feature_dim, self.arch.feature_dim
            )));
        }
        Ok(())
    }

    /// Resolves preset, optional file and overrides, then validates.
    pub fn resolve(preset: Preset, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(RunConfig::preset(preset))?;
        if let Some(path) = file {
            let mut f = read_file(path)?;
            if let Some(p) = f.as_object_mut().and_then(|o| o.remove("preset")) {
                let name = p
                    .as_str()
                    .ok_or_else(|| Error::config("`preset` must be a string"))?;
                v = serde_json::to_value(RunConfig::preset(name.parse()?))?;
            }
            merge(&mut v, f, "")?;
        }
        for o in overrides {
            set_dotted(&mut v, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(v).map_err(|e| Error::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `dotted.key=value` override.
    pub fn with_override(&self, kv: &str) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        set_dotted(&mut v, kv)?;
        serde_json::from_value(v).map_err(|e| Error::config(format!("invalid override `{kv}`: {e}")))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        crate::trainer::checkpoint::hex(&Sha256::digest(json))
    }
}

fn bench() -> RunConfig {
    let stft = StftConfig {
        window_length: 254,
        hop_length: 64,
        frames: 64,
        net_freq: 32,
        net_time: 32,
        ..StftConfig::default()
    };
    let world = WorldConfig {
        feature_dim: 16,
        base_sources: SplitCounts {
            train: 88,
            val: 22,
            test: 22,
        },
        samples: SplitCounts {
            train: 480,
            val: 32,
            test: 64,
        },
        ..WorldConfig::default()
    };
    let arch = ArchConfig {
        feature_dim: 16,
        audio_widths: vec![8, 16, 32],
        object_hidden: 32,
        ground_hidden: [32, 16],
        unet_base: 8,
        unet_max_width: 64,
        unet_levels: None,
        sep_channels: 16,
    };
    let train = TrainConfig {
        batch_size: 16,
        epochs_per_stage: 12,
        base_lr: 1e-3,
        lr_milestones: vec![6, 10],
        ..TrainConfig::default()
    };
    let eval = EvalConfig {
        filter_len: 128,
        ..EvalConfig::default()
    };
    RunConfig {
        world,
        stft,
        arch,
        train,
        eval,
    }
}

fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: invalid JSON: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: invalid TOML: {e}", path.display())))
    }
}

fn merge(base: &mut Value, over: Value, at: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => return Err(Error::config(format!("unknown configuration key `{path}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn set_dotted(v: &mut Value, kv: &str) -> Result<()> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{kv}` is not of the form key=value")))?;
    let key = key.trim();
    let mut cur = v;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("`{}` is not a section", parts[..i].join("."))))?;
        cur = obj
            .get_mut(*p)
            .ok_or_else(|| Error::config(format!("unknown configuration key `{key}`")))?;
    }
    let raw = raw.trim();
    *cur = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
