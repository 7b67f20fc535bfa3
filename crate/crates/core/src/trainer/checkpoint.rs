//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (architecture, STFT config, counters, tensor names and shapes), the
//! parameters, Adam first and second moments as little-endian `f64`, and a
//! trailing SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainMode;
use crate::error::{Error, Result};
use crate::nets::{AdamMoments, ArchConfig, Model, ModelState, ParamStore, Tensor};
use crate::tfspace::StftConfig;

const MAGIC: &[u8; 8] = b"CCOLCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A model state plus the ablation mode that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: ModelState,
    /// `None` for an untrained state.
    pub mode: Option<TrainMode>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    stft: StftConfig,
    mode: Option<TrainMode>,
    stage: u8,
    epoch: usize,
    step: u64,
    stage_complete: bool,
    adam_t: u64,
    tensors: Vec<(String, Vec<usize>)>,
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let s = &ckpt.state;
    let header = Header {
        arch: s.model.arch.clone(),
        stft: s.stft.clone(),
        mode: ckpt.mode,
        stage: s.stage,
        epoch: s.epoch,
        step: s.step,
        stage_complete: s.stage_complete,
        adam_t: s.moments.t,
        tensors: s
            .model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 24 + 24 * s.model.params.numel() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for group in [s.model.params.tensors(), &s.moments.m, &s.moments.v] {
        for t in group {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn corrupt(msg: &str) -> Error {
    Error::Checkpoint(format!("corrupt checkpoint: {msg}"))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 12 + 32 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let rest = &body[20..];
    if hlen > rest.len() {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&rest[..hlen])
        .map_err(|e| corrupt(&format!("bad header: {e}")))?;
    let mut payload = rest[hlen..].chunks_exact(8);
    if payload.remainder().len() != 0 {
        return Err(corrupt("payload is not a whole number of f64 values"));
    }
    let mut read_group = || -> Result<Vec<Tensor>> {
        header
            .tensors
            .iter()
            .map(|(_, shape)| {
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| {
                        payload
                            .next()
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .ok_or_else(|| corrupt("truncated payload"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Tensor::from_vec(shape, data))
            })
            .collect()
    };
    let params = read_group()?;
    let m = read_group()?;
    let v = read_group()?;
    if payload.next().is_some() {
        return Err(corrupt("trailing payload"));
    }
    let mut store = ParamStore::default();
    for ((name, _), t) in header.tensors.iter().zip(params) {
        store.push(name, t);
    }
    let model = Model::with_params(header.arch, header.stft.net_grid(), store)?;
    Ok(Checkpoint {
        state: ModelState {
            model,
            stft: header.stft,
            moments: AdamMoments {
                m,
                v,
                t: header.adam_t,
            },
            stage: header.stage,
            epoch: header.epoch,
            step: header.step,
            stage_complete: header.stage_complete,
        },
        mode: header.mode,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and checks it against the architecture and STFT config
/// the caller expects.
pub fn load_expecting(path: &Path, arch: &ArchConfig, stft: &StftConfig) -> Result<Checkpoint> {
    let ck = load(path)?;
    if ck.state.stft != *stft {
        return Err(Error::Checkpoint(format!(
            "{}: STFT configuration differs from the run configuration",
            path.display()
        )));
    }
    if ck.state.model.arch != *arch {
        // Rebuild against the expected architecture to name the first mismatch.
        let params = ck.state.model.params.clone();
        Model::with_params(arch.clone(), stft.net_grid(), params)?;
        return Err(Error::Checkpoint(format!(
            "{}: architecture config differs from the run configuration",
            path.display()
        )));
    }
    Ok(ck)
}

/// Hex SHA-256 of a checkpoint's encoding.
pub fn checksum(ckpt: &Checkpoint) -> Result<String> {
    Ok(hex(&Sha256::digest(encode(ckpt)?)))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ArchConfig, StftConfig) {
        let stft = StftConfig {
            window_length: 62,
            hop_length: 16,
            frames: 16,
            net_freq: 16,
            net_time: 16,
            ..StftConfig::default()
        };
        let arch = ArchConfig {
            feature_dim: 4,
            audio_widths: vec![3],
            object_hidden: 4,
            ground_hidden: [4, 3],
            unet_base: 2,
            unet_max_width: 4,
            unet_levels: Some(1),
            sep_channels: 3,
        };
        (arch, stft)
    }

    fn state() -> Checkpoint {
        let (arch, stft) = tiny();
        let mut s = ModelState::fresh(arch, stft, 5).unwrap();
        s.moments.m[0].data_mut()[0] = 0.25;
        s.moments.t = 3;
        s.stage = 2;
        s.epoch = 4;
        s.step = 17;
        s.stage_complete = false;
        Checkpoint {
            state: s,
            mode: Some(TrainMode::Ccol),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let ck = state();
        save(&a, &ck).unwrap();
        let back = load(&a).unwrap();
        save(&b, &back).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(back.state.model.params.tensors(), ck.state.model.params.tensors());
        assert_eq!(back.state.moments, ck.state.moments);
        assert_eq!(
            (back.state.stage, back.state.epoch, back.state.step, back.state.stage_complete),
            (2, 4, 17, false)
        );
        assert_eq!(back.mode, Some(TrainMode::Ccol));
    }

    #[test]
    fn corruption_and_version_are_detected() {
        let mut bytes = encode(&state()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(m)) if m.contains("checksum")));

        let mut bytes = encode(&state()).unwrap();
        bytes[8] = 9;
        let n = bytes.len() - 32;
        let d = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&d);
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(m)) if m.contains("version 9")));
        assert!(decode(b"nonsense").is_err());
    }

    #[test]
    fn wrong_architecture_names_the_mismatched_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save(&p, &state()).unwrap();
        let (mut arch, stft) = tiny();
        arch.object_hidden = 5;
        match load_expecting(&p, &arch, &stft) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("shape mismatch for object.fc0"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
