//! External data adapter. A mapping file lists videos, each pairing one WAV
//! with one feature record per object candidate:
//!
//! ```json
//! {"entry_id": "cello-03", "audio": "cello-03.wav", "features": ["c03-0.json", "c03-1.bin"], "audible": [true, false]}
//! ```
//!
//! One JSON object per line; `audible` is optional. Feature records are JSON
//! arrays of numbers or flat little-endian `f32` files (`.bin`).

use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    wav, AudioClip, CompositeSample, CompositionMode, ExternalVideo, Manifest, ObjectCandidate,
    SampleDescriptor, Split,
};
use crate::error::{Error, Result};
use crate::tfspace::StftConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingEntry {
    pub entry_id: String,
    pub audio: PathBuf,
    pub features: Vec<PathBuf>,
    #[serde(default)]
    pub audible: Option<Vec<bool>>,
}

fn ingestion(entry: &str, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        entry: entry.to_string(),
        reason: reason.into(),
    }
}

pub fn load_feature_record(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = if path.extension().is_some_and(|e| e == "bin") {
        if bytes.len() % 4 != 0 {
            return Err(Error::input(format!(
                "{}: length {} is not a multiple of 4 bytes",
                path.display(),
                bytes.len()
            )));
        }
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect()
    } else {
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::input(format!("{}: {e}", path.display())))?
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input(format!("{}: non-finite feature value", path.display())));
    }
    Ok(values)
}

/// Validates every mapped entry and returns a manifest referencing the files.
/// Each manifest entry is one video; consecutive entries are paired into
/// composites at load time.
pub fn ingest_external(
    audio_dir: &Path,
    feature_dir: &Path,
    mapping_file: &Path,
    split: Split,
    stft: &StftConfig,
    feature_dim: usize,
) -> Result<Manifest> {
    let f = std::fs::File::open(mapping_file).map_err(|e| Error::io(mapping_file, e))?;
    let mut entries = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(mapping_file, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let m: MappingEntry = serde_json::from_str(&line)
            .map_err(|e| ingestion(&format!("line {}", n + 1), e.to_string()))?;
        let video = validate_entry(&m, audio_dir, feature_dir, stft, feature_dim)?;
        entries.push(SampleDescriptor {
            sample_id: m.entry_id.clone(),
            split,
            mode: CompositionMode::Solo,
            base_ids: vec![m.entry_id],
            seeds: None,
            paths: Some(video),
        });
    }
    Ok(Manifest {
        split,
        world_seed: 0,
        entries,
    })
}

fn validate_entry(
    m: &MappingEntry,
    audio_dir: &Path,
    feature_dir: &Path,
    stft: &StftConfig,
    feature_dim: usize,
) -> Result<ExternalVideo> {
    let id = &m.entry_id;
    if m.features.is_empty() {
        return Err(ingestion(id, "no object feature records"));
    }
    if let Some(a) = &m.audible {
        if a.len() != m.features.len() {
            return Err(ingestion(
                id,
                format!("{} audibility labels for {} objects", a.len(), m.features.len()),
            ));
        }
    }
    let audio = audio_dir.join(&m.audio);
    if !audio.is_file() {
        return Err(ingestion(id, format!("missing audio file {}", audio.display())));
    }
    let data = wav::read(&audio).map_err(|e| ingestion(id, e.to_string()))?;
    if data.channels != 1 {
        return Err(ingestion(id, format!("{} channels; expected mono", data.channels)));
    }
    if data.sample_rate != stft.sample_rate {
        return Err(ingestion(
            id,
            format!(
                "sample rate {} Hz, expected {} Hz; resample first (e.g. `sox in.wav -r {} out.wav`)",
                data.sample_rate, stft.sample_rate, stft.sample_rate
            ),
        ));
    }
    let mut features = Vec::with_capacity(m.features.len());
    for f in &m.features {
        let p = feature_dir.join(f);
        if !p.is_file() {
            return Err(ingestion(id, format!("missing feature record {}", p.display())));
        }
        let v = load_feature_record(&p).map_err(|e| ingestion(id, e.to_string()))?;
        if v.len() != feature_dim {
            return Err(ingestion(
                id,
                format!("{}: dimension {} != {feature_dim}", p.display(), v.len()),
            ));
        }
        features.push(p);
    }
    Ok(ExternalVideo {
        audio,
        features,
        audible: m.audible.clone(),
    })
}

/// Loads one external video, zero-padding or trimming audio to the clip length.
pub(crate) fn load_video(
    entry: &SampleDescriptor,
    stft: &StftConfig,
) -> Result<(Vec<ObjectCandidate>, AudioClip)> {
    let v = entry
        .paths
        .as_ref()
        .ok_or_else(|| Error::input(format!("entry {} has no file paths", entry.sample_id)))?;
    let id = &entry.sample_id;
    let data = wav::read(&v.audio).map_err(|e| ingestion(id, e.to_string()))?;
    if data.sample_rate != stft.sample_rate {
        return Err(ingestion(id, "sample rate changed since ingestion"));
    }
    let mut clip = data.downmix();
    clip.samples.resize(stft.clip_len(), 0.0);
    let objects = v
        .features
        .iter()
        .enumerate()
        .map(|(j, p)| {
            Ok(ObjectCandidate {
                object_id: format!("{id}-obj{j}"),
                class_id: None,
                raw_feature: load_feature_record(p).map_err(|e| ingestion(id, e.to_string()))?,
                is_audible_gt: v.audible.as_ref().map(|a| a[j]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((objects, clip))
}

/// Pairs two external videos into a composite. When a video has exactly one
/// labelled audible object, the video's sound is recorded as that object's source.
pub fn load_external_pair(
    first: &SampleDescriptor,
    second: &SampleDescriptor,
    stft: &StftConfig,
) -> Result<CompositeSample> {
    let (o1, s1) = load_video(first, stft)?;
    let (o2, s2) = load_video(second, stft)?;
    let sources = |objs: &[ObjectCandidate], s: &AudioClip| -> Vec<(usize, AudioClip)> {
        let audible: Vec<usize> = objs
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_audible_gt == Some(true))
            .map(|(i, _)| i)
            .collect();
        match audible.as_slice() {
            [i] if objs.iter().all(|o| o.is_audible_gt.is_some()) => vec![(*i, s.clone())],
            _ => Vec::new(),
        }
    };
    let audible_sources = [sources(&o1, &s1), sources(&o2, &s2)];
    let mixture = s1.try_add(&s2)?;
    Ok(CompositeSample {
        sample_id: format!("{}+{}", first.sample_id, second.sample_id),
        video1_objects: o1,
        video2_objects: o2,
        sound1: s1,
        sound2: s2,
        mixture,
        mode: CompositionMode::Solo,
        audible_sources,
    })
}
