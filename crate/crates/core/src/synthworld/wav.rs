//! Mono WAV I/O (float32 or integer PCM) and a linear resampler.

use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

/// Decoded WAV contents before any channel or rate policy is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct WavData {
    /// Interleaved samples scaled to [-1, 1].
    pub samples: Vec<f64>,
    pub channels: u16,
    pub sample_rate: u32,
}

impl WavData {
    /// Averages interleaved channels into one.
    pub fn downmix(&self) -> AudioClip {
        let c = self.channels.max(1) as usize;
        let samples = self
            .samples
            .chunks(c)
            .map(|f| f.iter().sum::<f64>() / c as f64)
            .collect();
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

pub fn read(path: &Path) -> Result<WavData> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let samples = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<Vec<_>, _>>(),
        hound::SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect()
        }
    }
    .map_err(|e| wav_err(path, e))?;
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::input(format!("{}: non-finite samples", path.display())));
    }
    Ok(WavData {
        samples,
        channels: spec.channels,
        sample_rate: spec.sample_rate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Float32,
    Pcm16,
}

/// Writes a mono clip. PCM output is clipped to [-1, 1].
pub fn write(path: &Path, clip: &AudioClip, format: WavFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: match format {
            WavFormat::Float32 => 32,
            WavFormat::Pcm16 => 16,
        },
        sample_format: match format {
            WavFormat::Float32 => hound::SampleFormat::Float,
            WavFormat::Pcm16 => hound::SampleFormat::Int,
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &v in &clip.samples {
        match format {
            WavFormat::Float32 => w.write_sample(v as f32),
            WavFormat::Pcm16 => w.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
        }
        .map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::input(format!("{}: {other}", path.display())),
    }
}

/// Linear-interpolation resampling. Adequate for format adaptation, not for
/// quality-critical conversion.
pub fn resample_linear(clip: &AudioClip, target_rate: u32) -> AudioClip {
    if clip.sample_rate == target_rate || clip.is_empty() {
        return AudioClip {
            samples: clip.samples.clone(),
            sample_rate: target_rate,
        };
    }
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let out_len = ((clip.len() as f64) / ratio).round().max(1.0) as usize;
    let last = clip.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let x = i as f64 * ratio;
            let j = (x.floor() as usize).min(last);
            let f = x - j as f64;
            let a = clip.samples[j];
            let b = clip.samples[(j + 1).min(last)];
            a + f * (b - a)
        })
        .collect();
    AudioClip {
        samples,
        sample_rate: target_rate,
    }
}
