//! Time-frequency transforms: STFT/iSTFT, the magnitude grid the networks
//! consume, soft-mask application and the spectrogram L1 distance.

mod grid;
mod stft;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthworld::AudioClip;

pub use grid::{apply_mask, magnitude_resample, upsample_mask, FreqWarp};
pub use stft::{hann_window, istft, stft};

/// How `||.||_1` between spectrograms is normalised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum L1Norm {
    /// Mean absolute difference per entry.
    #[default]
    Mean,
    /// Plain sum of absolute differences.
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_length: usize,
    pub hop_length: usize,
    pub frames: usize,
    /// Network grid height (frequency rows).
    pub net_freq: usize,
    /// Network grid width (time columns).
    pub net_time: usize,
    pub warp: FreqWarp,
    /// Feed `ln(1 + |S|)` instead of `|S|` to the networks.
    pub log_compress: bool,
    pub l1_norm: L1Norm,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            sample_rate: 11025,
            window_length: 1022,
            hop_length: 256,
            frames: 256,
            net_freq: 256,
            net_time: 256,
            warp: FreqWarp::Log { base: 21.0 },
            log_compress: false,
            l1_norm: L1Norm::Mean,
        }
    }
}

impl StftConfig {
    pub fn freq_bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Samples in a contract-length clip.
    pub fn clip_len(&self) -> usize {
        self.hop_length * self.frames
    }

    pub fn net_grid(&self) -> (usize, usize) {
        (self.net_freq, self.net_time)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 4 || self.window_length % 2 != 0 {
            return Err(Error::config("window_length must be even and >= 4"));
        }
        if self.hop_length == 0 || self.hop_length > self.window_length {
            return Err(Error::config("hop_length must be in 1..=window_length"));
        }
        if self.frames < 2 {
            return Err(Error::config("frames must be >= 2"));
        }
        if self.net_freq < 2 || self.net_time < 2 {
            return Err(Error::config("net grid must be at least 2x2"));
        }
        if self.net_freq > self.freq_bins() || self.net_time > self.frames {
            return Err(Error::config(format!(
                "net grid {}x{} exceeds spectrogram {}x{}",
                self.net_freq,
                self.net_time,
                self.freq_bins(),
                self.frames
            )));
        }
        if let FreqWarp::Log { base } = self.warp {
            if !(base > 1.0) {
                return Err(Error::config("log warp base must exceed 1"));
            }
        }
        Ok(())
    }
}

/// Full-resolution complex STFT, `[freq_bins x frames]`, row-major by bin.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpec {
    pub bins: usize,
    pub frames: usize,
    pub values: Vec<Complex64>,
}

impl ComplexSpec {
    pub fn zeros(bins: usize, frames: usize) -> Self {
        ComplexSpec {
            bins,
            frames,
            values: vec![Complex64::new(0.0, 0.0); bins * frames],
        }
    }

    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.values[bin * self.frames + frame]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    fn check(&self, cfg: &StftConfig) -> Result<()> {
        if self.bins != cfg.freq_bins() || self.frames != cfg.frames {
            return Err(Error::input(format!(
                "spectrogram shape {}x{} does not match config {}x{}",
                self.bins,
                self.frames,
                cfg.freq_bins(),
                cfg.frames
            )));
        }
        Ok(())
    }
}

impl std::ops::Add for &ComplexSpec {
    type Output = ComplexSpec;

    fn add(self, rhs: &ComplexSpec) -> ComplexSpec {
        assert_eq!((self.bins, self.frames), (rhs.bins, rhs.frames));
        ComplexSpec {
            bins: self.bins,
            frames: self.frames,
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Nonnegative magnitude matrix, `[freq x time]`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagSpec {
    pub freq: usize,
    pub time: usize,
    pub values: Vec<f64>,
}

impl MagSpec {
    pub fn new(freq: usize, time: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != freq * time {
            return Err(Error::input("magnitude data length does not match shape"));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Contract(
                "magnitude entries must be finite and nonnegative".into(),
            ));
        }
        Ok(MagSpec { freq, time, values })
    }

    pub fn zeros(freq: usize, time: usize) -> Self {
        MagSpec {
            freq,
            time,
            values: vec![0.0; freq * time],
        }
    }

    pub fn at(&self, f: usize, t: usize) -> f64 {
        self.values[f * self.time + t]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Network input: the magnitudes, optionally `ln(1 + x)` compressed.
    pub fn network_input(&self, cfg: &StftConfig) -> Vec<f64> {
        if cfg.log_compress {
            self.values.iter().map(|v| v.ln_1p()).collect()
        } else {
            self.values.clone()
        }
    }
}

/// Soft mask on the network grid; every entry lies in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub freq: usize,
    pub time: usize,
    pub values: Vec<f64>,
}

impl Mask {
    pub fn new(freq: usize, time: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != freq * time {
            return Err(Error::input("mask data length does not match shape"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("mask entry {v} outside [0, 1]")));
        }
        Ok(Mask { freq, time, values })
    }

    pub fn constant(freq: usize, time: usize, v: f64) -> Result<Self> {
        Mask::new(freq, time, vec![v; freq * time])
    }
}

/// `||a - b||_1` under the configured normalisation (mean by default).
pub fn spec_l1_distance(a: &MagSpec, b: &MagSpec, norm: L1Norm) -> Result<f64> {
    if (a.freq, a.time) != (b.freq, b.time) {
        return Err(Error::input(format!(
            "distance between {}x{} and {}x{} spectrograms",
            a.freq, a.time, b.freq, b.time
        )));
    }
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum();
    Ok(match norm {
        L1Norm::Mean => s / a.values.len() as f64,
        L1Norm::Sum => s,
    })
}

/// STFT followed by resampling onto the network grid.
pub fn clip_to_grid(clip: &AudioClip, cfg: &StftConfig) -> Result<(ComplexSpec, MagSpec)> {
    let spec = stft(clip, cfg)?;
    let mag = magnitude_resample(&spec, cfg)?;
    Ok((spec, mag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn l1_distance_hand_cases() {
        let a = MagSpec::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = MagSpec::zeros(2, 2);
        assert_eq!(spec_l1_distance(&a, &z, L1Norm::Mean).unwrap(), 2.5);
        assert_eq!(spec_l1_distance(&a, &z, L1Norm::Sum).unwrap(), 10.0);
        assert_eq!(spec_l1_distance(&a, &a, L1Norm::Mean).unwrap(), 0.0);
        let mean_abs = a.values.iter().sum::<f64>() / 4.0;
        assert_eq!(spec_l1_distance(&a, &z, L1Norm::Mean).unwrap(), mean_abs);
    }

    #[test]
    fn l1_distance_rejects_shape_mismatch() {
        let a = MagSpec::zeros(2, 2);
        let b = MagSpec::zeros(2, 3);
        assert!(matches!(spec_l1_distance(&a, &b, L1Norm::Mean), Err(Error::Input(_))));
    }

    #[test]
    fn mask_rejects_out_of_range() {
        assert!(matches!(Mask::new(1, 2, vec![0.5, 1.5]), Err(Error::Contract(_))));
        assert!(Mask::new(1, 2, vec![0.0, 1.0]).is_ok());
    }

    fn mags() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..10.0, 12)
    }

    proptest! {
        #[test]
        fn l1_distance_is_a_metric(a in mags(), b in mags(), c in mags()) {
            let (a, b, c) = (
                MagSpec::new(3, 4, a).unwrap(),
                MagSpec::new(3, 4, b).unwrap(),
                MagSpec::new(3, 4, c).unwrap(),
            );
            let d = |x: &MagSpec, y: &MagSpec| spec_l1_distance(x, y, L1Norm::Mean).unwrap();
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert_eq!(d(&a, &a), 0.0);
            if a != b {
                prop_assert!(d(&a, &b) > 0.0);
            }
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }
    }
}
