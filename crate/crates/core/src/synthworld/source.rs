use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AudioClip, WorldConfig};
use crate::error::{Error, Result};
use crate::seed;
use crate::tfspace::StftConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Sustained,
    DecayingStrikes,
}

/// Parameters of one synthetic instrument class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceClass {
    pub class_id: usize,
    /// Fundamental frequency interval in Hz, `lo <= hi`.
    pub fundamental_range: (f64, f64),
    /// Amplitude ratio between consecutive partials.
    pub partial_decay: f64,
    pub vibrato_rate: f64,
    /// Relative frequency deviation of the vibrato.
    pub vibrato_depth: f64,
    pub envelope_kind: EnvelopeKind,
}

impl SourceClass {
    /// Class `k` of the world: fundamental ranges tile `f0_octaves` octaves
    /// upward from `f0_low` without overlap; timbre is drawn from the world seed.
    pub fn derive(class_id: usize, cfg: &WorldConfig) -> Self {
        let slot = cfg.f0_octaves / cfg.num_classes as f64;
        let lo = cfg.f0_low * 2f64.powf(class_id as f64 * slot);
        let hi = lo * 2f64.powf(cfg.f0_fill * slot);
        let mut rng = seed::rng(cfg.world_seed, "class", &[class_id as u64]);
        SourceClass {
            class_id,
            fundamental_range: (lo, hi),
            partial_decay: rng.random_range(0.35..0.9),
            vibrato_rate: rng.random_range(3.0..7.0),
            vibrato_depth: rng.random_range(0.002..0.008),
            envelope_kind: if rng.random_bool(0.5) {
                EnvelopeKind::Sustained
            } else {
                EnvelopeKind::DecayingStrikes
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.fundamental_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config(format!(
                "class {}: invalid fundamental range {lo}..{hi}",
                self.class_id
            )));
        }
        if !(self.partial_decay > 0.0 && self.partial_decay < 1.0) {
            return Err(Error::config(format!(
                "class {}: partial_decay must be in (0, 1)",
                self.class_id
            )));
        }
        if !(self.vibrato_rate >= 0.0 && self.vibrato_depth >= 0.0 && self.vibrato_depth < 0.5) {
            return Err(Error::config(format!("class {}: invalid vibrato", self.class_id)));
        }
        Ok(())
    }
}

const MAX_PARTIALS: usize = 24;

/// Harmonic stack of `class` lasting `duration_frames` hops, peak-normalised to `peak`.
pub fn synth_source(
    class: &SourceClass,
    duration_frames: usize,
    seed: u64,
    stft: &StftConfig,
    peak: f64,
) -> Result<AudioClip> {
    class.validate()?;
    if duration_frames == 0 {
        return Err(Error::input("duration_frames must be positive"));
    }
    let sr = stft.sample_rate as f64;
    let len = duration_frames * stft.hop_length;
    let mut rng = seed::rng(seed, "source", &[class.class_id as u64]);

    let (lo, hi) = class.fundamental_range;
    let f0 = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let depth = class.vibrato_depth;
    let rate = class.vibrato_rate;

    let mut partials = Vec::new();
    for h in 1..=MAX_PARTIALS {
        if h as f64 * f0 * (1.0 + depth) >= 0.45 * sr {
            break;
        }
        let amp = class.partial_decay.powi(h as i32 - 1) * rng.random_range(0.85..1.15);
        partials.push((h as f64, amp, rng.random_range(0.0..2.0 * PI)));
    }

    let envelope = Envelope::draw(class.envelope_kind, len as f64 / sr, &mut rng);
    let mut samples = Vec::with_capacity(len);
    for n in 0..len {
        let t = n as f64 / sr;
        // Phase of the fundamental, integrating f0 * (1 + depth * sin(2 pi rate t + phi)).
        let base_phase = if rate > 0.0 {
            2.0 * PI * f0 * t
                - f0 * depth / rate * ((2.0 * PI * rate * t + vib_phase).cos() - vib_phase.cos())
        } else {
            2.0 * PI * f0 * t
        };
        let s: f64 = partials
            .iter()
            .map(|(h, a, phi)| a * (h * base_phase + phi).sin())
            .sum();
        samples.push(s * envelope.at(t));
    }
    let max = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        samples.iter_mut().for_each(|v| *v *= g);
    }
    Ok(AudioClip {
        samples,
        sample_rate: stft.sample_rate,
    })
}

enum Envelope {
    Sustained { attack: f64, duration: f64, swell_rate: f64, swell_phase: f64 },
    Strikes { onsets: Vec<f64>, tau: f64 },
}

impl Envelope {
    fn draw(kind: EnvelopeKind, duration: f64, rng: &mut impl Rng) -> Self {
        match kind {
            EnvelopeKind::Sustained => Envelope::Sustained {
                attack: 0.03,
                duration,
                swell_rate: rng.random_range(0.3..1.2),
                swell_phase: rng.random_range(0.0..2.0 * PI),
            },
            EnvelopeKind::DecayingStrikes => {
                let mut onsets = Vec::new();
                // Short clips still get their first strike well inside the clip.
                let mut t = rng.random_range(0.0..0.1f64.min(duration / 4.0));
                while t < duration {
                    onsets.push(t);
                    t += rng.random_range(0.15..0.35);
                }
                Envelope::Strikes {
                    onsets,
                    tau: rng.random_range(0.08..0.16),
                }
            }
        }
    }

    fn at(&self, t: f64) -> f64 {
        match self {
            Envelope::Sustained { attack, duration, swell_rate, swell_phase } => {
                let edge = (t / attack).min((duration - t) / attack).clamp(0.0, 1.0);
                edge * (1.0 + 0.2 * (2.0 * PI * swell_rate * t + swell_phase).sin())
            }
            Envelope::Strikes { onsets, tau } => {
                let mut v: f64 = 0.0;
                for &o in onsets {
                    if o > t {
                        break;
                    }
                    let dt = t - o;
                    // 5 ms linear attack, then exponential decay.
                    let a = (dt / 0.005).min(1.0) * (-dt / tau).exp();
                    v = v.max(a);
                }
                v
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex64;

    fn fixed_class(f0: f64) -> SourceClass {
        SourceClass {
            class_id: 0,
            fundamental_range: (f0, f0),
            partial_decay: 0.5,
            vibrato_rate: 0.0,
            vibrato_depth: 0.0,
            envelope_kind: EnvelopeKind::Sustained,
        }
    }

    fn cfg() -> StftConfig {
        StftConfig {
            frames: 64,
            net_freq: 64,
            net_time: 32,
            ..StftConfig::default()
        }
    }

    /// Magnitude of a direct DFT evaluated at `freq` Hz over the whole clip.
    fn dft_mag(x: &[f64], freq: f64, sr: f64) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, v) in x.iter().enumerate() {
            let ang = -2.0 * PI * freq * n as f64 / sr;
            acc += Complex64::new(ang.cos(), ang.sin()) * *v;
        }
        acc.norm()
    }

    #[test]
    fn fixed_f0_peaks_at_its_bin() {
        let c = cfg();
        let clip = synth_source(&fixed_class(440.0), c.frames, 0, &c, 0.5).unwrap();
        let sr = c.sample_rate as f64;
        let bin_hz = sr / c.window_length as f64;
        // Independent DFT oracle over candidate bins of the STFT's frequency grid.
        let peak_bin = (1..c.freq_bins())
            .map(|b| (b, dft_mag(&clip.samples, b as f64 * bin_hz, sr)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak_bin, (440.0 / bin_hz).round() as usize);

        let spec = crate::tfspace::stft(&clip, &c).unwrap();
        let t = c.frames / 2;
        let arg = (0..spec.bins)
            .max_by(|a, b| spec.at(*a, t).norm().partial_cmp(&spec.at(*b, t).norm()).unwrap())
            .unwrap();
        assert_eq!(arg, peak_bin);
    }

    /// Autocorrelation pitch estimate restricted to lags of `lo..hi` Hz.
    fn autocorr_f0(x: &[f64], sr: f64, lo: f64, hi: f64) -> f64 {
        let min_lag = (sr / hi).floor() as usize;
        let max_lag = (sr / lo).ceil() as usize + 1;
        let r = |lag: usize| -> f64 { x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum() };
        let (best, _) = (min_lag..=max_lag)
            .map(|l| (l, r(l)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        // Parabolic refinement around the peak.
        let (y0, y1, y2) = (r(best - 1), r(best), r(best + 1));
        let off = 0.5 * (y0 - y2) / (y0 - 2.0 * y1 + y2);
        sr / (best as f64 + off)
    }

    #[test]
    fn seeds_change_fundamental_within_range() {
        let c = cfg();
        let class = SourceClass {
            fundamental_range: (300.0, 360.0),
            ..fixed_class(300.0)
        };
        let sr = c.sample_rate as f64;
        let a = synth_source(&class, c.frames, 0, &c, 0.5).unwrap();
        let b = synth_source(&class, c.frames, 1, &c, 0.5).unwrap();
        let fa = autocorr_f0(&a.samples, sr, 250.0, 420.0);
        let fb = autocorr_f0(&b.samples, sr, 250.0, 420.0);
        for f in [fa, fb] {
            assert!((299.0..=361.0).contains(&f), "f0 {f} outside range");
        }
        assert!((fa - fb).abs() > 0.5, "{fa} vs {fb}");
    }

    #[test]
    fn deterministic_and_peak_bounded() {
        let c = cfg();
        let w = WorldConfig::default();
        for k in 0..w.num_classes {
            let class = SourceClass::derive(k, &w);
            let a = synth_source(&class, c.frames, 5, &c, 0.5).unwrap();
            let b = synth_source(&class, c.frames, 5, &c, 0.5).unwrap();
            assert_eq!(a, b);
            assert!(a.peak() <= 0.5 + 1e-12);
            assert_eq!(a.len(), c.clip_len());
            assert!(a.samples.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn short_clips_are_never_silent() {
        let w = WorldConfig::default();
        for frames in [1, 2, 16] {
            let c = StftConfig {
                window_length: 62,
                hop_length: 16,
                frames,
                net_freq: 16,
                net_time: 16,
                ..StftConfig::default()
            };
            for k in 0..w.num_classes {
                for seed in 0..8 {
                    let a = synth_source(&SourceClass::derive(k, &w), frames, seed, &c, 0.5).unwrap();
                    assert!(a.energy() > 0.0, "class {k} seed {seed} frames {frames}");
                }
            }
        }
    }

    #[test]
    fn class_ranges_overlap_less_than_half() {
        let w = WorldConfig::default();
        let classes: Vec<_> = (0..w.num_classes).map(|k| SourceClass::derive(k, &w)).collect();
        for a in &classes {
            for b in &classes {
                if a.class_id == b.class_id {
                    continue;
                }
                let (lo, hi) = (a.fundamental_range.0.max(b.fundamental_range.0), a.fundamental_range.1.min(b.fundamental_range.1));
                let overlap = (hi - lo).max(0.0);
                let width = (a.fundamental_range.1 - a.fundamental_range.0).min(b.fundamental_range.1 - b.fundamental_range.0);
                assert!(overlap < 0.5 * width);
            }
        }
    }

    #[test]
    fn invalid_parameters_are_configuration_errors() {
        let c = cfg();
        let bad = SourceClass {
            partial_decay: 1.5,
            ..fixed_class(440.0)
        };
        assert!(matches!(synth_source(&bad, 4, 0, &c, 0.5), Err(Error::Config(_))));
        assert!(matches!(synth_source(&fixed_class(440.0), 0, 0, &c, 0.5), Err(Error::Input(_))));
    }
}
