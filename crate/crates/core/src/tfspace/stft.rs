use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlannerScalar;

use super::{ComplexSpec, StftConfig};
use crate::error::{Error, Result};
use crate::synthworld::AudioClip;

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// First sample covered by frame `t`. Frames are centred on
/// `t * hop + hop / 2` and zero-padded outside the clip.
fn frame_start(t: usize, cfg: &StftConfig) -> isize {
    (t * cfg.hop_length + cfg.hop_length / 2) as isize - (cfg.window_length / 2) as isize
}

pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<ComplexSpec> {
    let len = cfg.clip_len();
    if clip.samples.len() != len {
        return Err(Error::input(format!(
            "clip has {} samples, expected hop_length x frames = {len}",
            clip.samples.len()
        )));
    }
    let n = cfg.window_length;
    let bins = cfg.freq_bins();
    let window = hann_window(n);
    let fft = FftPlannerScalar::new().plan_fft_forward(n);
    let mut out = ComplexSpec::zeros(bins, cfg.frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..cfg.frames {
        let start = frame_start(t, cfg);
        for (i, slot) in buf.iter_mut().enumerate() {
            let pos = start + i as isize;
            let x = if pos >= 0 && (pos as usize) < len {
                clip.samples[pos as usize]
            } else {
                0.0
            };
            *slot = Complex64::new(x * window[i], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bins {
            out.values[b * cfg.frames + t] = buf[b];
        }
    }
    Ok(out)
}

/// Least-squares overlap-add inverse of [`stft`].
pub fn istft(spec: &ComplexSpec, cfg: &StftConfig) -> Result<AudioClip> {
    spec.check(cfg)?;
    let n = cfg.window_length;
    let len = cfg.clip_len();
    let window = hann_window(n);
    let ifft = FftPlannerScalar::new().plan_fft_inverse(n);
    let mut acc = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..cfg.frames {
        for k in 0..=n / 2 {
            buf[k] = spec.at(k, t);
        }
        // Real signal: DC and Nyquist bins carry no imaginary part.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = buf[k].conj();
        }
        ifft.process(&mut buf);
        let start = frame_start(t, cfg);
        for i in 0..n {
            let pos = start + i as isize;
            if pos >= 0 && (pos as usize) < len {
                let p = pos as usize;
                acc[p] += window[i] * buf[i].re / n as f64;
                norm[p] += window[i] * window[i];
            }
        }
    }
    let samples = acc
        .into_iter()
        .zip(norm)
        .map(|(a, w)| if w > 1e-12 { a / w } else { 0.0 })
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: cfg.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> StftConfig {
        StftConfig {
            window_length: 64,
            hop_length: 16,
            frames: 32,
            net_freq: 16,
            net_time: 16,
            ..StftConfig::default()
        }
    }

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip {
            samples,
            sample_rate: 11025,
        }
    }

    #[test]
    fn default_shape_is_512_by_256() {
        let cfg = StftConfig::default();
        let spec = stft(&clip(vec![0.0; cfg.clip_len()]), &cfg).unwrap();
        assert_eq!((spec.bins, spec.frames), (512, 256));
        assert!(spec.values.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn rejects_wrong_length() {
        let cfg = small_cfg();
        assert!(matches!(stft(&clip(vec![0.0; 10]), &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn bin_centred_sinusoid_peaks_at_its_bin() {
        let cfg = small_cfg();
        let k = 5;
        let samples = (0..cfg.clip_len())
            .map(|i| (2.0 * PI * k as f64 * i as f64 / cfg.window_length as f64).sin())
            .collect();
        let spec = stft(&clip(samples), &cfg).unwrap();
        // Interior frames see a full window.
        for t in 4..cfg.frames - 4 {
            let col: Vec<f64> = (0..spec.bins).map(|b| spec.at(b, t).norm()).collect();
            let arg = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(arg, k, "frame {t}");
        }
    }

    #[test]
    fn frame_matches_direct_dft() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..cfg.clip_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = stft(&clip(x.clone()), &cfg).unwrap();
        let w = hann_window(cfg.window_length);
        let t = 7;
        let start = frame_start(t, &cfg);
        for b in [0, 3, 17, 32] {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..cfg.window_length {
                let pos = start + i as isize;
                let v = if pos >= 0 && (pos as usize) < x.len() { x[pos as usize] } else { 0.0 };
                let ang = -2.0 * PI * (b * i) as f64 / cfg.window_length as f64;
                acc += Complex64::new(ang.cos(), ang.sin()) * v * w[i];
            }
            assert!((acc - spec.at(b, t)).norm() < 1e-9);
        }
    }

    #[test]
    fn roundtrip_and_linearity() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..cfg.clip_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..cfg.clip_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sa = stft(&clip(a.clone()), &cfg).unwrap();
        let sb = stft(&clip(b.clone()), &cfg).unwrap();
        let ra = istft(&sa, &cfg).unwrap();
        let err: f64 = ra.samples.iter().zip(&a).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-10);
        let rsum = istft(&(&sa + &sb), &cfg).unwrap();
        let rb = istft(&sb, &cfg).unwrap();
        for i in 0..a.len() {
            assert!((rsum.samples[i] - ra.samples[i] - rb.samples[i]).abs() < 1e-6);
        }
        let zero = istft(&ComplexSpec::zeros(cfg.freq_bins(), cfg.frames), &cfg).unwrap();
        assert!(zero.samples.iter().all(|v| *v == 0.0));
    }
}
