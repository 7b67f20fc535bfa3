use serde::{Deserialize, Serialize};

use super::{ComplexSpec, MagSpec, Mask, StftConfig};
use crate::error::{Error, Result};

/// Frequency axis mapping between STFT bins and network grid rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FreqWarp {
    /// Row `i` of `F` samples bin `(base^(i/(F-1)) - 1) / (base - 1) * (bins - 1)`.
    Log { base: f64 },
    Linear,
}

impl FreqWarp {
    /// Fractional STFT bin sampled by grid row `row`.
    pub fn bin_of_row(&self, row: usize, rows: usize, bins: usize) -> f64 {
        let u = row as f64 / (rows - 1) as f64;
        let top = (bins - 1) as f64;
        match *self {
            FreqWarp::Log { base } => (base.powf(u) - 1.0) / (base - 1.0) * top,
            FreqWarp::Linear => u * top,
        }
    }

    /// Fractional grid row of STFT bin `bin`; inverse of [`Self::bin_of_row`].
    pub fn row_of_bin(&self, bin: usize, rows: usize, bins: usize) -> f64 {
        let p = bin as f64 / (bins - 1) as f64;
        let top = (rows - 1) as f64;
        match *self {
            FreqWarp::Log { base } => (1.0 + p * (base - 1.0)).ln() / base.ln() * top,
            FreqWarp::Linear => p * top,
        }
    }
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + f * (b - a)
}

/// Splits a fractional coordinate into a lower index and weight, clamped to `[0, n-1]`.
fn split(pos: f64, n: usize) -> (usize, usize, f64) {
    let pos = pos.clamp(0.0, (n - 1) as f64);
    let lo = (pos.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, pos - lo as f64)
}

fn bilinear(values: &[f64], width: usize, r: (usize, usize, f64), c: (usize, usize, f64)) -> f64 {
    let at = |y: usize, x: usize| values[y * width + x];
    let top = lerp(at(r.0, c.0), at(r.0, c.1), c.2);
    let bottom = lerp(at(r.1, c.0), at(r.1, c.1), c.2);
    lerp(top, bottom, r.2)
}

fn time_pos(col: usize, from: usize, to: usize) -> f64 {
    col as f64 * (to - 1) as f64 / (from - 1) as f64
}

/// `|spec|` bilinearly resampled onto the `(net_freq, net_time)` grid.
pub fn magnitude_resample(spec: &ComplexSpec, cfg: &StftConfig) -> Result<MagSpec> {
    spec.check(cfg)?;
    let mags = spec.magnitudes();
    let (rows, cols) = cfg.net_grid();
    let col_idx: Vec<_> = (0..cols)
        .map(|j| split(time_pos(j, cols, spec.frames), spec.frames))
        .collect();
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let r = split(cfg.warp.bin_of_row(i, rows, spec.bins), spec.bins);
        for c in &col_idx {
            out.push(bilinear(&mags, spec.frames, r, *c).max(0.0));
        }
    }
    Ok(MagSpec {
        freq: rows,
        time: cols,
        values: out,
    })
}

/// Grid mask interpolated back to full STFT resolution and clamped to `[0, 1]`.
pub fn upsample_mask(mask: &Mask, cfg: &StftConfig) -> Result<Vec<f64>> {
    if (mask.freq, mask.time) != cfg.net_grid() {
        return Err(Error::input(format!(
            "mask shape {}x{} is not the network grid {:?}",
            mask.freq,
            mask.time,
            cfg.net_grid()
        )));
    }
    let (bins, frames) = (cfg.freq_bins(), cfg.frames);
    let col_idx: Vec<_> = (0..frames)
        .map(|t| split(time_pos(t, frames, mask.time), mask.time))
        .collect();
    let mut out = Vec::with_capacity(bins * frames);
    for b in 0..bins {
        let r = split(cfg.warp.row_of_bin(b, mask.freq, bins), mask.freq);
        for c in &col_idx {
            out.push(bilinear(&mask.values, mask.time, r, *c).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Scales mixture magnitudes by the upsampled mask, keeping mixture phase.
pub fn apply_mask(mixture: &ComplexSpec, mask: &Mask, cfg: &StftConfig) -> Result<ComplexSpec> {
    mixture.check(cfg)?;
    if let Some(v) = mask.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!("mask entry {v} outside [0, 1]")));
    }
    let full = upsample_mask(mask, cfg)?;
    Ok(ComplexSpec {
        bins: mixture.bins,
        frames: mixture.frames,
        values: mixture.values.iter().zip(&full).map(|(c, m)| c * *m).collect(),
    })
}
