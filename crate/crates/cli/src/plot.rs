//! Minimal raster plots: loss curves and metric bars. No text rendering;
//! the accompanying CSV/JSON files carry the numbers.

use std::path::Path;

use ccol_core::{Error, Result};
use image::{Rgb, RgbImage};

const W: u32 = 800;
const H: u32 = 480;
const MARGIN: u32 = 40;
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];
/// Infinite scores are drawn at this cap.
pub const DB_CAP: f64 = 300.0;

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    for x in MARGIN..W - MARGIN / 2 {
        img.put_pixel(x, H - MARGIN, axis);
    }
    for y in MARGIN / 2..=H - MARGIN {
        img.put_pixel(MARGIN, y, axis);
    }
    img
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// One polyline per series over a shared x axis (step index).
pub fn lines(path: &Path, series: &[Vec<(f64, f64)>]) -> Result<()> {
    let mut img = canvas();
    let pts = series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in pts {
        x_lo = x_lo.min(*x);
        x_hi = x_hi.max(*x);
        y_lo = y_lo.min(*y);
        y_hi = y_hi.max(*y);
    }
    if x_lo <= x_hi {
        let sx = (W - 3 * MARGIN / 2) as f64 / (x_hi - x_lo).max(1e-12);
        let sy = (H - 3 * MARGIN / 2) as f64 / (y_hi - y_lo).max(1e-12);
        let to_px = |(x, y): (f64, f64)| {
            (
                MARGIN as i64 + ((x - x_lo) * sx) as i64,
                (H - MARGIN) as i64 - ((y - y_lo) * sy) as i64,
            )
        };
        for (i, s) in series.iter().enumerate() {
            let c = Rgb(PALETTE[i % PALETTE.len()]);
            let finite: Vec<_> = s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
            for w in finite.windows(2) {
                line(&mut img, to_px(*w[0]), to_px(*w[1]), c);
            }
        }
    }
    save(&img, path)
}

/// Vertical bars, zero baseline included, infinite values capped.
pub fn bars(path: &Path, values: &[f64]) -> Result<()> {
    let mut img = canvas();
    let v: Vec<f64> = values
        .iter()
        .map(|x| if x.is_nan() { 0.0 } else { x.clamp(-DB_CAP, DB_CAP) })
        .collect();
    let lo = v.iter().cloned().fold(0.0, f64::min);
    let hi = v.iter().cloned().fold(0.0, f64::max);
    let span = (hi - lo).max(1e-12);
    let plot_h = (H - 3 * MARGIN / 2) as f64;
    let y_of = |x: f64| (H - MARGIN) as f64 - (x - lo) / span * plot_h;
    let n = v.len().max(1) as u32;
    let slot = (W - 3 * MARGIN / 2) / n;
    for (i, x) in v.iter().enumerate() {
        let c = Rgb(PALETTE[i % PALETTE.len()]);
        let (a, b) = (y_of(0.0), y_of(*x));
        let (top, bottom) = (a.min(b) as u32, a.max(b) as u32);
        let left = MARGIN + 2 + i as u32 * slot + slot / 6;
        for px in left..left + (2 * slot / 3).max(1) {
            for py in top..=bottom.min(H - 1) {
                img.put_pixel(px.min(W - 1), py, c);
            }
        }
    }
    save(&img, path)
}
