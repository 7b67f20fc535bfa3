//! BSS source-separation metrics (SDR, SIR, SAR) with time-invariant
//! distortion filters.
//!
//! Each estimate is projected by least squares onto the span of `filter_len`
//! delayed copies of the references. The projection onto its own reference is
//! the filtered target; the rest of the projection onto all references is
//! interference; the residual is artifacts. Normal equations are assembled from
//! FFT cross-correlations (block Toeplitz Gram) and solved by Cholesky.
//!
//! References are scaled to unit energy before the Gram is formed. The span
//! of each reference is unchanged, so the projections are too, and the Gram
//! stays well-scaled even for near-silent references.

use rustfft::num_complex::Complex64;
use rustfft::FftPlannerScalar;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BssScores {
    /// Per reference, in reference order.
    pub sdr: Vec<f64>,
    pub sir: Vec<f64>,
    pub sar: Vec<f64>,
    /// `perm[i]` is the estimate assigned to reference `i`.
    pub perm: Vec<usize>,
}

/// `10 log10(num / den)`; a zero numerator is `-inf`, otherwise a zero
/// denominator is `+inf`.
pub fn safe_db(num: f64, den: f64) -> f64 {
    // A missing target component is the worst score even with no error.
    if num == 0.0 {
        f64::NEG_INFINITY
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// In-place lower Cholesky factor of a row-major `n x n` SPD matrix. Fails on
/// a pivot below `floor`.
fn cholesky(a: &mut [f64], n: usize, floor: f64) -> bool {
    for i in 0..n {
        let (upper, lower) = a.split_at_mut(i * n);
        let row_i = &mut lower[..n];
        for j in 0..i {
            let row_j = &upper[j * n..j * n + j + 1];
            let s: f64 = row_i[..j].iter().zip(&row_j[..j]).map(|(x, y)| x * y).sum();
            row_i[j] = (row_i[j] - s) / row_j[j];
        }
        let d = row_i[i] - row_i[..i].iter().map(|x| x * x).sum::<f64>();
        if !(d > floor) {
            return false;
        }
        row_i[i] = d.sqrt();
    }
    true
}

/// Factor with escalating diagonal jitter for rank-deficient Grams.
fn factor(g: &[f64], n: usize) -> Result<Vec<f64>> {
    let scale = (0..n).map(|i| g[i * n + i]).sum::<f64>() / n as f64;
    let floor = 1e-13 * scale;
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut a = g.to_vec();
        for i in 0..n {
            a[i * n + i] += jitter;
        }
        if cholesky(&mut a, n, floor) {
            return Ok(a);
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
    }
    Err(Error::Numerical(
        "projection Gram matrix is not positive definite even with jitter".into(),
    ))
}

fn solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
        y[i] = (y[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

struct Fft {
    n: usize,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft {
    fn new(n: usize) -> Self {
        let mut p = FftPlannerScalar::new();
        Fft {
            n,
            fwd: p.plan_fft_forward(n),
            inv: p.plan_fft_inverse(n),
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = (0..self.n)
            .map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0))
            .collect();
        self.fwd.process(&mut buf);
        buf
    }

    fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut spec);
        let s = 1.0 / self.n as f64;
        spec.into_iter().map(|c| c.re * s).collect()
    }

    /// `c[lag] = sum_u a[u] b[u + lag]`, indexed modulo `n`.
    fn xcorr(&self, a: &[Complex64], b: &[Complex64]) -> Vec<f64> {
        self.inverse(a.iter().zip(b).map(|(x, y)| x.conj() * y).collect())
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Projection of one estimate onto delayed copies of a reference subset.
struct Projector {
    refs: Vec<usize>,
    chol: Vec<f64>,
}

impl Projector {
    fn new(refs: Vec<usize>, corr: &[Vec<Vec<f64>>], f: usize, n_fft: usize) -> Result<Self> {
        let n = refs.len() * f;
        let mut g = vec![0.0; n * n];
        for (bi, &i) in refs.iter().enumerate() {
            for (bj, &j) in refs.iter().enumerate() {
                let c = &corr[i][j];
                for a in 0..f {
                    for b in 0..f {
                        let lag = (a as isize - b as isize).rem_euclid(n_fft as isize) as usize;
                        g[(bi * f + a) * n + bj * f + b] = c[lag];
                    }
                }
            }
        }
        Ok(Projector {
            chol: factor(&g, n)?,
            refs,
        })
    }

    /// Projection on the padded time axis, length `len + f - 1`.
    fn project(
        &self,
        d: &[Vec<f64>],
        spectra: &[Vec<Complex64>],
        fft: &Fft,
        f: usize,
        out_len: usize,
    ) -> Vec<f64> {
        let n = self.refs.len() * f;
        let mut rhs = Vec::with_capacity(n);
        for &j in &self.refs {
            rhs.extend_from_slice(&d[j][..f]);
        }
        let coef = solve(&self.chol, n, &rhs);
        let mut acc = vec![Complex64::new(0.0, 0.0); fft.n];
        for (bj, &j) in self.refs.iter().enumerate() {
            let cs = fft.forward(&coef[bj * f..(bj + 1) * f]);
            for (a, (c, r)) in acc.iter_mut().zip(cs.iter().zip(&spectra[j])) {
                *a += c * r;
            }
        }
        let mut p = fft.inverse(acc);
        p.truncate(out_len);
        p
    }
}

/// Scores every (reference, estimate) pair and keeps the permutation with the
/// best mean SIR. Zero-energy references have an empty span: any estimate
/// scores `-inf` SDR and SIR against them.
pub fn bss_eval_sources(
    references: &[Vec<f64>],
    estimates: &[Vec<f64>],
    filter_len: usize,
) -> Result<BssScores> {
    let j = references.len();
    if j == 0 || j != estimates.len() {
        return Err(Error::input(format!(
            "bss_eval needs equal, nonzero numbers of references and estimates (got {} and {})",
            j,
            estimates.len()
        )));
    }
    if j > 8 {
        return Err(Error::input("bss_eval permutation search supports at most 8 sources"));
    }
    if filter_len == 0 {
        return Err(Error::input("filter_len must be positive"));
    }
    let len = references[0].len();
    if len == 0 || references.iter().chain(estimates).any(|x| x.len() != len) {
        return Err(Error::input("bss_eval signals must share one nonzero length"));
    }
    if references.iter().chain(estimates).flatten().any(|v| !v.is_finite()) {
        return Err(Error::input("bss_eval signals must be finite"));
    }
    let f = filter_len;
    let out_len = len + f - 1;
    let fft = Fft::new(out_len.next_power_of_two());

    let active: Vec<usize> = (0..j).filter(|&i| energy(&references[i]) > 0.0).collect();
    let spectra: Vec<Vec<Complex64>> = references
        .iter()
        .map(|r| {
            let e = energy(r);
            let s = if e > 0.0 { 1.0 / e.sqrt() } else { 0.0 };
            let unit: Vec<f64> = r.iter().map(|v| v * s).collect();
            fft.forward(&unit)
        })
        .collect();
    let mut corr = vec![vec![Vec::new(); j]; j];
    for &a in &active {
        for &b in &active {
            corr[a][b] = fft.xcorr(&spectra[a], &spectra[b]);
        }
    }
    let all = if active.is_empty() {
        None
    } else {
        Some(Projector::new(active.clone(), &corr, f, fft.n)?)
    };
    let own: Vec<Option<Projector>> = (0..j)
        .map(|i| {
            if active.contains(&i) {
                Projector::new(vec![i], &corr, f, fft.n).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;

    // scores[ref][est] = (sdr, sir, sar)
    let mut scores = vec![vec![(0.0, 0.0, 0.0); j]; j];
    for (e_idx, est) in estimates.iter().enumerate() {
        let es = fft.forward(est);
        let d: Vec<Vec<f64>> = (0..j)
            .map(|r| if active.contains(&r) { fft.xcorr(&spectra[r], &es) } else { Vec::new() })
            .collect();
        let p_all = match &all {
            Some(p) => p.project(&d, &spectra, &fft, f, out_len),
            None => vec![0.0; out_len],
        };
        let mut padded = est.clone();
        padded.resize(out_len, 0.0);
        let artif: Vec<f64> = padded.iter().zip(&p_all).map(|(e, p)| e - p).collect();
        let e_art = energy(&artif);
        for r in 0..j {
            let target = match &own[r] {
                Some(p) => p.project(&d, &spectra, &fft, f, out_len),
                None => vec![0.0; out_len],
            };
            let interf: Vec<f64> = p_all.iter().zip(&target).map(|(a, t)| a - t).collect();
            let s = energy(&target);
            let ei = energy(&interf);
            let noise: f64 = interf.iter().zip(&artif).map(|(a, b)| (a + b) * (a + b)).sum();
            let filt_plus: f64 = target.iter().zip(&interf).map(|(a, b)| (a + b) * (a + b)).sum();
            scores[r][e_idx] = (safe_db(s, noise), safe_db(s, ei), safe_db(filt_plus, e_art));
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(j) {
        let m = perm.iter().enumerate().map(|(r, &e)| scores[r][e].1).sum::<f64>() / j as f64;
        let m = if m.is_nan() { f64::NEG_INFINITY } else { m };
        if best.as_ref().is_none_or(|(b, _)| m > *b) {
            best = Some((m, perm));
        }
    }
    let perm = best.map(|(_, p)| p).unwrap();
    Ok(BssScores {
        sdr: perm.iter().enumerate().map(|(r, &e)| scores[r][e].0).collect(),
        sir: perm.iter().enumerate().map(|(r, &e)| scores[r][e].1).collect(),
        sar: perm.iter().enumerate().map(|(r, &e)| scores[r][e].2).collect(),
        perm,
    })
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // Next lexicographic permutation.
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            return out;
        };
        let k = (i + 1..n).rev().find(|&k| cur[k] > cur[i]).unwrap();
        cur.swap(i, k);
        cur[i + 1..].reverse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn permutations_are_complete() {
        assert_eq!(permutations(1), vec![vec![0]]);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(3)[1], vec![0, 2, 1]);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let g = vec![4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let l = factor(&g, 3).unwrap();
        let x = solve(&l, 3, &[1.0, 2.0, 3.0]);
        for r in 0..3 {
            let y: f64 = (0..3).map(|c| g[r * 3 + c] * x[c]).sum();
            assert!((y - [1.0, 2.0, 3.0][r]).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_estimate_hits_the_ceiling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let refs = vec![noise(&mut rng, 2000), noise(&mut rng, 2000)];
        let s = bss_eval_sources(&refs, &refs, 32).unwrap();
        assert!(s.sdr.iter().all(|v| *v >= 100.0), "{:?}", s.sdr);
        assert_eq!(s.perm, vec![0, 1]);
    }

    #[test]
    fn explicit_projection_at_one_tap() {
        // Orthogonal, equal-norm references; estimate = r1 + 0.1 r2.
        let n = 64;
        let r1: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let r2: Vec<f64> = (0..n).map(|i| if i % 2 == 1 { 1.0 } else { 0.0 }).collect();
        let est: Vec<f64> = (0..n).map(|i| r1[i] + 0.1 * r2[i]).collect();
        let s = bss_eval_sources(&[r1.clone(), r2.clone()], &[est, r2.clone()], 1).unwrap();
        assert!((s.sir[0] - 20.0).abs() < 1e-9, "{}", s.sir[0]);
        assert!((s.sdr[0] - 20.0).abs() < 1e-9);
        // No artifact: SAR sits at the FFT round-off ceiling.
        assert!(s.sar[0] > 250.0, "{}", s.sar[0]);
    }

    #[test]
    fn zero_reference_never_crashes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let refs = vec![noise(&mut rng, 500), vec![0.0; 500]];
        let ests = vec![refs[0].clone(), noise(&mut rng, 500)];
        let s = bss_eval_sources(&refs, &ests, 8).unwrap();
        assert_eq!(s.sdr[1], f64::NEG_INFINITY);
        assert!(s.sdr[0] > 100.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(bss_eval_sources(&[], &[], 4).is_err());
        assert!(bss_eval_sources(&[vec![1.0; 4]], &[vec![1.0; 5]], 4).is_err());
        assert!(bss_eval_sources(&[vec![1.0; 4]], &[vec![f64::NAN; 4]], 4).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gain_and_permutation_invariance(seed in 0u64..1000, gain in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let refs = vec![noise(&mut rng, 600), noise(&mut rng, 600)];
            let ests: Vec<Vec<f64>> = refs
                .iter()
                .map(|r| r.iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect())
                .collect();
            let base = bss_eval_sources(&refs, &ests, 16).unwrap();
            let scaled = vec![ests[0].iter().map(|v| v * gain).collect(), ests[1].clone()];
            let s = bss_eval_sources(&refs, &scaled, 16).unwrap();
            prop_assert!((s.sdr[0] - base.sdr[0]).abs() < 1e-9);
            prop_assert!((s.sir[0] - base.sir[0]).abs() < 1e-9);
            let swapped = vec![ests[1].clone(), ests[0].clone()];
            let p = bss_eval_sources(&refs, &swapped, 16).unwrap();
            prop_assert_eq!(p.perm, vec![1, 0]);
            for r in 0..2 {
                prop_assert!((p.sdr[r] - base.sdr[r]).abs() < 1e-9);
                prop_assert!(base.sir[r] >= base.sdr[r]);
            }
        }
    }
}
