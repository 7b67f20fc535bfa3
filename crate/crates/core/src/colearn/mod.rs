//! Grounding and separation objectives: positive mining, the grounding,
//! separation and mixed-sound losses, separation-driven cyclic mining and the
//! two composite objectives.
//!
//! Losses are recorded on a [`Tape`] so they can be differentiated; the
//! probability nodes they consume are `[2]` softmax outputs of the grounding
//! head. Index selection (argmin/argmax) reads node values and is constant with
//! respect to the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{self, GroundingScore, Tape, Var};
use crate::tfspace::{spec_l1_distance, L1Norm, MagSpec};

pub const Y_POS: [f64; 2] = [1.0, 0.0];
pub const Y_NEG: [f64; 2] = [0.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn onehot(self) -> [f64; 2] {
        match self {
            Label::Pos => Y_POS,
            Label::Neg => Y_NEG,
        }
    }
}

pub fn cross_entropy(score: &GroundingScore, label: Label) -> f64 {
    nets::cross_entropy(&score.probs, label.onehot())
}

/// Index of the lowest value; ties go to the lowest index.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Positive mining over a bag of scores: the candidate whose pairing has the
/// lowest positive cross-entropy.
pub fn mine_positive(scores: &[GroundingScore]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::input("positive mining needs at least one candidate"));
    }
    let ce: Vec<f64> = scores.iter().map(|s| cross_entropy(s, Label::Pos)).collect();
    Ok(argmin(&ce))
}

fn scores_of(t: &Tape, probs: &[Var]) -> Vec<GroundingScore> {
    probs
        .iter()
        .map(|p| {
            let d = t.value(*p).data();
            GroundingScore { probs: [d[0], d[1]] }
        })
        .collect()
}

/// Positive mining on probability nodes of one bag.
pub fn mine_positive_solo(t: &Tape, probs: &[Var]) -> Result<usize> {
    mine_positive(&scores_of(t, probs))
}

/// Single-sound grounding loss for one video: the cross-video negative pair
/// plus the mined positive. Returns the loss node and the mined index.
pub fn loss_grd_s(t: &mut Tape, negative: Var, candidates: &[Var]) -> Result<(Var, usize)> {
    let n_hat = mine_positive_solo(t, candidates)?;
    let neg = t.cross_entropy(negative, Y_NEG);
    let pos = t.cross_entropy(candidates[n_hat], Y_POS);
    Ok((t.sum(&[neg, pos]), n_hat))
}

fn l1(t: &mut Tape, target: Var, parts: &[Var], norm: L1Norm) -> Result<Var> {
    let shape = t.value(target).shape().to_vec();
    if let Some(p) = parts.iter().find(|p| t.value(**p).shape() != shape.as_slice()) {
        return Err(Error::input(format!(
            "prediction shape {:?} differs from target {:?}",
            t.value(*p).shape(),
            shape
        )));
    }
    let residual = match parts.split_first() {
        None => target,
        Some((first, rest)) => {
            let mut acc = *first;
            for p in rest {
                acc = t.add(acc, *p);
            }
            t.sub(target, acc)
        }
    };
    let m = t.mean_abs(residual);
    Ok(match norm {
        L1Norm::Mean => m,
        L1Norm::Sum => {
            let n = t.value(target).len() as f64;
            t.scale(m, n)
        }
    })
}

/// Mix-and-separate L1 loss: each video's spectrogram against the sum of all
/// its objects' separated spectrograms.
pub fn loss_sep_plain(
    t: &mut Tape,
    targets: [Var; 2],
    preds: [&[Var]; 2],
    norm: L1Norm,
) -> Result<Var> {
    let a = l1(t, targets[0], preds[0], norm)?;
    let b = l1(t, targets[1], preds[1], norm)?;
    Ok(t.sum(&[a, b]))
}

/// Object-aware separation loss: only objects with gate 1 contribute. Gates
/// are constants, so a gated-off object receives no gradient.
pub fn loss_sep_aware(
    t: &mut Tape,
    targets: [Var; 2],
    preds: [&[Var]; 2],
    gates: [&[f64]; 2],
    norm: L1Norm,
) -> Result<Var> {
    let mut kept: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        if gates[k].len() != preds[k].len() {
            return Err(Error::Contract(format!(
                "video {}: {} gates for {} objects",
                k + 1,
                gates[k].len(),
                preds[k].len()
            )));
        }
        for (g, p) in gates[k].iter().zip(preds[k]) {
            if *g == 1.0 {
                kept[k].push(*p);
            } else if *g != 0.0 {
                return Err(Error::Contract(format!("gate {g} is not binary")));
            }
        }
    }
    loss_sep_plain(t, targets, [&kept[0], &kept[1]], norm)
}

/// Mixed-sound grounding loss: per video, the best positive cross-entropy.
/// Returns the loss and the selected index per video.
pub fn loss_grd_m(t: &mut Tape, mixture_probs: [&[Var]; 2]) -> Result<(Var, [usize; 2])> {
    let mut terms = Vec::with_capacity(2);
    let mut picked = [0; 2];
    for k in 0..2 {
        picked[k] = mine_positive_solo(t, mixture_probs[k])?;
        terms.push(t.cross_entropy(mixture_probs[k][picked[k]], Y_POS));
    }
    Ok((t.sum(&terms), picked))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningSelection {
    pub pos: [usize; 2],
    /// `None` when no candidate's distance exceeds `epsilon`.
    pub neg: [Option<usize>; 2],
    pub distances: [Vec<f64>; 2],
    pub epsilon: f64,
}

/// Argmin and thresholded argmax of one distance vector, ties to the lowest index.
pub fn mine_from_distances(d: &[f64], epsilon: f64) -> Result<(usize, Option<usize>)> {
    if d.is_empty() {
        return Err(Error::input("cyclic mining needs at least one object"));
    }
    let pos = argmin(d);
    let mut neg: Option<usize> = None;
    for (i, x) in d.iter().enumerate() {
        if *x > epsilon && neg.is_none_or(|j| *x > d[j]) {
            neg = Some(i);
        }
    }
    Ok((pos, neg))
}

/// Separation-driven mining: distances between each object's separated
/// spectrogram and its video's spectrogram.
pub fn cyclic_mine(
    separated: [&[MagSpec]; 2],
    targets: [&MagSpec; 2],
    epsilon: f64,
    norm: L1Norm,
) -> Result<MiningSelection> {
    let mut distances: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut pos = [0; 2];
    let mut neg = [None; 2];
    for k in 0..2 {
        distances[k] = separated[k]
            .iter()
            .map(|s| spec_l1_distance(s, targets[k], norm))
            .collect::<Result<_>>()?;
        (pos[k], neg[k]) = mine_from_distances(&distances[k], epsilon)?;
    }
    Ok(MiningSelection {
        pos,
        neg,
        distances,
        epsilon,
    })
}

fn check_selection(sel: &MiningSelection, sizes: [usize; 2]) -> Result<()> {
    for k in 0..2 {
        let n = sizes[k];
        if sel.pos[k] >= n || sel.neg[k].is_some_and(|j| j >= n) {
            return Err(Error::input(format!(
                "mining selection out of range for video {} with {n} objects",
                k + 1
            )));
        }
    }
    Ok(())
}

/// Single-sound grounding loss with separation-mined positives, both videos.
pub fn loss_grd_s_star(
    t: &mut Tape,
    negatives: [Var; 2],
    solo_probs: [&[Var]; 2],
    sel: &MiningSelection,
) -> Result<Var> {
    check_selection(sel, [solo_probs[0].len(), solo_probs[1].len()])?;
    let mut terms = Vec::with_capacity(4);
    for k in 0..2 {
        terms.push(t.cross_entropy(negatives[k], Y_NEG));
        terms.push(t.cross_entropy(solo_probs[k][sel.pos[k]], Y_POS));
    }
    Ok(t.sum(&terms))
}

/// Mixed-sound grounding loss with separation-mined positives and negatives;
/// the negative term of a video is dropped when it has no eligible negative.
pub fn loss_grd_m_star_hat(
    t: &mut Tape,
    mixture_probs: [&[Var]; 2],
    sel: &MiningSelection,
) -> Result<Var> {
    check_selection(sel, [mixture_probs[0].len(), mixture_probs[1].len()])?;
    let mut terms = Vec::with_capacity(4);
    for k in 0..2 {
        terms.push(t.cross_entropy(mixture_probs[k][sel.pos[k]], Y_POS));
        if let Some(j) = sel.neg[k] {
            terms.push(t.cross_entropy(mixture_probs[k][j], Y_NEG));
        }
    }
    Ok(t.sum(&terms))
}

/// Every loss term of one batch; `None` marks terms the objective did not use.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_grd_s: Option<f64>,
    pub l_sep: Option<f64>,
    pub l_sep_star: Option<f64>,
    pub l_grd_m: Option<f64>,
    pub l_grd_s_star: Option<f64>,
    pub l_grd_m_star_hat: Option<f64>,
    pub l_col: Option<f64>,
    pub l_ccol: Option<f64>,
}

impl LossBreakdown {
    pub fn col(l_grd_s: f64, l_sep_star: f64, l_grd_m: f64) -> Self {
        LossBreakdown {
            l_grd_s: Some(l_grd_s),
            l_sep_star: Some(l_sep_star),
            l_grd_m: Some(l_grd_m),
            l_col: Some(l_grd_s + l_sep_star + l_grd_m),
            ..Default::default()
        }
    }

    pub fn ccol(l_grd_s_star: f64, l_sep_star: f64, l_grd_m_star_hat: f64) -> Self {
        LossBreakdown {
            l_grd_s_star: Some(l_grd_s_star),
            l_sep_star: Some(l_sep_star),
            l_grd_m_star_hat: Some(l_grd_m_star_hat),
            l_ccol: Some(l_grd_s_star + l_sep_star + l_grd_m_star_hat),
            ..Default::default()
        }
    }

    /// Elementwise sum; a term present in either side is present in the result.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        fn add(a: &mut Option<f64>, b: Option<f64>) {
            if let Some(b) = b {
                *a = Some(a.unwrap_or(0.0) + b);
            }
        }
        add(&mut self.l_grd_s, other.l_grd_s);
        add(&mut self.l_sep, other.l_sep);
        add(&mut self.l_sep_star, other.l_sep_star);
        add(&mut self.l_grd_m, other.l_grd_m);
        add(&mut self.l_grd_s_star, other.l_grd_s_star);
        add(&mut self.l_grd_m_star_hat, other.l_grd_m_star_hat);
        add(&mut self.l_col, other.l_col);
        add(&mut self.l_ccol, other.l_ccol);
    }

    pub fn scaled(&self, c: f64) -> LossBreakdown {
        let s = |v: Option<f64>| v.map(|x| x * c);
        LossBreakdown {
            l_grd_s: s(self.l_grd_s),
            l_sep: s(self.l_sep),
            l_sep_star: s(self.l_sep_star),
            l_grd_m: s(self.l_grd_m),
            l_grd_s_star: s(self.l_grd_s_star),
            l_grd_m_star_hat: s(self.l_grd_m_star_hat),
            l_col: s(self.l_col),
            l_ccol: s(self.l_ccol),
        }
    }

    pub fn terms(&self) -> [(&'static str, Option<f64>); 8] {
        [
            ("l_grd_s", self.l_grd_s),
            ("l_sep", self.l_sep),
            ("l_sep_star", self.l_sep_star),
            ("l_grd_m", self.l_grd_m),
            ("l_grd_s_star", self.l_grd_s_star),
            ("l_grd_m_star_hat", self.l_grd_m_star_hat),
            ("l_col", self.l_col),
            ("l_ccol", self.l_ccol),
        ]
    }
}

pub fn loss_col(l_grd_s: f64, l_sep_star: f64, l_grd_m: f64) -> LossBreakdown {
    LossBreakdown::col(l_grd_s, l_sep_star, l_grd_m)
}

pub fn loss_ccol(l_grd_s_star: f64, l_sep_star: f64, l_grd_m_star_hat: f64) -> LossBreakdown {
    LossBreakdown::ccol(l_grd_s_star, l_sep_star, l_grd_m_star_hat)
}
