//! Finite-difference gradient checking shared by the gradient tests and the
//! acceptance suite.

use ccol_core::colearn;
use ccol_core::nets::{self, binarize, GroundingScore, Model, ModelState, Tape, Tensor, Var};
use ccol_core::tfspace::{MagSpec, StftConfig};
use ccol_core::trainer::{element_loss, ElementDraw, Objective, PreparedSample, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const EPSILON: f64 = 0.1;

pub const TERMS: [&str; 6] = ["l_grd_s", "l_sep", "l_sep_star", "l_grd_m", "l_grd_s_star", "l_grd_m_star_hat"];

/// Builds the named loss term for one composite from the public network and
/// loss APIs.
pub fn term(model: &Model, stft: &StftConfig, s: &PreparedSample, which: &str, t: &mut Tape) -> Var {
    let fo: [Vec<Var>; 2] = [0, 1].map(|k| {
        s.objects[k]
            .iter()
            .map(|o| {
                let x = model.object_input(t, o).unwrap();
                model.object_embed(t, x)
            })
            .collect()
    });
    let grid = |t: &mut Tape, m: &MagSpec| t.constant(Tensor::from_vec(&[m.freq, m.time], m.values.clone()));
    let mut solo: [Vec<Var>; 2] = [vec![], vec![]];
    let mut negatives = [None, None];
    for k in 0..2 {
        let x = model.spec_input(t, &s.solo[k].network_input(stft)).unwrap();
        let fs = model.audio_embed(t, x);
        solo[k] = fo[k].iter().map(|o| model.ground(t, fs, *o)).collect();
        negatives[k] = Some(model.ground(t, fs, fo[1 - k][0]));
    }
    let negatives = negatives.map(Option::unwrap);
    let x = model.spec_input(t, &s.mixture.network_input(stft)).unwrap();
    let fm = model.audio_embed(t, x);
    let mixed: [Vec<Var>; 2] = [0, 1].map(|k| fo[k].iter().map(|o| model.ground(t, fm, *o)).collect());
    let x = model.spec_input(t, &s.mixture.network_input(stft)).unwrap();
    let feats = model.separator_features(t, x);
    let mix = grid(t, &s.mixture);
    let preds: [Vec<Var>; 2] = [0, 1].map(|k| {
        fo[k]
            .iter()
            .map(|o| {
                let m = model.separator_mask(t, feats, *o);
                t.mul(m, mix)
            })
            .collect()
    });
    let targets = [grid(t, &s.solo[0]), grid(t, &s.solo[1])];
    let norm = stft.l1_norm;
    match which {
        "l_grd_s" => {
            let (a, _) = colearn::loss_grd_s(t, negatives[0], &solo[0]).unwrap();
            let (b, _) = colearn::loss_grd_s(t, negatives[1], &solo[1]).unwrap();
            t.sum(&[a, b])
        }
        "l_sep" => colearn::loss_sep_plain(t, targets, [&preds[0], &preds[1]], norm).unwrap(),
        "l_sep_star" => {
            let gates: [Vec<f64>; 2] = [0, 1].map(|k| {
                mixed[k]
                    .iter()
                    .map(|p| {
                        let d = t.value(*p).data();
                        binarize(&GroundingScore { probs: [d[0], d[1]] }) as f64
                    })
                    .collect()
            });
            colearn::loss_sep_aware(t, targets, [&preds[0], &preds[1]], [&gates[0], &gates[1]], norm).unwrap()
        }
        "l_grd_m" => colearn::loss_grd_m(t, [&mixed[0], &mixed[1]]).unwrap().0,
        _ => {
            let sep: [Vec<MagSpec>; 2] = [0, 1].map(|k| {
                preds[k]
                    .iter()
                    .map(|v| MagSpec::new(s.mixture.freq, s.mixture.time, t.value(*v).data().to_vec()).unwrap())
                    .collect()
            });
            let sel = colearn::cyclic_mine([&sep[0], &sep[1]], [&s.solo[0], &s.solo[1]], EPSILON, norm).unwrap();
            if which == "l_grd_s_star" {
                colearn::loss_grd_s_star(t, negatives, [&solo[0], &solo[1]], &sel).unwrap()
            } else {
                colearn::loss_grd_m_star_hat(t, [&mixed[0], &mixed[1]], &sel).unwrap()
            }
        }
    }
}

/// Worst relative error between analytic and central-difference gradients
/// over sampled coordinates of every parameter tensor, and where it occurred.
pub fn check(
    model: &Model,
    loss: &dyn Fn(&Model) -> (f64, Vec<Tensor>),
    coords_per_tensor: usize,
    seed: u64,
) -> (f64, String) {
    let (_, grads) = loss(model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: (f64, String) = (0.0, String::new());
    let mut probe = model.clone();
    for id in 0..model.params.len() {
        let n = model.params.tensor(id).data().len();
        for _ in 0..coords_per_tensor.min(n) {
            let c = rng.random_range(0..n);
            let orig = model.params.tensor(id).data()[c];
            probe.params.tensor_mut(id).data_mut()[c] = orig + STEP;
            let up = loss(&probe).0;
            probe.params.tensor_mut(id).data_mut()[c] = orig - STEP;
            let down = loss(&probe).0;
            probe.params.tensor_mut(id).data_mut()[c] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let an = grads[id].data()[c];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            if rel >= worst.0 {
                worst = (rel, format!("{}[{c}]: analytic {an:e}, numeric {fd:e}", model.params.name(id)));
            }
        }
    }
    worst
}

/// A jittered tiny model and two composites with two objects per video.
pub fn fixture() -> (ModelState, Vec<PreparedSample>) {
    let w = super::world(3, 1, 1, 2);
    let [train, _, _] = super::datasets(&w);
    let st = super::jittered(11, 0.3);
    let s = (0..2).map(|i| train.prepared(i).unwrap().into_owned()).collect();
    (st, s)
}

/// Worst error of a named loss term, summed over the fixture composites.
pub fn term_error(st: &ModelState, samples: &[PreparedSample], which: &str) -> (f64, String) {
    let f = |m: &Model| {
        nets::gradients(&m.params, |t| {
            let parts: Vec<Var> = samples.iter().map(|s| term(m, &st.stft, s, which, t)).collect();
            Ok(t.sum(&parts))
        })
        .unwrap()
    };
    check(&st.model, &f, 3, 1)
}

pub const OBJECTIVES: [Objective; 5] =
    [Objective::Grounding, Objective::RandomObj, Objective::Col, Objective::Oracle, Objective::Ccol];

/// Worst error of a full training objective, summed over the fixture composites.
pub fn objective_error(st: &ModelState, samples: &[PreparedSample], obj: Objective, seed: u64) -> (f64, String) {
    let draws: Vec<ElementDraw> = samples
        .iter()
        .enumerate()
        .map(|(j, s)| ElementDraw::new(s, 3, Stage::Col, 0, j))
        .collect();
    let f = |m: &Model| {
        nets::gradients(&m.params, |t| {
            let parts: Vec<Var> = samples
                .iter()
                .zip(&draws)
                .map(|(s, d)| element_loss(m, &st.stft, t, s, d, obj, EPSILON).unwrap().0)
                .collect();
            Ok(t.sum(&parts))
        })
        .unwrap()
    };
    check(&st.model, &f, 2, seed)
}
