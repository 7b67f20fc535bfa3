//! Three-stage curriculum training: optimizer and schedule, deterministic
//! batching, the per-sample objectives of every ablation mode, validation and
//! model selection.

pub mod checkpoint;
mod data;
mod runlog;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::colearn::{self, LossBreakdown};
use crate::error::{Error, Result};
use crate::evalsuite::{self, EvalConfig, Gating, Protocol};
use crate::nets::{
    self, binarize, AdamMoments, GroundingScore, Model, ModelState, ParamStore, Tape, Tensor, Var,
    SEPARATOR_PREFIX,
};
use crate::seed;
use crate::synthworld::ObjectCandidate;
use crate::tfspace::{MagSpec, StftConfig};

pub use checkpoint::Checkpoint;
pub use data::{Dataset, PreparedSample, SampleLoader};
pub use runlog::{LogRecord, RunLog, ValMetrics};

/// Curriculum stage: grounding pretraining, co-learning, cyclic fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    Grounding = 1,
    Col = 2,
    Ccol = 3,
}

impl Stage {
    pub fn number(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Stage {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Stage::Grounding),
            2 => Ok(Stage::Col),
            3 => Ok(Stage::Ccol),
            _ => Err(format!("stage must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.number()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Grounding => "1-grounding",
            Stage::Col => "2-col",
            Stage::Ccol => "3-ccol",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    GroundingOnly,
    RandomObj,
    Col,
    Ccol,
    Oracle,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] = [
        TrainMode::GroundingOnly,
        TrainMode::RandomObj,
        TrainMode::Col,
        TrainMode::Ccol,
        TrainMode::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::GroundingOnly => "grounding_only",
            TrainMode::RandomObj => "random_obj",
            TrainMode::Col => "col",
            TrainMode::Ccol => "ccol",
            TrainMode::Oracle => "oracle",
        }
    }

    /// Stages the mode runs, in order.
    pub fn stages(self) -> &'static [Stage] {
        match self {
            TrainMode::GroundingOnly => &[Stage::Grounding],
            TrainMode::RandomObj => &[Stage::Col],
            TrainMode::Col | TrainMode::Oracle => &[Stage::Grounding, Stage::Col],
            TrainMode::Ccol => &[Stage::Grounding, Stage::Col, Stage::Ccol],
        }
    }

    /// How separated outputs are gated at evaluation time.
    pub fn gating(self) -> Gating {
        match self {
            TrainMode::RandomObj => Gating::Ungated,
            TrainMode::Oracle => Gating::Oracle,
            _ => Gating::Learned,
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mode `{s}`")))
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The loss a (mode, stage) pair optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `l_grd_s` on both videos.
    Grounding,
    /// Mix-and-separate L1 with one uniformly drawn object per video.
    RandomObj,
    /// `l_col`.
    Col,
    /// `l_col` with ground-truth gates in the separation term.
    Oracle,
    /// `l_ccol`.
    Ccol,
}

pub fn objective(mode: TrainMode, stage: Stage) -> Result<Objective> {
    if !mode.stages().contains(&stage) {
        return Err(Error::config(format!("mode {mode} has no stage {stage}")));
    }
    Ok(match (mode, stage) {
        (TrainMode::RandomObj, _) => Objective::RandomObj,
        (_, Stage::Grounding) => Objective::Grounding,
        (TrainMode::Oracle, _) => Objective::Oracle,
        (_, Stage::Col) => Objective::Col,
        (_, Stage::Ccol) => Objective::Ccol,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub mode: TrainMode,
    pub batch_size: usize,
    pub epochs_per_stage: usize,
    pub base_lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f64,
    /// Cyclic-mining negative threshold on the spectrogram distance.
    pub epsilon: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Run validation after every epoch when a val set is supplied.
    pub validate: bool,
    /// Cap on val samples scored per epoch.
    pub val_limit: Option<usize>,
    /// Prepared-sample cache budget; larger datasets are prepared on the fly.
    pub cache_limit_mb: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Grounding,
            mode: TrainMode::Ccol,
            batch_size: 16,
            epochs_per_stage: 20,
            base_lr: 1e-4,
            lr_milestones: vec![10, 17],
            lr_factor: 0.1,
            epsilon: 0.1,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            validate: true,
            val_limit: None,
            cache_limit_mb: 1024,
        }
    }
}

impl TrainConfig {
    /// Batch 48, 60 epochs per stage, decay at epochs 30 and 50.
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 48,
            epochs_per_stage: 60,
            lr_milestones: vec![30, 50],
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs_per_stage == 0 {
            return Err(Error::config("batch_size and epochs_per_stage must be positive"));
        }
        if let Some(m) = self.lr_milestones.iter().find(|m| **m >= self.epochs_per_stage) {
            return Err(Error::config(format!(
                "lr milestone {m} is not below epochs_per_stage {}",
                self.epochs_per_stage
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("base_lr must be positive"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::config("lr_factor must be in (0, 1]"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::config("epsilon must be nonnegative"));
        }
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !beta_ok(self.adam_beta1) || !beta_ok(self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::config("invalid Adam hyperparameters"));
        }
        objective(self.mode, self.stage).map(|_| ())
    }
}

/// `base_lr * lr_factor^(number of milestones <= epoch)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.lr_milestones.iter().filter(|m| **m <= epoch).count();
    cfg.base_lr * cfg.lr_factor.powi(passed as i32)
}

/// One bias-corrected Adam update of the parameters flagged `trainable`.
pub fn adam_step(
    params: &mut ParamStore,
    moments: &mut AdamMoments,
    grads: &[Tensor],
    lr: f64,
    cfg: &TrainConfig,
    trainable: &[bool],
) {
    moments.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(moments.t as i32);
    let c2 = 1.0 - b2.powi(moments.t as i32);
    for (i, g) in grads.iter().enumerate() {
        if !trainable[i] {
            continue;
        }
        let (m, v) = (moments.m[i].data_mut(), moments.v[i].data_mut());
        let p = params.tensor_mut(i).data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.adam_eps);
        }
    }
}

/// Parameters an objective may update. Grounding pretraining never writes
/// the separator.
pub fn trainable_mask(params: &ParamStore, obj: Objective) -> Vec<bool> {
    params
        .names()
        .iter()
        .map(|n| obj != Objective::Grounding || !n.starts_with(SEPARATOR_PREFIX))
        .collect()
}

/// Per-sample random choices: candidate order within each video, the
/// cross-video negative and the Random Obj pick.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementDraw {
    pub order: [Vec<usize>; 2],
    pub negative: [usize; 2],
    pub pick: [usize; 2],
}

impl ElementDraw {
    pub fn new(sample: &PreparedSample, seed_root: u64, stage: Stage, epoch: usize, index: usize) -> Self {
        let mut rng = seed::rng(
            seed_root,
            "element",
            &[stage.number() as u64, epoch as u64, index as u64],
        );
        let mut order: [Vec<usize>; 2] = [
            (0..sample.objects[0].len()).collect(),
            (0..sample.objects[1].len()).collect(),
        ];
        order[0].shuffle(&mut rng);
        order[1].shuffle(&mut rng);
        let negative = [
            rng.random_range(0..sample.objects[1].len()),
            rng.random_range(0..sample.objects[0].len()),
        ];
        let pick = [
            rng.random_range(0..sample.objects[0].len()),
            rng.random_range(0..sample.objects[1].len()),
        ];
        ElementDraw {
            order,
            negative,
            pick,
        }
    }

    /// Identity order, first objects as negatives and picks.
    pub fn identity(sample: &PreparedSample) -> Self {
        ElementDraw {
            order: [
                (0..sample.objects[0].len()).collect(),
                (0..sample.objects[1].len()).collect(),
            ],
            negative: [0, 0],
            pick: [0, 0],
        }
    }
}

fn grid_constant(t: &mut Tape, m: &MagSpec) -> Var {
    t.constant(Tensor::from_vec(&[m.freq, m.time], m.values.clone()))
}

/// Records one sample's objective on `t` and returns the loss node with its
/// term breakdown.
pub fn element_loss(
    model: &Model,
    stft: &StftConfig,
    t: &mut Tape,
    sample: &PreparedSample,
    draw: &ElementDraw,
    obj: Objective,
    epsilon: f64,
) -> Result<(Var, LossBreakdown)> {
    if sample.objects.iter().any(|o| o.is_empty()) {
        return Err(Error::input(format!("sample {} has a video without objects", sample.sample_id)));
    }
    let objs: [Vec<&ObjectCandidate>; 2] = [0, 1].map(|k| {
        draw.order[k].iter().map(|&i| &sample.objects[k][i]).collect()
    });
    let norm = stft.l1_norm;

    let mut fo: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        for o in &objs[k] {
            let x = model.object_input(t, o)?;
            fo[k].push(model.object_embed(t, x));
        }
    }

    let separate = |t: &mut Tape, which: [Vec<usize>; 2]| -> Result<([Var; 2], [Vec<Var>; 2])> {
        let x = model.spec_input(t, &sample.mixture.network_input(stft))?;
        let feats = model.separator_features(t, x);
        let mix = grid_constant(t, &sample.mixture);
        let mut preds: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
        for k in 0..2 {
            for &n in &which[k] {
                let m = model.separator_mask(t, feats, fo[k][n]);
                preds[k].push(t.mul(m, mix));
            }
        }
        let targets = [grid_constant(t, &sample.solo[0]), grid_constant(t, &sample.solo[1])];
        Ok((targets, preds))
    };

    if obj == Objective::RandomObj {
        let (targets, preds) = separate(t, [vec![draw.pick[0]], vec![draw.pick[1]]])?;
        let l = colearn::loss_sep_plain(t, targets, [&preds[0], &preds[1]], norm)?;
        let b = LossBreakdown {
            l_sep: Some(t.scalar(l)),
            ..Default::default()
        };
        return Ok((l, b));
    }

    // Solo-sound grounding: own candidates plus the cross-video negative.
    let mut negatives = Vec::with_capacity(2);
    let mut solo: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        let x = model.spec_input(t, &sample.solo[k].network_input(stft))?;
        let fs = model.audio_embed(t, x);
        for o in &fo[k] {
            solo[k].push(model.ground(t, fs, *o));
        }
        negatives.push(model.ground(t, fs, fo[1 - k][draw.negative[k]]));
    }
    let negatives = [negatives[0], negatives[1]];

    if obj == Objective::Grounding {
        let (a, _) = colearn::loss_grd_s(t, negatives[0], &solo[0])?;
        let (b, _) = colearn::loss_grd_s(t, negatives[1], &solo[1])?;
        let l = t.sum(&[a, b]);
        let br = LossBreakdown {
            l_grd_s: Some(t.scalar(l)),
            ..Default::default()
        };
        return Ok((l, br));
    }

    let x = model.spec_input(t, &sample.mixture.network_input(stft))?;
    let fm = model.audio_embed(t, x);
    let mut mixed: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        for o in &fo[k] {
            mixed[k].push(model.ground(t, fm, *o));
        }
    }
    let gates: [Vec<f64>; 2] = match obj {
        Objective::Oracle => {
            let mut g: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for k in 0..2 {
                for o in &objs[k] {
                    let a = o.is_audible_gt.ok_or_else(|| {
                        Error::config(format!(
                            "oracle mode needs audibility labels; object {} has none",
                            o.object_id
                        ))
                    })?;
                    g[k].push(a as u8 as f64);
                }
            }
            g
        }
        _ => [0, 1].map(|k| {
            mixed[k]
                .iter()
                .map(|p| {
                    let d = t.value(*p).data();
                    binarize(&GroundingScore { probs: [d[0], d[1]] }) as f64
                })
                .collect()
        }),
    };
    let all = [(0..objs[0].len()).collect(), (0..objs[1].len()).collect()];
    let (targets, preds) = separate(t, all)?;
    let l_sep = colearn::loss_sep_aware(t, targets, [&preds[0], &preds[1]], [&gates[0], &gates[1]], norm)?;

    match obj {
        Objective::Col | Objective::Oracle => {
            let (a, _) = colearn::loss_grd_s(t, negatives[0], &solo[0])?;
            let (b, _) = colearn::loss_grd_s(t, negatives[1], &solo[1])?;
            let grd_s = t.sum(&[a, b]);
            let (grd_m, _) = colearn::loss_grd_m(t, [&mixed[0], &mixed[1]])?;
            let l = t.sum(&[grd_s, l_sep, grd_m]);
            let br = LossBreakdown::col(t.scalar(grd_s), t.scalar(l_sep), t.scalar(grd_m));
            Ok((l, br))
        }
        Objective::Ccol => {
            let to_spec = |t: &Tape, v: &Var| {
                MagSpec::new(sample.mixture.freq, sample.mixture.time, t.value(*v).data().to_vec())
            };
            let sep: [Vec<MagSpec>; 2] = [
                preds[0].iter().map(|v| to_spec(t, v)).collect::<Result<_>>()?,
                preds[1].iter().map(|v| to_spec(t, v)).collect::<Result<_>>()?,
            ];
            let sel = colearn::cyclic_mine(
                [&sep[0], &sep[1]],
                [&sample.solo[0], &sample.solo[1]],
                epsilon,
                norm,
            )?;
            let grd_s = colearn::loss_grd_s_star(t, negatives, [&solo[0], &solo[1]], &sel)?;
            let grd_m = colearn::loss_grd_m_star_hat(t, [&mixed[0], &mixed[1]], &sel)?;
            let l = t.sum(&[grd_s, l_sep, grd_m]);
            let br = LossBreakdown::ccol(t.scalar(grd_s), t.scalar(l_sep), t.scalar(grd_m));
            Ok((l, br))
        }
        Objective::Grounding | Objective::RandomObj => unreachable!(),
    }
}

static WORKERS: AtomicUsize = AtomicUsize::new(1);

/// Threads used for per-element gradients. The reduction order is fixed, so
/// results are bit-identical for any worker count.
pub fn set_workers(n: usize) {
    WORKERS.store(n.max(1), Ordering::Relaxed);
}

pub fn workers() -> usize {
    WORKERS.load(Ordering::Relaxed)
}

type ElementResult = Result<(f64, LossBreakdown, Vec<Tensor>)>;

fn element_gradients(
    model: &Model,
    stft: &StftConfig,
    sample: &PreparedSample,
    draw: &ElementDraw,
    obj: Objective,
    epsilon: f64,
) -> ElementResult {
    let mut br = LossBreakdown::default();
    let (l, g) = nets::gradients(&model.params, |t| {
        let (v, b) = element_loss(model, stft, t, sample, draw, obj, epsilon)?;
        br = b;
        Ok(v)
    })
    .map_err(|e| match e {
        Error::Numerical(m) => Error::Numerical(format!("sample {}: {m}", sample.sample_id)),
        other => other,
    })?;
    Ok((l, br, g))
}

/// Loss (mean over the batch), breakdown and gradients for one batch.
pub fn batch_gradients(
    model: &Model,
    stft: &StftConfig,
    batch: &[(&PreparedSample, ElementDraw)],
    obj: Objective,
    epsilon: f64,
) -> Result<(f64, LossBreakdown, Vec<Tensor>)> {
    let run = |items: &[(&PreparedSample, ElementDraw)]| -> Vec<ElementResult> {
        items
            .iter()
            .map(|(s, d)| element_gradients(model, stft, s, d, obj, epsilon))
            .collect()
    };
    let threads = workers().min(batch.len());
    let results: Vec<ElementResult> = if threads <= 1 {
        run(batch)
    } else {
        let chunk = batch.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch.chunks(chunk).map(|c| scope.spawn(move || run(c))).collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };

    let mut total: Vec<Tensor> = model
        .params
        .tensors()
        .iter()
        .map(|p| Tensor::zeros(p.shape()))
        .collect();
    let mut breakdown = LossBreakdown::default();
    let mut loss = 0.0;
    for r in results {
        let (l, br, g) = r?;
        loss += l;
        breakdown.accumulate(&br);
        for (acc, gi) in total.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    let n = batch.len().max(1) as f64;
    for g in &mut total {
        for v in g.data_mut() {
            *v /= n;
        }
    }
    Ok((loss / n, breakdown.scaled(1.0 / n), total))
}

/// Result of one stage: the final state and the validation-selected one.
#[derive(Clone, Debug)]
pub struct StageRun {
    pub last: ModelState,
    pub best: ModelState,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
}

/// Progress notifications for checkpointing.
pub enum StageEvent<'a> {
    /// A finished epoch; the state is the last good one.
    Epoch(&'a ModelState),
    /// A new validation best.
    Best(&'a ModelState),
}

fn check_prerequisites(cfg: &TrainConfig, state: &ModelState) -> Result<bool> {
    let s = cfg.stage.number();
    if state.stage == s && !state.stage_complete {
        return Ok(true);
    }
    let first = cfg.mode.stages()[0];
    let want = if cfg.stage == first { 0 } else { s - 1 };
    if state.stage != want || !state.stage_complete {
        let have = if state.stage == 0 {
            "an untrained state".to_string()
        } else {
            format!(
                "a {} stage-{} state",
                if state.stage_complete { "completed" } else { "partial" },
                state.stage
            )
        };
        let need = if want == 0 {
            "an untrained state".to_string()
        } else {
            format!("a completed stage-{want} checkpoint")
        };
        return Err(Error::Staging(format!(
            "stage {} of mode {} needs {need}, got {have}",
            cfg.stage, cfg.mode
        )));
    }
    Ok(false)
}

/// Validation metrics and the scalar used for model selection.
pub fn validate_epoch(
    state: &ModelState,
    obj: Objective,
    val: &Dataset,
    eval: &EvalConfig,
    limit: Option<usize>,
    mode: TrainMode,
) -> Result<(ValMetrics, Option<f64>)> {
    let mut m = ValMetrics::default();
    if !val.has_labels() || val.is_empty() {
        return Ok((m, None));
    }
    let n = limit.unwrap_or(val.len()).min(val.len());
    if obj == Objective::Grounding {
        let r = evalsuite::grounding_accuracy(state, val, Protocol::SingleSound, Some(n))?;
        m.single_accuracy = Some(r.accuracy);
        return Ok((m.clone(), m.single_accuracy));
    }
    let opts = evalsuite::SeparationOptions {
        silent: false,
        gt: false,
        limit: Some(n),
    };
    let r = evalsuite::separation_report(state, val, eval, mode.gating(), &opts)?;
    m.sdr = r.mean.sdr;
    m.sir = r.mean.sir;
    if obj != Objective::RandomObj {
        let g = evalsuite::grounding_accuracy(state, val, Protocol::MixedSound, Some(n))?;
        m.mixed_accuracy = Some(g.accuracy);
    }
    Ok((m.clone(), m.sdr))
}

/// Runs (or resumes) one curriculum stage.
pub fn run_stage(
    cfg: &TrainConfig,
    eval: &EvalConfig,
    mut state: ModelState,
    train: &Dataset,
    val: Option<&Dataset>,
    config_hash: &str,
    log: &mut RunLog,
    observer: &mut dyn FnMut(StageEvent<'_>) -> Result<()>,
) -> Result<StageRun> {
    cfg.validate()?;
    let obj = objective(cfg.mode, cfg.stage)?;
    if obj == Objective::Oracle && !train.has_labels() {
        return Err(Error::config(
            "oracle mode needs audibility labels, but the training manifest has none",
        ));
    }
    if state.stft != *train.stft() {
        return Err(Error::config("model STFT config differs from the dataset's"));
    }
    if train.is_empty() {
        return Err(Error::config("training manifest is empty"));
    }
    let resume = check_prerequisites(cfg, &state)?;
    if !resume {
        state.stage = cfg.stage.number();
        state.epoch = 0;
        state.step = 0;
        state.stage_complete = false;
        state.moments = AdamMoments::zeros(&state.model.params);
    }
    log.push(LogRecord::Start {
        stage: cfg.stage,
        mode: cfg.mode,
        seed: cfg.seed,
        config_hash: config_hash.to_string(),
        first_step: state.step,
        first_epoch: state.epoch,
    })?;

    let trainable = trainable_mask(&state.model.params, obj);
    let stft = state.stft.clone();
    let mut best = state.clone();
    let mut best_metric: Option<f64> = None;
    let mut best_epoch: Option<usize> = None;
    let mut last_losses = LossBreakdown::default();

    for epoch in state.epoch..cfg.epochs_per_stage {
        let lr = lr_schedule(epoch, cfg);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(
            cfg.seed,
            "shuffle",
            &[cfg.stage.number() as u64, epoch as u64],
        ));
        let mut epoch_losses = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let prepared = chunk
                .iter()
                .map(|&i| train.prepared(i))
                .collect::<Result<Vec<_>>>()?;
            let batch: Vec<(&PreparedSample, ElementDraw)> = chunk
                .iter()
                .zip(&prepared)
                .map(|(&i, p)| {
                    let p: &PreparedSample = p;
                    (p, ElementDraw::new(p, cfg.seed, cfg.stage, epoch, i))
                })
                .collect();
            let (_, br, grads) = batch_gradients(&state.model, &stft, &batch, obj, cfg.epsilon)
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!(
                        "stage {} epoch {epoch} step {}: {m}",
                        cfg.stage,
                        state.step + 1
                    )),
                    other => other,
                })?;
            adam_step(&mut state.model.params, &mut state.moments, &grads, lr, cfg, &trainable);
            state.step += 1;
            epoch_losses.accumulate(&br);
            batches += 1;
            log.push(LogRecord::Step {
                stage: cfg.stage,
                epoch,
                step: state.step,
                lr,
                wall_clock_s: log.elapsed(),
                losses: br,
            })?;
        }
        state.epoch = epoch + 1;
        last_losses = epoch_losses.scaled(1.0 / batches.max(1) as f64);

        let (val_metrics, metric) = match val {
            Some(v) if cfg.validate => {
                let (m, s) = validate_epoch(&state, obj, v, eval, cfg.val_limit, cfg.mode)?;
                (Some(m), s)
            }
            _ => (None, None),
        };
        // A NaN score never wins the selection.
        let metric = metric.filter(|m| !m.is_nan());
        let improved = match (metric, best_metric) {
            (Some(m), Some(b)) => m > b,
            (Some(_), None) => true,
            (None, _) => metric.is_none() && best_metric.is_none(),
        };
        if improved {
            best = state.clone();
            best.stage_complete = true;
            if metric.is_some() {
                best_metric = metric;
                best_epoch = Some(epoch);
            }
        }
        log.push(LogRecord::Epoch {
            stage: cfg.stage,
            epoch,
            step: state.step,
            wall_clock_s: log.elapsed(),
            losses: last_losses.clone(),
            val: val_metrics,
            selection_metric: metric,
            best_epoch,
        })?;
        observer(StageEvent::Epoch(&state))?;
        if improved {
            observer(StageEvent::Best(&best))?;
        }
    }
    state.stage_complete = true;
    if best_metric.is_none() {
        best = state.clone();
    }
    log.push(LogRecord::End {
        stage: cfg.stage,
        step: state.step,
        wall_clock_s: log.elapsed(),
        best_epoch,
        best_metric,
        losses: last_losses,
    })?;
    Ok(StageRun {
        last: state,
        best,
        best_epoch,
        best_metric,
    })
}
