//! Evaluation protocols: single- and mixed-sound grounding accuracy, BSS
//! separation scores with silent-object rows, the silent-energy success rate,
//! and the report files.

pub mod bss;
pub mod report;

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{binarize, GroundingScore, ModelState};
use crate::seed;
use crate::synthworld::{AudioClip, ObjectCandidate};
use crate::tfspace::{apply_mask, clip_to_grid, istft, MagSpec, Mask, StftConfig};
use crate::trainer::Dataset;

pub use bss::{bss_eval_sources, safe_db, BssScores};

/// Schema version stamped on every report file.
pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Distortion filter taps in BSS scoring.
    pub filter_len: usize,
    /// Silent-object success threshold on the summed separated grid magnitudes.
    pub energy_threshold: f64,
    /// Standard deviation of the noise floor given to silent references.
    pub floor_amplitude: f64,
    pub floor_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            filter_len: 512,
            energy_threshold: 20.0,
            floor_amplitude: 1e-10,
            floor_seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_len == 0 {
            return Err(Error::config("eval.filter_len must be positive"));
        }
        if !(self.floor_amplitude > 0.0) || !self.energy_threshold.is_finite() {
            return Err(Error::config("eval.floor_amplitude must be positive and the threshold finite"));
        }
        Ok(())
    }

    pub fn floor_policy(&self) -> String {
        format!(
            "silent references and silent-object estimates share N(0, {:e}^2) noise (seed {})",
            self.floor_amplitude, self.floor_seed
        )
    }
}

/// The two model capabilities evaluation needs.
pub trait AvModel {
    fn stft(&self) -> &StftConfig;
    /// Grounding scores of every object against one audio grid.
    fn ground(&self, audio: &MagSpec, objects: &[ObjectCandidate]) -> Result<Vec<GroundingScore>>;
    /// One soft mask per object over the mixture grid.
    fn masks(&self, mixture: &MagSpec, objects: &[ObjectCandidate]) -> Result<Vec<Mask>>;
}

impl AvModel for ModelState {
    fn stft(&self) -> &StftConfig {
        &self.stft
    }

    fn ground(&self, audio: &MagSpec, objects: &[ObjectCandidate]) -> Result<Vec<GroundingScore>> {
        let fs = self.model.encode_audio(audio, &self.stft)?;
        objects
            .iter()
            .map(|o| self.model.ground_embeddings(&fs, &self.model.encode_object(o)?))
            .collect()
    }

    fn masks(&self, mixture: &MagSpec, objects: &[ObjectCandidate]) -> Result<Vec<Mask>> {
        let fo = objects
            .iter()
            .map(|o| self.model.encode_object(o))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .model
            .separate(mixture, &fo, &self.stft)?
            .into_iter()
            .map(|s| s.mask)
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Each video's own sound against its objects.
    SingleSound,
    /// The mixture against every object of both videos.
    MixedSound,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::SingleSound => "single",
            Protocol::MixedSound => "mixed",
        }
    }
}

/// How separated outputs of an object are muted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    /// Every object keeps its output.
    Ungated,
    /// Binarized mixed-sound grounding.
    Learned,
    /// Ground-truth audibility.
    Oracle,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }

    fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingReport {
    pub schema_version: u32,
    pub protocol: Protocol,
    /// `NaN` (rendered `"nan"`) when nothing was scored.
    #[serde(with = "report::score")]
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    /// Keyed by class id, `"unknown"` for unclassed objects.
    pub per_class: BTreeMap<String, Confusion>,
}

impl GroundingReport {
    /// Accuracy recomputed from the confusion counts.
    pub fn accuracy_from_counts(&self) -> f64 {
        let (c, t) = self
            .per_class
            .values()
            .fold((0, 0), |(c, t), x| (c + x.correct(), t + x.total()));
        c as f64 / t as f64
    }
}

fn class_key(o: &ObjectCandidate) -> String {
    o.class_id.map_or_else(|| "unknown".to_string(), |c| c.to_string())
}

fn label(o: &ObjectCandidate) -> Result<bool> {
    o.is_audible_gt.ok_or_else(|| {
        Error::Evaluation(format!("object {} has no audibility label", o.object_id))
    })
}

/// Scores `binarize(g)` against ground-truth audibility for every object of
/// the first `limit` composites.
pub fn grounding_accuracy(
    model: &dyn AvModel,
    data: &Dataset,
    protocol: Protocol,
    limit: Option<usize>,
) -> Result<GroundingReport> {
    check_stft(model, data)?;
    let n = limit.unwrap_or(data.len()).min(data.len());
    let mut per_class: BTreeMap<String, Confusion> = BTreeMap::new();
    for i in 0..n {
        let s = data.prepared(i)?;
        let groups: Vec<(&MagSpec, Vec<ObjectCandidate>)> = match protocol {
            Protocol::SingleSound => vec![
                (&s.solo[0], s.objects[0].clone()),
                (&s.solo[1], s.objects[1].clone()),
            ],
            Protocol::MixedSound => {
                let all = s.objects[0].iter().chain(&s.objects[1]).cloned().collect();
                vec![(&s.mixture, all)]
            }
        };
        for (audio, objs) in groups {
            let labels = objs.iter().map(label).collect::<Result<Vec<_>>>()?;
            let scores = model.ground(audio, &objs)?;
            for ((o, l), g) in objs.iter().zip(labels).zip(scores) {
                per_class
                    .entry(class_key(o))
                    .or_default()
                    .record(binarize(&g) == 1, l);
            }
        }
    }
    let (correct, total) = per_class
        .values()
        .fold((0, 0), |(c, t), x| (c + x.correct(), t + x.total()));
    Ok(GroundingReport {
        schema_version: REPORT_SCHEMA,
        protocol,
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        per_class,
    })
}

fn check_stft(model: &dyn AvModel, data: &Dataset) -> Result<()> {
    if model.stft() != data.stft() {
        return Err(Error::Evaluation(
            "checkpoint STFT configuration does not match the manifest's".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub sample_id: String,
    pub object_id: String,
    pub video: usize,
    #[serde(with = "report::score")]
    pub sdr: f64,
    #[serde(with = "report::score")]
    pub sir: f64,
    #[serde(with = "report::score")]
    pub sar: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    #[serde(with = "report::score_opt")]
    pub sdr: Option<f64>,
    #[serde(with = "report::score_opt")]
    pub sir: Option<f64>,
    #[serde(with = "report::score_opt")]
    pub sar: Option<f64>,
}

impl MeanScores {
    /// Pooled mean over rows; `None` for no rows.
    pub fn pooled(rows: &[SourceRow]) -> Self {
        if rows.is_empty() {
            return MeanScores::default();
        }
        let n = rows.len() as f64;
        MeanScores {
            sdr: Some(rows.iter().map(|r| r.sdr).sum::<f64>() / n),
            sir: Some(rows.iter().map(|r| r.sir).sum::<f64>() / n),
            sar: Some(rows.iter().map(|r| r.sar).sum::<f64>() / n),
        }
    }

    /// Mean over samples of each sample's mean.
    pub fn per_sample(rows: &[SourceRow]) -> Self {
        let mut groups: Vec<Vec<SourceRow>> = Vec::new();
        for r in rows {
            match groups.last_mut() {
                Some(g) if g[0].sample_id == r.sample_id => g.push(r.clone()),
                _ => groups.push(vec![r.clone()]),
            }
        }
        if groups.is_empty() {
            return MeanScores::default();
        }
        let means: Vec<MeanScores> = groups.iter().map(|g| MeanScores::pooled(g)).collect();
        let n = means.len() as f64;
        let avg = |f: fn(&MeanScores) -> Option<f64>| Some(means.iter().filter_map(f).sum::<f64>() / n);
        MeanScores {
            sdr: avg(|m| m.sdr),
            sir: avg(|m| m.sir),
            sar: avg(|m| m.sar),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SilentEnergy {
    pub sample_id: String,
    pub object_id: String,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub schema_version: u32,
    pub gating: Gating,
    pub filter_len: usize,
    pub floor_policy: String,
    /// Audible objects, each scored against its own source.
    pub rows: Vec<SourceRow>,
    pub mean: MeanScores,
    pub per_sample_mean: MeanScores,
    /// References scored against themselves.
    pub gt_mean: MeanScores,
    /// Silent objects, gated outputs against floored zero references.
    pub silent_rows: Vec<SourceRow>,
    pub silent_mean: MeanScores,
    pub silent_gt_mean: MeanScores,
    pub silent_energies: Vec<SilentEnergy>,
    pub energy_threshold: f64,
    pub silent_success_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationOptions {
    /// Score silent objects.
    pub silent: bool,
    /// Include ground-truth calibration rows.
    pub gt: bool,
    pub limit: Option<usize>,
}

impl Default for SeparationOptions {
    fn default() -> Self {
        SeparationOptions {
            silent: true,
            gt: true,
            limit: None,
        }
    }
}

/// Fraction of silent objects whose separated energy is strictly below the threshold.
pub fn success_rate(energies: &[SilentEnergy], threshold: f64) -> Option<f64> {
    if energies.is_empty() {
        return None;
    }
    let ok = energies.iter().filter(|e| e.energy < threshold).count();
    Some(ok as f64 / energies.len() as f64)
}

fn gates(
    model: &dyn AvModel,
    gating: Gating,
    mixture: &MagSpec,
    objects: &[ObjectCandidate],
) -> Result<Vec<bool>> {
    match gating {
        Gating::Ungated => Ok(vec![true; objects.len()]),
        Gating::Oracle => objects.iter().map(label).collect(),
        Gating::Learned => Ok(model
            .ground(mixture, objects)?
            .iter()
            .map(|g| binarize(g) == 1)
            .collect()),
    }
}

fn floor_noise(cfg: &EvalConfig, sample: usize, object: usize, len: usize) -> Vec<f64> {
    let mut rng = seed::rng(cfg.floor_seed, "floor", &[sample as u64, object as u64]);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            cfg.floor_amplitude * z
        })
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn push_rows(
    out: &mut Vec<SourceRow>,
    scores: &BssScores,
    keep: &[(usize, String, usize)],
    sample_id: &str,
) {
    for (r, object_id, video) in keep {
        out.push(SourceRow {
            sample_id: sample_id.to_string(),
            object_id: object_id.clone(),
            video: *video,
            sdr: scores.sdr[*r],
            sir: scores.sir[*r],
            sar: scores.sar[*r],
        });
    }
}

/// Separates every object of every composite, reconstructs waveforms with the
/// mixture phase and scores them.
///
/// Audible objects are scored ungated against their own sources, all audible
/// sources of a composite in one BSS call. Silent objects are scored per video
/// with gated outputs; their references are zero plus the noise floor, and the
/// same floor is added to their estimates so a fully muted output matches its
/// reference.
pub fn separation_report(
    model: &dyn AvModel,
    data: &Dataset,
    cfg: &EvalConfig,
    gating: Gating,
    opts: &SeparationOptions,
) -> Result<SeparationReport> {
    check_stft(model, data)?;
    cfg.validate()?;
    let stft = data.stft().clone();
    let n = opts.limit.unwrap_or(data.len()).min(data.len());
    let (mut rows, mut gt_rows, mut silent_rows, mut silent_gt) = (vec![], vec![], vec![], vec![]);
    let mut energies = Vec::new();

    for i in 0..n {
        let sample = data.load(i)?;
        let (mix_spec, mix_grid) = clip_to_grid(&sample.mixture, &stft)?;
        let objects: Vec<ObjectCandidate> = sample
            .video1_objects
            .iter()
            .chain(&sample.video2_objects)
            .cloned()
            .collect();
        let n1 = sample.video1_objects.len();
        let video_of = |j: usize| if j < n1 { 0 } else { 1 };
        let masks = model.masks(&mix_grid, &objects)?;
        let waves: Vec<AudioClip> = masks
            .iter()
            .map(|m| istft(&apply_mask(&mix_spec, m, &stft)?, &stft))
            .collect::<Result<_>>()?;

        // Audible objects against their sources.
        let mut refs = Vec::new();
        let mut ests = Vec::new();
        let mut keep = Vec::new();
        for k in 0..2 {
            for (idx, src) in &sample.audible_sources[k] {
                let j = if k == 0 { *idx } else { n1 + idx };
                keep.push((refs.len(), objects[j].object_id.clone(), k));
                refs.push(src.samples.clone());
                ests.push(waves[j].samples.clone());
            }
        }
        if !refs.is_empty() {
            let s = bss_eval_sources(&refs, &ests, cfg.filter_len)?;
            push_rows(&mut rows, &s, &keep, &sample.sample_id);
            if opts.gt {
                let g = bss_eval_sources(&refs, &refs, cfg.filter_len)?;
                push_rows(&mut gt_rows, &g, &keep, &sample.sample_id);
            }
        }

        if !opts.silent {
            continue;
        }
        let labels: Vec<Option<bool>> = objects.iter().map(|o| o.is_audible_gt).collect();
        if labels.iter().all(|l| *l != Some(false)) {
            continue;
        }
        let open = gates(model, gating, &mix_grid, &objects)?;
        for (j, o) in objects.iter().enumerate() {
            if labels[j] == Some(false) {
                let e: f64 = if open[j] {
                    masks[j].values.iter().zip(&mix_grid.values).map(|(m, x)| m * x).sum()
                } else {
                    0.0
                };
                energies.push(SilentEnergy {
                    sample_id: sample.sample_id.clone(),
                    object_id: o.object_id.clone(),
                    energy: e,
                });
            }
        }
        for k in 0..2 {
            let members: Vec<usize> = (0..objects.len()).filter(|&j| video_of(j) == k).collect();
            if !members.iter().any(|&j| labels[j] == Some(false)) {
                continue;
            }
            let base = if k == 0 { 0 } else { n1 };
            let source_of = |j: usize| {
                sample.audible_sources[k]
                    .iter()
                    .find(|(idx, _)| *idx == j - base)
                    .map(|(_, c)| c.samples.clone())
            };
            let (mut refs, mut ests, mut keep) = (vec![], vec![], vec![]);
            let len = sample.mixture.len();
            for &j in &members {
                let silent = labels[j] == Some(false);
                let out = if open[j] { waves[j].samples.clone() } else { vec![0.0; len] };
                if silent {
                    let fl = floor_noise(cfg, i, j, len);
                    keep.push((refs.len(), objects[j].object_id.clone(), k));
                    ests.push(add(&out, &fl));
                    refs.push(fl);
                } else {
                    match source_of(j) {
                        Some(src) => {
                            refs.push(src);
                            ests.push(out);
                        }
                        // Audible but without a separate source: leave it out.
                        None => continue,
                    }
                }
            }
            let s = bss_eval_sources(&refs, &ests, cfg.filter_len)?;
            push_rows(&mut silent_rows, &s, &keep, &sample.sample_id);
            if opts.gt {
                let g = bss_eval_sources(&refs, &refs, cfg.filter_len)?;
                push_rows(&mut silent_gt, &g, &keep, &sample.sample_id);
            }
        }
    }

    Ok(SeparationReport {
        schema_version: REPORT_SCHEMA,
        gating,
        filter_len: cfg.filter_len,
        floor_policy: cfg.floor_policy(),
        mean: MeanScores::pooled(&rows),
        per_sample_mean: MeanScores::per_sample(&rows),
        gt_mean: MeanScores::pooled(&gt_rows),
        silent_mean: MeanScores::pooled(&silent_rows),
        silent_gt_mean: MeanScores::pooled(&silent_gt),
        silent_success_rate: success_rate(&energies, cfg.energy_threshold),
        energy_threshold: cfg.energy_threshold,
        silent_energies: energies,
        silent_rows,
        rows,
    })
}

/// Separated energy of every silent object (gated, summed grid magnitudes).
pub fn silent_energies(
    model: &dyn AvModel,
    data: &Dataset,
    gating: Gating,
    limit: Option<usize>,
) -> Result<Vec<SilentEnergy>> {
    check_stft(model, data)?;
    let n = limit.unwrap_or(data.len()).min(data.len());
    let mut out = Vec::new();
    for i in 0..n {
        let s = data.prepared(i)?;
        let objects: Vec<ObjectCandidate> = s.objects.iter().flatten().cloned().collect();
        if !objects.iter().any(|o| o.is_audible_gt == Some(false)) {
            continue;
        }
        let masks = model.masks(&s.mixture, &objects)?;
        let open = gates(model, gating, &s.mixture, &objects)?;
        for (j, o) in objects.iter().enumerate() {
            if o.is_audible_gt == Some(false) {
                let e = if open[j] {
                    masks[j].values.iter().zip(&s.mixture.values).map(|(m, x)| m * x).sum()
                } else {
                    0.0
                };
                out.push(SilentEnergy {
                    sample_id: s.sample_id.clone(),
                    object_id: o.object_id.clone(),
                    energy: e,
                });
            }
        }
    }
    Ok(out)
}

/// Success rate of silent objects under `threshold`; `None` without silent objects.
pub fn silent_success_rate(
    model: &dyn AvModel,
    data: &Dataset,
    threshold: f64,
    gating: Gating,
) -> Result<Option<f64>> {
    Ok(success_rate(&silent_energies(model, data, gating, None)?, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    /// Grounds by the labels (or says "audible" to everything) and emits
    /// constant masks.
    struct Stub {
        stft: StftConfig,
        oracle: bool,
        mask: f64,
    }

    impl AvModel for Stub {
        fn stft(&self) -> &StftConfig {
            &self.stft
        }
        fn ground(&self, _: &MagSpec, objects: &[ObjectCandidate]) -> Result<Vec<GroundingScore>> {
            Ok(objects
                .iter()
                .map(|o| {
                    let a = !self.oracle || o.is_audible_gt == Some(true);
                    GroundingScore { probs: if a { [0.9, 0.1] } else { [0.2, 0.8] } }
                })
                .collect())
        }
        fn masks(&self, m: &MagSpec, objects: &[ObjectCandidate]) -> Result<Vec<Mask>> {
            objects
                .iter()
                .map(|_| Mask::new(m.freq, m.time, vec![self.mask; m.values.len()]))
                .collect()
        }
    }

    fn stub(oracle: bool, mask: f64) -> Stub {
        Stub { stft: testkit::stft(), oracle, mask }
    }

    #[test]
    fn oracle_and_constant_classifiers() {
        let [_, _, test] = testkit::datasets(2, 2);
        for p in [Protocol::SingleSound, Protocol::MixedSound] {
            let r = grounding_accuracy(&stub(true, 0.0), &test, p, None).unwrap();
            assert_eq!(r.accuracy, 1.0);
            assert_eq!(r.total, 4 * test.len() as u64);
            // Half the candidates of every solo composite sound.
            let r = grounding_accuracy(&stub(false, 0.0), &test, p, None).unwrap();
            let audible = (0..test.len())
                .flat_map(|i| test.load(i).unwrap().video1_objects.into_iter().chain(test.load(i).unwrap().video2_objects))
                .filter(|o| o.is_audible_gt == Some(true))
                .count() as u64;
            assert_eq!(r.correct, audible);
            assert_eq!(r.accuracy, 0.5);
            assert_eq!(r.accuracy, r.accuracy_from_counts());
            let fp: u64 = r.per_class.values().map(|c| c.fp).sum();
            assert_eq!(fp, r.total - audible);
        }
    }

    #[test]
    fn muted_silent_objects_succeed() {
        let [_, _, test] = testkit::datasets(2, 2);
        let cfg = EvalConfig { filter_len: 8, ..EvalConfig::default() };
        let r = separation_report(&stub(false, 0.0), &test, &cfg, Gating::Ungated, &SeparationOptions::default())
            .unwrap();
        assert_eq!(r.silent_success_rate, Some(1.0));
        assert_eq!(r.rows.len(), 2 * test.len());
        // A zero estimate of an audible source has no target component.
        assert!(r.rows.iter().all(|x| x.sdr == f64::NEG_INFINITY), "{:?}", r.rows);
        // Muted silent outputs equal their floor references exactly.
        assert!(!r.silent_rows.is_empty());
        assert!(r.silent_rows.iter().all(|x| x.sdr > 100.0), "{:?}", r.silent_rows);
        assert!(r.gt_mean.sdr.unwrap() > 100.0);
    }

    #[test]
    fn gating_decides_silent_energy() {
        let [_, _, test] = testkit::datasets(2, 2);
        let open = silent_energies(&stub(false, 1.0), &test, Gating::Ungated, None).unwrap();
        let learned = silent_energies(&stub(true, 1.0), &test, Gating::Learned, None).unwrap();
        let oracle = silent_energies(&stub(false, 1.0), &test, Gating::Oracle, None).unwrap();
        assert_eq!(open.len(), 2 * test.len());
        for (i, e) in open.iter().enumerate() {
            let s = test.prepared(i / 2).unwrap();
            let total: f64 = s.mixture.values.iter().sum();
            assert!((e.energy - total).abs() < 1e-9 * total.max(1.0));
            assert_eq!(learned[i].energy, 0.0);
            assert_eq!(oracle[i].energy, 0.0);
        }
    }

    #[test]
    fn success_rate_is_strict_and_monotone() {
        let e = |v: f64| SilentEnergy { sample_id: String::new(), object_id: String::new(), energy: v };
        let es = vec![e(0.0), e(5.0), e(20.0), e(40.0)];
        assert_eq!(success_rate(&es, 20.0), Some(0.5));
        assert_eq!(success_rate(&[], 20.0), None);
        let mut prev = 0.0;
        for th in [0.0, 1.0, 5.0, 5.5, 20.0, 20.1, 100.0] {
            let r = success_rate(&es, th).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn empty_manifest_gives_empty_report() {
        let [_, _, mut test] = testkit::datasets(2, 2);
        test.manifest.entries.clear();
        let test = Dataset::new(test.manifest, test.loader).unwrap();
        let r = separation_report(&stub(false, 0.0), &test, &EvalConfig::default(), Gating::Learned, &SeparationOptions::default())
            .unwrap();
        assert!(r.rows.is_empty() && r.mean.sdr.is_none() && r.silent_success_rate.is_none());
        let g = grounding_accuracy(&stub(true, 0.0), &test, Protocol::SingleSound, None).unwrap();
        assert_eq!(g.total, 0);
        assert!(g.accuracy.is_nan());
    }

    #[test]
    fn mismatched_stft_is_refused() {
        let [_, _, test] = testkit::datasets(2, 2);
        let mut s = stub(true, 0.0);
        s.stft.hop_length += 1;
        let e = grounding_accuracy(&s, &test, Protocol::SingleSound, None);
        assert!(matches!(e, Err(Error::Evaluation(_))));
    }
}
