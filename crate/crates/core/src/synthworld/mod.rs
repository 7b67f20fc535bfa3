//! The seeded synthetic cocktail-party world: class-conditional harmonic
//! sounds, noisy object features, A/B/C/D sample composition, manifests, and
//! an adapter for external WAV + feature data.

mod compose;
mod ingest;
mod manifest;
mod source;
pub mod wav;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tfspace::StftConfig;

pub use compose::{compose_sample, BaseVideo};
pub use ingest::{ingest_external, load_external_pair, load_feature_record, MappingEntry};
pub use manifest::{
    build_dataset, composite_capacity, BaseSource, EntrySource, ExternalVideo, Manifest, SynthSeeds,
    SampleDescriptor, Split,
};
pub use source::{synth_source, EnvelopeKind, SourceClass};

/// Time-domain waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn silent(len: usize, sample_rate: u32) -> Self {
        AudioClip {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Elementwise sum; errors on length or rate mismatch.
    pub fn try_add(&self, other: &AudioClip) -> Result<AudioClip> {
        if self.len() != other.len() {
            return Err(Error::input(format!(
                "cannot mix clips of {} and {} samples",
                self.len(),
                other.len()
            )));
        }
        if self.sample_rate != other.sample_rate {
            return Err(Error::input("cannot mix clips with different sample rates"));
        }
        Ok(AudioClip {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
            sample_rate: self.sample_rate,
        })
    }
}

/// A visual object proposal with its raw (detector-side) feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectCandidate {
    pub object_id: String,
    pub class_id: Option<usize>,
    pub raw_feature: Vec<f64>,
    /// Ground truth for evaluation and the oracle ablation only.
    pub is_audible_gt: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CompositionMode {
    #[default]
    Solo,
    Duet,
}

/// One mix-and-separate unit: two composed videos and their sounds.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeSample {
    pub sample_id: String,
    pub video1_objects: Vec<ObjectCandidate>,
    pub video2_objects: Vec<ObjectCandidate>,
    pub sound1: AudioClip,
    pub sound2: AudioClip,
    pub mixture: AudioClip,
    pub mode: CompositionMode,
    /// Per video: `(object index, that object's own sound)` for every audible
    /// object. Empty for unlabeled external data.
    pub audible_sources: [Vec<(usize, AudioClip)>; 2],
}

impl CompositeSample {
    pub fn objects(&self, video: usize) -> &[ObjectCandidate] {
        match video {
            0 => &self.video1_objects,
            _ => &self.video2_objects,
        }
    }

    pub fn sound(&self, video: usize) -> &AudioClip {
        match video {
            0 => &self.sound1,
            _ => &self.sound2,
        }
    }

    pub fn has_labels(&self) -> bool {
        self.video1_objects
            .iter()
            .chain(&self.video2_objects)
            .all(|o| o.is_audible_gt.is_some())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub world_seed: u64,
    /// Number of source classes `K`.
    pub num_classes: usize,
    /// Raw object feature dimension `D`.
    pub feature_dim: usize,
    /// Per-coordinate standard deviation of object feature noise.
    pub feature_noise: f64,
    /// Object candidates contributed by each base video.
    pub objects_per_video: usize,
    /// Base videos per split; splits never share a base video.
    pub base_sources: SplitCounts,
    /// Composite samples per split.
    pub samples: SplitCounts,
    pub mode: CompositionMode,
    /// Probability that B or D contribute audio in duet mode.
    pub duet_audible_prob: f64,
    /// Lowest class fundamental, Hz.
    pub f0_low: f64,
    /// Octaves spanned by all class fundamental ranges.
    pub f0_octaves: f64,
    /// Fraction of each class's octave slot its fundamental range occupies.
    pub f0_fill: f64,
    /// Peak amplitude of every synthesized clip.
    pub peak: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            world_seed: 7,
            num_classes: 11,
            feature_dim: 64,
            feature_noise: 0.3,
            objects_per_video: 1,
            base_sources: SplitCounts {
                train: 220,
                val: 22,
                test: 22,
            },
            samples: SplitCounts {
                train: 2000,
                val: 100,
                test: 100,
            },
            mode: CompositionMode::Solo,
            duet_audible_prob: 0.5,
            f0_low: 110.0,
            f0_octaves: 4.0,
            f0_fill: 0.6,
            peak: 0.5,
        }
    }
}

impl WorldConfig {
    /// Split sizes used in the original MUSIC-based protocol.
    pub fn paper_scale() -> Self {
        WorldConfig {
            base_sources: SplitCounts {
                train: 468,
                val: 26,
                test: 26,
            },
            samples: SplitCounts {
                train: 18_720,
                val: 260,
                test: 260,
            },
            ..WorldConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 4 {
            return Err(Error::config(
                "num_classes must be >= 4 (A, B, C and D carry distinct classes)",
            ));
        }
        if self.feature_dim == 0 || self.objects_per_video == 0 {
            return Err(Error::config("feature_dim and objects_per_video must be positive"));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(Error::config("feature_noise must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.duet_audible_prob) {
            return Err(Error::config("duet_audible_prob must be in [0, 1]"));
        }
        if !(self.f0_fill > 0.0 && self.f0_fill <= 1.0) || !(self.f0_low > 0.0) || !(self.f0_octaves > 0.0)
        {
            return Err(Error::config("invalid fundamental layout"));
        }
        if !(self.peak > 0.0 && self.peak <= 1.0) {
            return Err(Error::config("peak must be in (0, 1]"));
        }
        Ok(())
    }
}

/// A fully parameterised synthetic world.
#[derive(Clone, Debug)]
pub struct SynthWorld {
    pub config: WorldConfig,
    pub stft: StftConfig,
    pub classes: Vec<SourceClass>,
    prototypes: Vec<Vec<f64>>,
}

impl SynthWorld {
    pub fn new(config: WorldConfig, stft: StftConfig) -> Result<Self> {
        config.validate()?;
        stft.validate()?;
        let classes = (0..config.num_classes)
            .map(|k| SourceClass::derive(k, &config))
            .collect::<Vec<_>>();
        let f0_top = config.f0_low * 2f64.powf(config.f0_octaves);
        if f0_top >= stft.sample_rate as f64 / 2.0 {
            return Err(Error::config("class fundamentals exceed the Nyquist frequency"));
        }
        let prototypes = (0..config.num_classes)
            .map(|k| {
                let mut rng = seed::rng(config.world_seed, "prototype", &[k as u64]);
                (0..config.feature_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            })
            .collect();
        Ok(SynthWorld {
            config,
            stft,
            classes,
            prototypes,
        })
    }

    pub fn prototype(&self, class_id: usize) -> &[f64] {
        &self.prototypes[class_id]
    }

    /// Object candidate of `class_id`: prototype plus `sigma * N(0, I)`.
    pub fn synth_object(&self, class_id: usize, seed: u64) -> Result<ObjectCandidate> {
        if class_id >= self.config.num_classes {
            return Err(Error::input(format!(
                "class_id {class_id} out of range 0..{}",
                self.config.num_classes
            )));
        }
        let mut rng = seed::rng(self.config.world_seed, "object", &[class_id as u64, seed]);
        let sigma = self.config.feature_noise;
        let raw_feature = self.prototypes[class_id]
            .iter()
            .map(|p| {
                let n: f64 = StandardNormal.sample(&mut rng);
                p + sigma * n
            })
            .collect();
        Ok(ObjectCandidate {
            object_id: format!("obj-c{class_id}-s{seed}"),
            class_id: Some(class_id),
            raw_feature,
            is_audible_gt: Some(false),
        })
    }

    pub fn synth_source(&self, class_id: usize, seed: u64) -> Result<AudioClip> {
        let class = self
            .classes
            .get(class_id)
            .ok_or_else(|| Error::input(format!("class_id {class_id} out of range")))?;
        synth_source(class, self.stft.frames, seed, &self.stft, self.config.peak)
    }
}
