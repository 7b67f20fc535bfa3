#![allow(dead_code)]

pub mod fd;

use ccol_core::nets::{ArchConfig, ModelState};
use ccol_core::synthworld::{build_dataset, SplitCounts, SynthWorld, WorldConfig};
use ccol_core::tfspace::StftConfig;
use ccol_core::trainer::{Dataset, SampleLoader};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stft() -> StftConfig {
    StftConfig {
        window_length: 62,
        hop_length: 16,
        frames: 16,
        net_freq: 16,
        net_time: 16,
        ..StftConfig::default()
    }
}

pub fn arch() -> ArchConfig {
    ArchConfig {
        feature_dim: 4,
        audio_widths: vec![3, 4],
        object_hidden: 5,
        ground_hidden: [5, 4],
        unet_base: 2,
        unet_max_width: 4,
        unet_levels: Some(2),
        sep_channels: 3,
    }
}

pub fn world(train: usize, val: usize, test: usize, objects_per_video: usize) -> SynthWorld {
    let cfg = WorldConfig {
        feature_dim: 4,
        objects_per_video,
        base_sources: SplitCounts { train: 22, val: 11, test: 11 },
        samples: SplitCounts { train, val, test },
        ..WorldConfig::default()
    };
    SynthWorld::new(cfg, stft()).unwrap()
}

pub fn datasets(w: &SynthWorld) -> [Dataset; 3] {
    build_dataset(w)
        .unwrap()
        .map(|m| Dataset::new(m, SampleLoader::Synthetic(w.clone())).unwrap())
}

/// A fresh model with every parameter jittered, so no score sits exactly on
/// a decision boundary.
pub fn jittered(seed: u64, scale: f64) -> ModelState {
    let mut s = ModelState::fresh(arch(), stft(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in 0..s.model.params.len() {
        for v in s.model.params.tensor_mut(id).data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
    s
}
