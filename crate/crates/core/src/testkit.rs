//! Tiny fixtures shared by unit tests.

use crate::nets::{ArchConfig, ModelState};
use crate::synthworld::{build_dataset, SplitCounts, SynthWorld, WorldConfig};
use crate::tfspace::StftConfig;
use crate::trainer::{Dataset, SampleLoader};

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
        audio_widths: vec![3],
        object_hidden: 4,
        ground_hidden: [4, 3],
        unet_base: 2,
        unet_max_width: 4,
        unet_levels: Some(1),
        sep_channels: 3,
    }
}

pub fn world(train: usize, val: usize) -> SynthWorld {
    let cfg = WorldConfig {
        feature_dim: 4,
        base_sources: SplitCounts {
            train: 22,
            val: 11,
            test: 11,
        },
        samples: SplitCounts {
            train,
            val,
            test: 4,
        },
        ..WorldConfig::default()
    };
    SynthWorld::new(cfg, stft()).unwrap()
}

/// Train, validation and test datasets over a tiny world.
pub fn datasets(train: usize, val: usize) -> [Dataset; 3] {
    let w = world(train, val);
    build_dataset(&w)
        .unwrap()
        .map(|m| Dataset::new(m, SampleLoader::Synthetic(w.clone())).unwrap())
}

pub fn fresh(seed: u64) -> ModelState {
    ModelState::fresh(arch(), stft(), seed).unwrap()
}
