//! Fixtures shared by the benchmarks: the bench preset's world and one
//! prepared composite.

use ccol_core::config::{Preset, RunConfig};
use ccol_core::synthworld::{build_dataset, SynthWorld};
use ccol_core::trainer::{Dataset, PreparedSample, SampleLoader};

pub fn config() -> RunConfig {
    RunConfig::preset(Preset::Bench)
}

/// The first training composite of the bench world.
pub fn sample(cfg: &RunConfig) -> PreparedSample {
    let world = SynthWorld::new(cfg.world.clone(), cfg.stft.clone()).expect("bench world builds");
    let [train, _, _] = build_dataset(&world).expect("bench manifests build");
    let data = Dataset::new(train, SampleLoader::Synthetic(world)).expect("dataset");
    data.prepared(0).expect("sample 0 prepares").into_owned()
}
