use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{compose_sample, BaseVideo, CompositeSample, CompositionMode, SynthWorld};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(&self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Generation recipe of one synthetic base video.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BaseSource {
    pub base_id: u64,
    pub class_id: usize,
    pub audio_seed: u64,
    /// One seed per object candidate; the first object is the sound maker.
    pub object_seeds: Vec<u64>,
}

/// On-disk assets of one externally supplied video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalVideo {
    pub audio: PathBuf,
    pub features: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audible: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSeeds {
    pub bases: Vec<BaseSource>,
    pub duet: u64,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDescriptor {
    pub sample_id: String,
    pub split: Split,
    pub mode: CompositionMode,
    pub base_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<SynthSeeds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<ExternalVideo>,
}

/// Where an entry's data comes from.
pub enum EntrySource<'a> {
    Synthetic(&'a SynthSeeds),
    External(&'a ExternalVideo),
}

impl SampleDescriptor {
    pub fn source(&self) -> Result<EntrySource<'_>> {
        match (&self.seeds, &self.paths) {
            (Some(s), None) => Ok(EntrySource::Synthetic(s)),
            (None, Some(p)) => Ok(EntrySource::External(p)),
            _ => Err(Error::input(format!(
                "entry {} must carry exactly one of `seeds` or `paths`",
                self.sample_id
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub split: Split,
    pub world_seed: u64,
    pub entries: Vec<SampleDescriptor>,
}

#[derive(Serialize)]
struct LineOut<'a> {
    world_seed: u64,
    #[serde(flatten)]
    entry: &'a SampleDescriptor,
}

#[derive(Deserialize)]
struct LineIn {
    world_seed: u64,
    #[serde(flatten)]
    entry: SampleDescriptor,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            let line = LineOut {
                world_seed: self.world_seed,
                entry: e,
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; an empty file yields an empty manifest of `default_split`.
    pub fn read(path: &Path, default_split: Split) -> Result<Manifest> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        let mut world_seed = None;
        for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LineIn = serde_json::from_str(&line).map_err(|e| {
                Error::input(format!("{}: line {}: {e}", path.display(), n + 1))
            })?;
            if *world_seed.get_or_insert(parsed.world_seed) != parsed.world_seed {
                return Err(Error::input(format!(
                    "{}: mixed world seeds in one manifest",
                    path.display()
                )));
            }
            entries.push(parsed.entry);
        }
        let split = entries.first().map(|e| e.split).unwrap_or(default_split);
        if entries.iter().any(|e| e.split != split) {
            return Err(Error::input(format!("{}: mixed splits", path.display())));
        }
        Ok(Manifest {
            split,
            world_seed: world_seed.unwrap_or(0),
            entries,
        })
    }

    /// Every base-source identifier referenced by the manifest.
    pub fn base_ids(&self) -> HashSet<String> {
        self.entries.iter().flat_map(|e| e.base_ids.iter().cloned()).collect()
    }
}

/// Ordered `(A, B, C, D)` quadruples with pairwise distinct classes, given the
/// number of base videos per class.
pub fn composite_capacity(class_counts: &[usize]) -> f64 {
    // Elementary symmetric polynomial e4 of the counts, times 4! orderings.
    let mut e = [1.0f64, 0.0, 0.0, 0.0, 0.0];
    for &n in class_counts {
        for j in (1..=4).rev() {
            e[j] += e[j - 1] * n as f64;
        }
    }
    24.0 * e[4]
}

fn split_bases(world: &SynthWorld, split: Split) -> Vec<BaseSource> {
    let cfg = &world.config;
    let offset = match split {
        Split::Train => 0,
        Split::Val => cfg.base_sources.train,
        Split::Test => cfg.base_sources.train + cfg.base_sources.val,
    };
    (0..cfg.base_sources.get(split))
        .map(|i| {
            let id = (offset + i) as u64;
            BaseSource {
                base_id: id,
                class_id: i % cfg.num_classes,
                audio_seed: seed::derive(cfg.world_seed, "base-audio", &[id]),
                object_seeds: (0..cfg.objects_per_video as u64)
                    .map(|j| seed::derive(cfg.world_seed, "base-object", &[id, j]))
                    .collect(),
            }
        })
        .collect()
}

const MAX_DRAWS_PER_SAMPLE: usize = 10_000;

/// Deterministic train/val/test manifests for `world`.
pub fn build_dataset(world: &SynthWorld) -> Result<[Manifest; 3]> {
    let cfg = &world.config;
    let build = |split: Split| -> Result<Manifest> {
        let bases = split_bases(world, split);
        let wanted = cfg.samples.get(split);
        let mut class_counts = vec![0usize; cfg.num_classes];
        for b in &bases {
            class_counts[b.class_id] += 1;
        }
        let capacity = composite_capacity(&class_counts);
        if wanted as f64 > capacity {
            return Err(Error::config(format!(
                "{split}: {wanted} samples requested but only {capacity} distinct class-disjoint compositions exist"
            )));
        }
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(wanted);
        let mut rng = seed::rng(cfg.world_seed, "compose", &[split.index()]);
        for i in 0..wanted {
            let mut draws = 0;
            let quad = loop {
                draws += 1;
                if draws > MAX_DRAWS_PER_SAMPLE {
                    return Err(Error::config(format!(
                        "{split}: could not find a fresh composition for sample {i}; lower the sample count"
                    )));
                }
                let a = i % bases.len();
                let mut picked = vec![a];
                while picked.len() < 4 {
                    let c = rng.random_range(0..bases.len());
                    if picked.iter().all(|&p| bases[p].class_id != bases[c].class_id) {
                        picked.push(c);
                    }
                }
                if seen.insert(picked.clone()) {
                    break picked;
                }
            };
            let quad: Vec<BaseSource> = quad.into_iter().map(|q| bases[q].clone()).collect();
            entries.push(SampleDescriptor {
                sample_id: format!("{split}-{i:06}"),
                split,
                mode: cfg.mode,
                base_ids: quad.iter().map(|b| format!("base-{}", b.base_id)).collect(),
                seeds: Some(SynthSeeds {
                    duet: seed::derive(cfg.world_seed, "duet", &[split.index(), i as u64]),
                    bases: quad,
                }),
                paths: None,
            });
        }
        Ok(Manifest {
            split,
            world_seed: cfg.world_seed,
            entries,
        })
    };
    Ok([build(Split::Train)?, build(Split::Val)?, build(Split::Test)?])
}

impl SynthWorld {
    pub fn base_video(&self, base: &BaseSource) -> Result<BaseVideo> {
        let k = self.config.num_classes;
        let sound = self.synth_source(base.class_id, base.audio_seed)?;
        let objects = base
            .object_seeds
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                // Distractor objects take the following classes in order.
                let class = (base.class_id + j) % k;
                let mut o = self.synth_object(class, s)?;
                o.object_id = format!("base-{}-obj{j}", base.base_id);
                Ok(o)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BaseVideo {
            base_id: base.base_id,
            sound,
            objects,
        })
    }

    /// Regenerates the composite sample described by a synthetic entry.
    pub fn load_sample(&self, entry: &SampleDescriptor) -> Result<CompositeSample> {
        let seeds = match entry.source()? {
            EntrySource::Synthetic(s) => s,
            EntrySource::External(_) => {
                return Err(Error::input(format!(
                    "entry {} references external files; load it with the ingestion adapter",
                    entry.sample_id
                )))
            }
        };
        if seeds.bases.len() != 4 {
            return Err(Error::input(format!(
                "entry {} needs four base sources",
                entry.sample_id
            )));
        }
        let videos = seeds
            .bases
            .iter()
            .map(|b| self.base_video(b))
            .collect::<Result<Vec<_>>>()?;
        compose_sample(
            &entry.sample_id,
            [&videos[0], &videos[1], &videos[2], &videos[3]],
            entry.mode,
            self.config.duet_audible_prob,
            seeds.duet,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{SplitCounts, WorldConfig};
    use crate::tfspace::StftConfig;

    fn small_world(samples: SplitCounts) -> SynthWorld {
        let cfg = WorldConfig {
            num_classes: 6,
            base_sources: SplitCounts {
                train: 24,
                val: 12,
                test: 12,
            },
            samples,
            ..WorldConfig::default()
        };
        let stft = StftConfig {
            frames: 16,
            net_freq: 32,
            net_time: 16,
            ..StftConfig::default()
        };
        SynthWorld::new(cfg, stft).unwrap()
    }

    #[test]
    fn capacity_matches_enumeration() {
        let counts = [2usize, 1, 3, 1, 2];
        let mut classes = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            classes.extend(std::iter::repeat(c).take(n));
        }
        let mut brute = 0usize;
        let n = classes.len();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        let cl = [classes[a], classes[b], classes[c], classes[d]];
                        let distinct = (0..4).all(|i| (i + 1..4).all(|j| cl[i] != cl[j]));
                        if distinct {
                            brute += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(composite_capacity(&counts), brute as f64);
    }

    #[test]
    fn splits_sized_disjoint_and_deterministic() {
        let w = small_world(SplitCounts {
            train: 40,
            val: 10,
            test: 10,
        });
        let [tr, va, te] = build_dataset(&w).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (40, 10, 10));
        let (a, b, c) = (tr.base_ids(), va.base_ids(), te.base_ids());
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        let again = build_dataset(&w).unwrap();
        assert_eq!(tr.to_jsonl().unwrap(), again[0].to_jsonl().unwrap());
        for e in &tr.entries {
            let classes: Vec<_> = e.seeds.as_ref().unwrap().bases.iter().map(|b| b.class_id).collect();
            assert!((0..4).all(|i| (i + 1..4).all(|j| classes[i] != classes[j])));
        }
    }

    #[test]
    fn over_capacity_is_config_error() {
        let w = small_world(SplitCounts {
            train: 10,
            val: 1_000_000,
            test: 10,
        });
        assert!(matches!(build_dataset(&w), Err(Error::Config(_))));
    }

    #[test]
    fn regenerated_samples_are_bit_identical_and_balanced() {
        let w = small_world(SplitCounts {
            train: 6,
            val: 2,
            test: 2,
        });
        let [tr, _, _] = build_dataset(&w).unwrap();
        let mut audible = 0;
        let mut total = 0;
        for e in &tr.entries {
            let s1 = w.load_sample(e).unwrap();
            let s2 = w.load_sample(e).unwrap();
            assert_eq!(s1, s2);
            for i in 0..s1.mixture.len() {
                assert_eq!(s1.mixture.samples[i], s1.sound1.samples[i] + s1.sound2.samples[i]);
            }
            for o in s1.video1_objects.iter().chain(&s1.video2_objects) {
                total += 1;
                audible += o.is_audible_gt.unwrap() as usize;
            }
        }
        assert_eq!(2 * audible, total);
    }

    #[test]
    fn manifest_file_roundtrip() {
        let w = small_world(SplitCounts {
            train: 5,
            val: 2,
            test: 2,
        });
        let [tr, _, _] = build_dataset(&w).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        tr.write(&p).unwrap();
        assert_eq!(Manifest::read(&p, Split::Train).unwrap(), tr);
    }

    #[test]
    fn paper_scale_counts() {
        let cfg = WorldConfig::paper_scale();
        assert_eq!(
            (cfg.samples.train, cfg.samples.val, cfg.samples.test),
            (18_720, 260, 260)
        );
        // Each base video acts as A in 40 compositions.
        assert_eq!(cfg.samples.train, cfg.base_sources.train * 40);
        let d = WorldConfig::default();
        assert_eq!((d.samples.train, d.samples.val, d.samples.test), (2000, 100, 100));
    }
}
