use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::synthworld::{
    load_external_pair, CompositeSample, EntrySource, Manifest, ObjectCandidate, SynthWorld,
};
use crate::tfspace::{clip_to_grid, MagSpec, StftConfig};

/// Where composite samples come from.
#[derive(Clone, Debug)]
pub enum SampleLoader {
    Synthetic(SynthWorld),
    /// Ingested WAV + feature entries, paired into composites.
    External(StftConfig),
}

impl SampleLoader {
    pub fn stft(&self) -> &StftConfig {
        match self {
            SampleLoader::Synthetic(w) => &w.stft,
            SampleLoader::External(s) => s,
        }
    }
}

/// Network-side view of one composite: grid magnitudes and object lists.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub sample_id: String,
    pub objects: [Vec<ObjectCandidate>; 2],
    pub solo: [MagSpec; 2],
    pub mixture: MagSpec,
}

impl PreparedSample {
    pub fn new(sample: &CompositeSample, stft: &StftConfig) -> Result<Self> {
        let (_, s1) = clip_to_grid(&sample.sound1, stft)?;
        let (_, s2) = clip_to_grid(&sample.sound2, stft)?;
        let (_, m) = clip_to_grid(&sample.mixture, stft)?;
        Ok(PreparedSample {
            sample_id: sample.sample_id.clone(),
            objects: [sample.video1_objects.clone(), sample.video2_objects.clone()],
            solo: [s1, s2],
            mixture: m,
        })
    }

    pub fn has_labels(&self) -> bool {
        self.objects.iter().flatten().all(|o| o.is_audible_gt.is_some())
    }

    fn bytes(&self) -> usize {
        3 * self.mixture.values.len() * 8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Item {
    Entry(usize),
    /// External videos `(i, j)` mixed together.
    Pair(usize, usize),
}

/// A manifest bound to its loader, with an optional in-memory cache of
/// prepared samples.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub loader: SampleLoader,
    items: Vec<Item>,
    cache: Option<Vec<PreparedSample>>,
}

impl Dataset {
    /// Synthetic entries map one-to-one onto composites. External entries are
    /// single videos; entry `i` is mixed with entry `(i + 1) mod n`.
    pub fn new(manifest: Manifest, loader: SampleLoader) -> Result<Self> {
        let n = manifest.len();
        let external = manifest
            .entries
            .iter()
            .map(|e| e.source().map(|s| matches!(s, EntrySource::External(_))))
            .collect::<Result<Vec<_>>>()?;
        let items = if external.iter().all(|x| !x) {
            if n > 0 && !matches!(loader, SampleLoader::Synthetic(_)) {
                return Err(Error::config("synthetic manifest needs a synthetic world to load from"));
            }
            (0..n).map(Item::Entry).collect()
        } else if external.iter().all(|x| *x) {
            if n == 1 {
                return Err(Error::config("an external manifest needs at least two videos to mix"));
            }
            (0..n).map(|i| Item::Pair(i, (i + 1) % n)).collect()
        } else {
            return Err(Error::config("manifest mixes synthetic and external entries"));
        };
        Ok(Dataset {
            manifest,
            loader,
            items,
            cache: None,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn stft(&self) -> &StftConfig {
        self.loader.stft()
    }

    pub fn load(&self, i: usize) -> Result<CompositeSample> {
        let entries = &self.manifest.entries;
        match (self.items[i], &self.loader) {
            (Item::Entry(e), SampleLoader::Synthetic(w)) => w.load_sample(&entries[e]),
            (Item::Pair(a, b), loader) => load_external_pair(&entries[a], &entries[b], loader.stft()),
            (Item::Entry(_), SampleLoader::External(_)) => unreachable!("checked in Dataset::new"),
        }
    }

    pub fn prepared(&self, i: usize) -> Result<Cow<'_, PreparedSample>> {
        match &self.cache {
            Some(c) => Ok(Cow::Borrowed(&c[i])),
            None => Ok(Cow::Owned(PreparedSample::new(&self.load(i)?, self.stft())?)),
        }
    }

    /// Prepares every sample up front if the cache fits in `limit_bytes`.
    /// Returns whether the cache was built.
    pub fn cache_prepared(&mut self, limit_bytes: usize) -> Result<bool> {
        if self.cache.is_some() {
            return Ok(true);
        }
        if self.is_empty() {
            self.cache = Some(Vec::new());
            return Ok(true);
        }
        let first = PreparedSample::new(&self.load(0)?, self.stft())?;
        if first.bytes().saturating_mul(self.len()) > limit_bytes {
            return Ok(false);
        }
        let mut cache = Vec::with_capacity(self.len());
        cache.push(first);
        for i in 1..self.len() {
            cache.push(PreparedSample::new(&self.load(i)?, self.stft())?);
        }
        self.cache = Some(cache);
        Ok(true)
    }

    /// Whether every object of every composite carries an audibility label.
    pub fn has_labels(&self) -> bool {
        self.manifest.entries.iter().all(|e| match e.source() {
            Ok(EntrySource::Synthetic(_)) => true,
            Ok(EntrySource::External(v)) => v.audible.is_some(),
            Err(_) => false,
        })
    }
}
