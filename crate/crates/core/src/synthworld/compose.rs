use rand::Rng;

use super::{AudioClip, CompositeSample, CompositionMode, ObjectCandidate};
use crate::error::{Error, Result};
use crate::seed;

/// A single-source base video: its sound and its object candidates. The first
/// object is the sound's maker; any further objects are silent distractors.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseVideo {
    pub base_id: u64,
    pub sound: AudioClip,
    pub objects: Vec<ObjectCandidate>,
}

/// Builds `V1 = A + B` and `V2 = C + D`.
///
/// In solo mode only A and C sound. In duet mode B and D each contribute
/// their audio with probability `duet_prob` (drawn from `seed`).
pub fn compose_sample(
    sample_id: &str,
    [a, b, c, d]: [&BaseVideo; 4],
    mode: CompositionMode,
    duet_prob: f64,
    seed: u64,
) -> Result<CompositeSample> {
    let len = a.sound.len();
    for v in [b, c, d] {
        if v.sound.len() != len {
            return Err(Error::input(format!(
                "base video {} has {} samples, expected {len}",
                v.base_id,
                v.sound.len()
            )));
        }
    }
    let mut rng = seed::rng(seed, "duet", &[]);
    let mut second_sounds = |v: &BaseVideo| -> bool {
        let draw = match mode {
            CompositionMode::Solo => false,
            CompositionMode::Duet => rng.random_bool(duet_prob),
        };
        draw && v.sound.energy() > 0.0
    };
    let b_on = second_sounds(b);
    let d_on = second_sounds(d);

    let (objects1, sound1, sources1) = video(a, b, b_on)?;
    let (objects2, sound2, sources2) = video(c, d, d_on)?;
    let mixture = sound1.try_add(&sound2)?;
    Ok(CompositeSample {
        sample_id: sample_id.to_string(),
        video1_objects: objects1,
        video2_objects: objects2,
        sound1,
        sound2,
        mixture,
        mode,
        audible_sources: [sources1, sources2],
    })
}

type Video = (Vec<ObjectCandidate>, AudioClip, Vec<(usize, AudioClip)>);

fn video(lead: &BaseVideo, second: &BaseVideo, second_on: bool) -> Result<Video> {
    let mut objects = Vec::with_capacity(lead.objects.len() + second.objects.len());
    let mut sources = Vec::new();
    let lead_on = lead.sound.energy() > 0.0;
    for (i, o) in lead.objects.iter().enumerate() {
        let audible = i == 0 && lead_on;
        objects.push(ObjectCandidate {
            is_audible_gt: Some(audible),
            ..o.clone()
        });
    }
    if lead_on {
        sources.push((0, lead.sound.clone()));
    }
    let offset = objects.len();
    for (i, o) in second.objects.iter().enumerate() {
        let audible = i == 0 && second_on;
        objects.push(ObjectCandidate {
            is_audible_gt: Some(audible),
            ..o.clone()
        });
    }
    let sound = if second_on {
        sources.push((offset, second.sound.clone()));
        lead.sound.try_add(&second.sound)?
    } else {
        lead.sound.clone()
    };
    Ok((objects, sound, sources))
}
