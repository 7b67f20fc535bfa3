use std::path::PathBuf;

use ccol_core::evalsuite::{report, AvModel};
use ccol_core::synthworld::{load_feature_record, wav, AudioClip, ObjectCandidate};
use ccol_core::tfspace::{apply_mask, clip_to_grid, istft};
use ccol_core::trainer::checkpoint;
use ccol_core::{Error, Result};
use clap::Args;
use serde::Serialize;

use crate::context::{check_overwrite, ensure_dir, Context, Provenance};
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct SeparateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Mixture to separate. Any rate or channel count; it is downmixed and
    /// resampled to the checkpoint's rate.
    #[arg(long)]
    wav: PathBuf,
    /// One feature record (JSON array or little-endian f32 `.bin`) per object.
    #[arg(long, num_args = 1.., required = true)]
    features: Vec<PathBuf>,
    /// Also write an all-zero WAV for objects judged silent.
    #[arg(long)]
    emit_silent: bool,
}

#[derive(Serialize)]
struct Verdict {
    object_id: String,
    feature: String,
    /// Mean audible probability over the input's chunks.
    audible_prob: f64,
    audible: bool,
    output: Option<String>,
}

pub fn run(g: &GlobalArgs, a: SeparateArgs) -> Result<()> {
    let ctx = Context::new(g, &[])?;
    if !a.checkpoint.exists() {
        return Err(Error::Staging(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let ckpt = checkpoint::load(&a.checkpoint)?;
    let stft = ckpt.state.stft.clone();

    let raw = wav::read(&a.wav)?;
    let mut clip = raw.downmix();
    if raw.channels > 1 {
        eprintln!("note: downmixed {} channels to mono", raw.channels);
    }
    if clip.sample_rate != stft.sample_rate {
        eprintln!("note: resampling {} Hz to {} Hz", clip.sample_rate, stft.sample_rate);
        clip = wav::resample_linear(&clip, stft.sample_rate);
    }
    if clip.is_empty() {
        return Err(Error::input(format!("{} contains no samples", a.wav.display())));
    }

    let objects = a
        .features
        .iter()
        .map(|p| {
            let id = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok(ObjectCandidate {
                object_id: id,
                class_id: None,
                raw_feature: load_feature_record(p)?,
                is_audible_gt: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let want = ckpt.state.model.arch.feature_dim;
    if let Some((p, o)) = a.features.iter().zip(&objects).find(|(_, o)| o.raw_feature.len() != want) {
        return Err(Error::input(format!(
            "{} has {} values, the checkpoint expects {want}",
            p.display(),
            o.raw_feature.len()
        )));
    }

    // Fixed-length chunks, the last one zero-padded; outputs are stitched
    // and cut back to the input length.
    let chunk = stft.clip_len();
    let mut prob_sum = vec![0.0; objects.len()];
    let mut outs = vec![Vec::with_capacity(clip.len() + chunk); objects.len()];
    let n_chunks = clip.len().div_ceil(chunk);
    for c in 0..n_chunks {
        let mut samples = clip.samples[c * chunk..clip.len().min((c + 1) * chunk)].to_vec();
        samples.resize(chunk, 0.0);
        let piece = AudioClip {
            samples,
            sample_rate: stft.sample_rate,
        };
        let (spec, grid) = clip_to_grid(&piece, &stft)?;
        for (s, gs) in prob_sum.iter_mut().zip(ckpt.state.ground(&grid, &objects)?) {
            *s += gs.audible();
        }
        for (out, m) in outs.iter_mut().zip(ckpt.state.masks(&grid, &objects)?) {
            out.extend(istft(&apply_mask(&spec, &m, &stft)?, &stft)?.samples);
        }
    }

    let stem = a.wav.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned());
    let dir = ctx.out.join("separate").join(stem);
    ensure_dir(&dir)?;
    let mut prov = Provenance::new("separate", &ctx.config);
    prov.input(&a.checkpoint)?;
    prov.input(&a.wav)?;
    let mut verdicts = Vec::new();
    for ((o, path), (mut out, sum)) in objects.iter().zip(&a.features).zip(outs.into_iter().zip(prob_sum)) {
        let p = sum / n_chunks as f64;
        let audible = p >= 0.5;
        prov.input(path)?;
        out.truncate(clip.len());
        let output = if audible || a.emit_silent {
            if !audible {
                out.iter_mut().for_each(|v| *v = 0.0);
            }
            let file = dir.join(format!("{}.wav", o.object_id));
            check_overwrite(&file, ctx.force)?;
            let clip = AudioClip {
                samples: out,
                sample_rate: stft.sample_rate,
            };
            wav::write(&file, &clip, wav::WavFormat::Float32)?;
            prov.outputs.push(file.display().to_string());
            Some(file.display().to_string())
        } else {
            None
        };
        println!("{}: {} (p = {p:.3})", o.object_id, if audible { "audible" } else { "silent" });
        verdicts.push(Verdict {
            object_id: o.object_id.clone(),
            feature: path.display().to_string(),
            audible_prob: p,
            audible,
            output,
        });
    }
    let vpath = dir.join("verdicts.json");
    check_overwrite(&vpath, ctx.force)?;
    report::write_file(&vpath, &report::to_json(&verdicts)?)?;
    prov.outputs.push(vpath.display().to_string());
    let ppath = dir.join("provenance.json");
    check_overwrite(&ppath, ctx.force)?;
    prov.write(&ppath)
}
