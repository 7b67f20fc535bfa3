use std::path::PathBuf;

use ccol_core::evalsuite::{self, report, Gating, Protocol, SeparationOptions};
use ccol_core::synthworld::Split;
use ccol_core::trainer::{checkpoint, TrainMode};
use ccol_core::{Error, Result};
use clap::{Args, ValueEnum};

use crate::context::{check_overwrite, ensure_dir, Context, Provenance};
use crate::train::stage_file;
use crate::{plot, GlobalArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Grounding,
    Separation,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GatingArg {
    Ungated,
    Learned,
    Oracle,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate (default: the final stage of --mode).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Mode whose final checkpoint to evaluate when --checkpoint is absent.
    #[arg(long)]
    mode: Option<TrainMode>,
    /// Manifest to evaluate on (default: the test split).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "grounding,separation")]
    protocols: Vec<ProtocolArg>,
    /// Gate override for silent-object scoring (default: the checkpoint mode's gating).
    #[arg(long)]
    gating: Option<GatingArg>,
    /// Evaluate only the first N composites.
    #[arg(long)]
    limit: Option<usize>,
    /// Output subdirectory under `eval/` (default: the mode name).
    #[arg(long)]
    name: Option<String>,
}

pub fn run(g: &GlobalArgs, a: EvalArgs) -> Result<()> {
    let ctx = Context::new(g, &[])?;
    let mode = a.mode.unwrap_or(ctx.config.train.mode);
    let ckpt_path = match &a.checkpoint {
        Some(p) => p.clone(),
        None => {
            let last = *mode.stages().last().expect("every mode has a stage");
            stage_file(&ctx.out.join("runs").join(mode.name()), last, ".ckpt")
        }
    };
    if !ckpt_path.exists() {
        return Err(Error::Staging(format!("checkpoint {} does not exist", ckpt_path.display())));
    }
    let ckpt = checkpoint::load(&ckpt_path)?;
    let manifest = a.manifest.clone().unwrap_or_else(|| ctx.manifest_path(Split::Test));
    let data = ctx.dataset(&manifest, Split::Test)?;
    if ckpt.state.stft != *data.stft() {
        return Err(Error::Evaluation(format!(
            "{} was trained with different STFT settings than {}",
            ckpt_path.display(),
            manifest.display()
        )));
    }
    let gating = match a.gating {
        Some(GatingArg::Ungated) => Gating::Ungated,
        Some(GatingArg::Learned) => Gating::Learned,
        Some(GatingArg::Oracle) => Gating::Oracle,
        None => ckpt.mode.map_or(Gating::Learned, |m| m.gating()),
    };

    let name = a.name.clone().unwrap_or_else(|| ckpt.mode.unwrap_or(mode).name().to_string());
    let dir = ctx.out.join("eval").join(name);
    let grounding_on = a.protocols.contains(&ProtocolArg::Grounding);
    let separation_on = a.protocols.contains(&ProtocolArg::Separation);
    let mut planned = vec!["provenance.json"];
    if grounding_on {
        planned.extend(["grounding.json", "grounding.csv"]);
    }
    if separation_on {
        planned.extend(["separation.json", "separation.csv"]);
    }
    if grounding_on && separation_on {
        planned.extend(["summary.csv", "metrics.png"]);
    }
    // Refuse before spending time on the evaluation.
    for f in &planned {
        check_overwrite(&dir.join(f), ctx.force)?;
    }
    ensure_dir(&dir)?;
    let mut prov = Provenance::new("eval", &ctx.config);
    prov.input(&ckpt_path)?;
    prov.input(&manifest)?;
    let write = |file: &str, contents: String, prov: &mut Provenance| -> Result<()> {
        let p = dir.join(file);
        report::write_file(&p, &contents)?;
        prov.outputs.push(p.display().to_string());
        Ok(())
    };

    let mut grounding = Vec::new();
    if grounding_on {
        for p in [Protocol::SingleSound, Protocol::MixedSound] {
            let r = evalsuite::grounding_accuracy(&ckpt.state, &data, p, a.limit)?;
            println!("grounding {}: accuracy {}", p.name(), report::fmt_score(r.accuracy));
            grounding.push(r);
        }
        write("grounding.json", report::to_json(&grounding)?, &mut prov)?;
        write("grounding.csv", report::grounding_csv(&grounding), &mut prov)?;
    }
    let mut separation = None;
    if separation_on {
        let opts = SeparationOptions {
            limit: a.limit,
            ..SeparationOptions::default()
        };
        let r = evalsuite::separation_report(&ckpt.state, &data, &ctx.config.eval, gating, &opts)?;
        println!(
            "separation: SDR {} SIR {} (silent success rate {})",
            r.mean.sdr.map_or("-".into(), report::fmt_score),
            r.mean.sir.map_or("-".into(), report::fmt_score),
            r.silent_success_rate.map_or("-".into(), report::fmt_score),
        );
        write("separation.json", report::to_json(&r)?, &mut prov)?;
        write("separation.csv", report::separation_csv(&r), &mut prov)?;
        separation = Some(r);
    }
    if !grounding.is_empty() && separation.is_some() {
        write("summary.csv", report::summary_csv(&grounding, separation.as_ref()), &mut prov)?;
        let s = separation.as_ref().expect("checked");
        let bars: Vec<f64> = grounding
            .iter()
            .map(|r| 100.0 * r.accuracy)
            .chain([s.mean.sdr, s.mean.sir, s.silent_mean.sdr].into_iter().map(|v| v.unwrap_or(f64::NAN)))
            .collect();
        let png = dir.join("metrics.png");
        plot::bars(&png, &bars)?;
        prov.outputs.push(png.display().to_string());
    }
    prov.write(&dir.join("provenance.json"))
}
