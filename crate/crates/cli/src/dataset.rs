use std::path::PathBuf;

use ccol_core::synthworld::{build_dataset, ingest_external, Split, SynthWorld, WorldConfig};
use ccol_core::{Error, Result};
use clap::Args;

use crate::context::{check_overwrite, ensure_dir, Context, Provenance};
use crate::GlobalArgs;

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Use the original split sizes (468/26/26 base videos, 18720/260/260 composites).
    #[arg(long)]
    paper_scale: bool,
    /// Ingest external videos from a JSON-lines mapping file instead of
    /// synthesizing.
    #[arg(long, value_name = "MAPPING")]
    ingest: Option<PathBuf>,
    /// Directory the mapping's audio paths are relative to.
    #[arg(long, requires = "ingest")]
    audio_dir: Option<PathBuf>,
    /// Directory the mapping's feature paths are relative to.
    #[arg(long, requires = "ingest")]
    feature_dir: Option<PathBuf>,
    /// Split the ingested videos form.
    #[arg(long, default_value = "test", value_parser = parse_split, requires = "ingest")]
    split: Split,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| format!("unknown split `{s}` (train, val or test)"))
}

pub fn run(g: &GlobalArgs, a: DatasetArgs) -> Result<()> {
    let mut extra = Vec::new();
    if a.paper_scale {
        let p = WorldConfig::paper_scale();
        for (key, v) in [
            ("base_sources.train", p.base_sources.train),
            ("base_sources.val", p.base_sources.val),
            ("base_sources.test", p.base_sources.test),
            ("samples.train", p.samples.train),
            ("samples.val", p.samples.val),
            ("samples.test", p.samples.test),
        ] {
            extra.push(format!("world.{key}={v}"));
        }
    }
    let ctx = Context::new(g, &extra)?;
    let dir = ctx.data_dir();
    ensure_dir(&dir)?;

    if let Some(mapping) = &a.ingest {
        let out = ctx.manifest_path(a.split);
        check_overwrite(&out, ctx.force)?;
        let here = PathBuf::from(".");
        let manifest = ingest_external(
            a.audio_dir.as_ref().unwrap_or(&here),
            a.feature_dir.as_ref().unwrap_or(&here),
            mapping,
            a.split,
            &ctx.config.stft,
            ctx.config.world.feature_dim,
        )?;
        if manifest.len() == 1 {
            return Err(Error::Config("an external manifest needs at least two videos to mix".into()));
        }
        manifest.write(&out)?;
        let mut prov = Provenance::new("dataset --ingest", &ctx.config);
        prov.input(mapping)?;
        prov.outputs.push(out.display().to_string());
        prov.write(&dir.join(format!("provenance.ingest-{}.json", a.split.name())))?;
        println!("{}: {} videos", out.display(), manifest.len());
        return Ok(());
    }

    let outs: Vec<PathBuf> = Split::ALL.iter().map(|s| ctx.manifest_path(*s)).collect();
    for o in &outs {
        check_overwrite(o, ctx.force)?;
    }
    let world = SynthWorld::new(ctx.config.world.clone(), ctx.config.stft.clone())?;
    let manifests = build_dataset(&world)?;
    let mut prov = Provenance::new("dataset", &ctx.config);
    for (m, o) in manifests.iter().zip(&outs) {
        m.write(o)?;
        prov.outputs.push(o.display().to_string());
        println!("{}: {} composites", o.display(), m.len());
    }
    prov.write(&dir.join("provenance.json"))
}
