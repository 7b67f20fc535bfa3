use std::path::{Path, PathBuf};

use ccol_core::colearn::LossBreakdown;
use ccol_core::config::RunConfig;
use ccol_core::nets::ModelState;
use ccol_core::synthworld::Split;
use ccol_core::trainer::{
    checkpoint, run_stage, Checkpoint, Dataset, LogRecord, RunLog, Stage, StageEvent, TrainMode,
};
use ccol_core::{Error, Result};
use clap::Args;

use crate::context::{ensure_dir, Context, Provenance};
use crate::{plot, GlobalArgs};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// grounding_only, random_obj, col, oracle or ccol (default: train.mode).
    #[arg(long)]
    mode: Option<TrainMode>,
    /// Curriculum stage 1, 2 or 3 (default: train.stage).
    #[arg(long)]
    stage: Option<u8>,
    /// Checkpoint to start from instead of the previous stage's output of
    /// the same mode, e.g. a shared stage-1 checkpoint.
    #[arg(long)]
    init: Option<PathBuf>,
}

pub fn stage_file(run_dir: &Path, stage: Stage, suffix: &str) -> PathBuf {
    run_dir.join(format!("stage{}{suffix}", stage.number()))
}

fn load_split(ctx: &Context, split: Split) -> Result<Option<Dataset>> {
    let path = ctx.manifest_path(split);
    if !path.exists() {
        return Ok(None);
    }
    let mut d = ctx.dataset(&path, split)?;
    d.cache_prepared(ctx.config.train.cache_limit_mb.saturating_mul(1 << 20))?;
    Ok(Some(d))
}

fn initial_state(cfg: &RunConfig, run_dir: &Path, init: Option<&Path>) -> Result<(ModelState, bool)> {
    let t = &cfg.train;
    let partial = stage_file(run_dir, t.stage, ".partial.ckpt");
    if partial.exists() {
        let sidecar = stage_file(run_dir, t.stage, ".provenance.json");
        let prov: Provenance = serde_json::from_slice(&std::fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?)?;
        if prov.config_hash != cfg.hash() {
            return Err(Error::Config(format!(
                "{} belongs to a run with a different configuration; pass --force to restart the stage",
                partial.display()
            )));
        }
        let state = checkpoint::load_expecting(&partial, &cfg.arch, &cfg.stft)?.state;
        return Ok((state, true));
    }
    if t.stage == t.mode.stages()[0] && init.is_none() {
        return Ok((ModelState::fresh(cfg.arch.clone(), cfg.stft.clone(), t.seed)?, false));
    }
    let prev = match init {
        Some(p) => p.to_path_buf(),
        None => {
            let n = Stage::try_from(t.stage.number() - 1).map_err(Error::Config)?;
            stage_file(run_dir, n, ".ckpt")
        }
    };
    if !prev.exists() {
        return Err(Error::Staging(format!(
            "stage {} of mode {} needs the checkpoint {}, which does not exist",
            t.stage,
            t.mode,
            prev.display()
        )));
    }
    Ok((checkpoint::load_expecting(&prev, &cfg.arch, &cfg.stft)?.state, false))
}

fn loss_series(records: &[LogRecord]) -> Vec<Vec<(f64, f64)>> {
    let fields: [fn(&LossBreakdown) -> Option<f64>; 8] = [
        |b| b.l_col.or(b.l_ccol),
        |b| b.l_grd_s,
        |b| b.l_grd_s_star,
        |b| b.l_sep,
        |b| b.l_sep_star,
        |b| b.l_grd_m,
        |b| b.l_grd_m_star_hat,
        |_| None,
    ];
    fields
        .iter()
        .map(|f| {
            records
                .iter()
                .filter_map(|r| match r {
                    LogRecord::Step { step, losses, .. } => f(losses).map(|v| (*step as f64, v)),
                    _ => None,
                })
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn run(g: &GlobalArgs, a: TrainArgs) -> Result<()> {
    let mut extra = Vec::new();
    if let Some(m) = a.mode {
        extra.push(format!("train.mode={}", m.name()));
    }
    if let Some(s) = a.stage {
        extra.push(format!("train.stage={s}"));
    }
    let ctx = Context::new(g, &extra)?;
    let cfg = ctx.config.clone();
    let t = &cfg.train;

    let train = load_split(&ctx, Split::Train)?.ok_or_else(|| {
        Error::Staging(format!(
            "training needs {}; run `ccol dataset` first",
            ctx.manifest_path(Split::Train).display()
        ))
    })?;
    let val = if t.validate { load_split(&ctx, Split::Val)? } else { None };

    let run_dir = ctx.out.join("runs").join(t.mode.name());
    ensure_dir(&run_dir)?;
    let best_path = stage_file(&run_dir, t.stage, ".ckpt");
    let last_path = stage_file(&run_dir, t.stage, ".last.ckpt");
    let partial_path = stage_file(&run_dir, t.stage, ".partial.ckpt");
    let log_path = stage_file(&run_dir, t.stage, ".jsonl");
    let plot_path = stage_file(&run_dir, t.stage, "_loss.png");
    let prov_path = stage_file(&run_dir, t.stage, ".provenance.json");
    if best_path.exists() && !ctx.force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to retrain the stage",
            best_path.display()
        )));
    }
    if ctx.force {
        for p in [&partial_path, &log_path] {
            if p.exists() {
                std::fs::remove_file(p).map_err(|e| Error::io(p, e))?;
            }
        }
    }

    let (state, resumed) = initial_state(&cfg, &run_dir, a.init.as_deref())?;
    let mut prov = Provenance::new("train", &cfg);
    prov.input(&ctx.manifest_path(Split::Train))?;
    if let Some(p) = a.init.as_deref() {
        prov.input(p)?;
    } else if !resumed && t.stage != t.mode.stages()[0] {
        prov.input(&stage_file(&run_dir, Stage::try_from(t.stage.number() - 1).map_err(Error::Config)?, ".ckpt"))?;
    }
    prov.outputs = [&best_path, &last_path, &log_path, &plot_path]
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    prov.write(&prov_path)?;
    if resumed {
        eprintln!("resuming stage {} at epoch {} from {}", t.stage, state.epoch, partial_path.display());
    }

    let mut log = RunLog::append_to(&log_path)?;
    let mode = Some(t.mode);
    let out = run_stage(t, &cfg.eval, state, &train, val.as_ref(), &cfg.hash(), &mut log, &mut |e| {
        if let StageEvent::Epoch(s) = e {
            checkpoint::save(&partial_path, &Checkpoint { state: s.clone(), mode })?;
            eprintln!("stage {} epoch {}/{} done", t.stage, s.epoch, t.epochs_per_stage);
        }
        Ok(())
    })?;
    checkpoint::save(&best_path, &Checkpoint { state: out.best, mode })?;
    checkpoint::save(&last_path, &Checkpoint { state: out.last, mode })?;
    if partial_path.exists() {
        std::fs::remove_file(&partial_path).map_err(|e| Error::io(&partial_path, e))?;
    }
    plot::lines(&plot_path, &loss_series(&RunLog::read(&log_path)?))?;
    match (out.best_epoch, out.best_metric) {
        (Some(e), Some(m)) => println!("{}: best epoch {e}, validation metric {m:.4}", best_path.display()),
        _ => println!("{}: final state (no validation)", best_path.display()),
    }
    Ok(())
}
