//! Dataset → staged training with checkpoints → evaluation reports, end to end
//! on a tiny world.

mod common;

use ccol_core::evalsuite::{self, report, EvalConfig, Gating, Protocol, SeparationOptions};
use ccol_core::nets::ModelState;
use ccol_core::trainer::{checkpoint, run_stage, Checkpoint, LogRecord, RunLog, Stage, StageEvent, TrainConfig, TrainMode};

fn cfg(mode: TrainMode, stage: Stage) -> TrainConfig {
    TrainConfig {
        mode,
        stage,
        batch_size: 3,
        epochs_per_stage: 2,
        lr_milestones: vec![1],
        base_lr: 1e-3,
        val_limit: Some(2),
        ..TrainConfig::default()
    }
}

#[test]
fn ccol_curriculum_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let w = common::world(6, 2, 3, 1);
    let [mut train, val, test] = common::datasets(&w);
    assert!(train.cache_prepared(1 << 26).unwrap());
    let eval = EvalConfig { filter_len: 8, ..EvalConfig::default() };
    let log_path = dir.path().join("run.jsonl");

    let mut state = ModelState::fresh(common::arch(), common::stft(), 1).unwrap();
    let mut bests = 0;
    for stage in TrainMode::Ccol.stages() {
        let c = cfg(TrainMode::Ccol, *stage);
        let mut log = RunLog::append_to(&log_path).unwrap();
        let out = run_stage(&c, &eval, state, &train, Some(&val), "hash", &mut log, &mut |e| {
            if matches!(e, StageEvent::Best(_)) {
                bests += 1;
            }
            Ok(())
        })
        .unwrap();
        assert!(out.best_epoch.is_some());
        assert!(out.best.stage_complete);
        let path = dir.path().join(format!("stage{}.ckpt", stage.number()));
        checkpoint::save(&path, &Checkpoint { state: out.best.clone(), mode: Some(TrainMode::Ccol) }).unwrap();
        state = checkpoint::load_expecting(&path, &common::arch(), &common::stft()).unwrap().state;
        assert_eq!(checkpoint::checksum(&Checkpoint { state: state.clone(), mode: Some(TrainMode::Ccol) }).unwrap(), checkpoint::checksum(&Checkpoint { state: out.best, mode: Some(TrainMode::Ccol) }).unwrap());
    }
    assert!(bests >= 3);
    assert_eq!(state.stage, 3);

    let records = RunLog::read(&log_path).unwrap();
    assert_eq!(records.iter().filter(|r| matches!(r, LogRecord::Start { .. })).count(), 3);
    // Steps count up without gaps inside each stage.
    let mut prev = 0;
    for r in &records {
        match r {
            LogRecord::Start { .. } => prev = 0,
            LogRecord::Step { step, .. } => {
                assert_eq!(*step, prev + 1);
                prev = *step;
            }
            _ => {}
        }
    }

    let single = evalsuite::grounding_accuracy(&state, &test, Protocol::SingleSound, None).unwrap();
    let mixed = evalsuite::grounding_accuracy(&state, &test, Protocol::MixedSound, None).unwrap();
    assert_eq!(single.total, 4 * test.len() as u64);
    assert_eq!(mixed.accuracy, mixed.accuracy_from_counts());
    let sep = evalsuite::separation_report(&state, &test, &eval, Gating::Learned, &SeparationOptions::default()).unwrap();
    assert_eq!(sep.rows.len(), 2 * test.len());
    assert!(sep.rows.iter().all(|r| !r.sdr.is_nan() && r.sir >= r.sdr - 1e-9));
    assert_eq!(sep.silent_energies.len(), 2 * test.len());
    let recomputed = sep.rows.iter().map(|r| r.sdr).sum::<f64>() / sep.rows.len() as f64;
    assert!((sep.mean.sdr.unwrap() - recomputed).abs() < 1e-9 || recomputed.is_infinite());

    let csv = report::summary_csv(&[single, mixed], Some(&sep));
    assert!(csv.starts_with("section,row,value\n"));
    assert!(csv.contains("grounding_accuracy,mixed,"));
    let json = report::to_json(&sep).unwrap();
    let back: evalsuite::SeparationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back.rows.len(), sep.rows.len());
}

#[test]
fn every_mode_trains_its_stages() {
    let w = common::world(4, 2, 2, 1);
    let [train, val, _] = common::datasets(&w);
    let eval = EvalConfig { filter_len: 8, ..EvalConfig::default() };
    for mode in TrainMode::ALL {
        let mut state = ModelState::fresh(common::arch(), common::stft(), 2).unwrap();
        for stage in mode.stages() {
            let mut log = RunLog::in_memory();
            let out = run_stage(&cfg(mode, *stage), &eval, state, &train, Some(&val), "h", &mut log, &mut |_| Ok(()))
                .unwrap_or_else(|e| panic!("{mode} stage {stage}: {e}"));
            state = out.best;
        }
        assert_eq!(state.stage, mode.stages().last().unwrap().number());
    }
}
