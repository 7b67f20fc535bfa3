use std::path::{Path, PathBuf};
use std::io::{BufRead, BufReader};
use std::process::{Command, Output, Stdio};

use ccol_core::config::{Preset, RunConfig};
use ccol_core::nets::ModelState;
use ccol_core::synthworld::{wav, AudioClip};
use ccol_core::trainer::{checkpoint, Checkpoint};

const TINY: &str = r#"
preset = "bench"

[stft]
window_length = 62
hop_length = 16
frames = 16
net_freq = 16
net_time = 16

[world]
feature_dim = 4
base_sources = { train = 22, val = 11, test = 11 }
samples = { train = 8, val = 4, test = 4 }

[arch]
feature_dim = 4
audio_widths = [3]
object_hidden = 4
ground_hidden = [4, 3]
unet_base = 2
unet_max_width = 4
unet_levels = 1
sep_channels = 3

[train]
batch_size = 4
epochs_per_stage = 1
lr_milestones = []

[eval]
filter_len = 8
"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Sandbox { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self) -> RunConfig {
        RunConfig::resolve(Preset::Desk, Some(&self.path("tiny.toml")), &[]).unwrap()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ccol"))
            .current_dir(self.dir.path())
            .args(["--config", "tiny.toml", "--out", "out"])
            .args(args)
            .env_remove("CCOL_OUT")
            .env_remove("CCOL_WORKERS")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let o = self.run(args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}\n{}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        );
        String::from_utf8(o.stdout).unwrap()
    }

    fn fails(&self, args: &[&str], code: i32) -> String {
        let o = self.run(args);
        let err = String::from_utf8(o.stderr).unwrap();
        assert_eq!(o.status.code(), Some(code), "{args:?}: {err}");
        err
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap()
    }
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn dataset_writes_counts_and_refuses_reruns() {
    let s = Sandbox::new();
    let out = s.ok(&["dataset"]);
    assert!(out.contains("train.jsonl: 8 composites"), "{out}");
    for (split, n) in [("train", 8), ("val", 4), ("test", 4)] {
        assert_eq!(lines(&s.path(&format!("out/data/{split}.jsonl"))), n);
    }
    let before = s.read("out/data/train.jsonl");
    let err = s.fails(&["dataset"], 2);
    assert!(err.contains("--force"), "{err}");
    s.ok(&["dataset", "--force"]);
    assert_eq!(s.read("out/data/train.jsonl"), before, "regeneration is deterministic");
}

#[test]
fn paper_scale_split_sizes() {
    let s = Sandbox::new();
    s.ok(&["dataset", "--paper-scale"]);
    for (split, n) in [("train", 18_720), ("val", 260), ("test", 260)] {
        assert_eq!(lines(&s.path(&format!("out/data/{split}.jsonl"))), n, "{split}");
    }
}

#[test]
fn staged_training_and_evaluation() {
    let s = Sandbox::new();
    s.ok(&["dataset"]);
    let err = s.fails(&["train", "--mode", "ccol", "--stage", "3"], 3);
    assert!(err.contains("stage2.ckpt"), "{err}");

    for stage in ["1", "2", "3"] {
        s.ok(&["train", "--mode", "ccol", "--stage", stage]);
    }
    s.fails(&["train", "--mode", "ccol", "--stage", "3"], 2);
    for f in ["stage3.ckpt", "stage3.last.ckpt", "stage3.jsonl", "stage3_loss.png", "stage3.provenance.json"] {
        assert!(s.path(&format!("out/runs/ccol/{f}")).exists(), "{f}");
    }
    assert!(!s.path("out/runs/ccol/stage3.partial.ckpt").exists());

    let log = s.read("out/runs/ccol/stage3.jsonl");
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    for key in [
        "l_grd_s",
        "l_sep",
        "l_sep_star",
        "l_grd_m",
        "l_grd_s_star",
        "l_grd_m_star_hat",
        "l_col",
        "l_ccol",
    ] {
        assert!(last.get(key).is_some(), "final log record lacks {key}: {last}");
    }
    assert!(last["l_ccol"].is_f64() && last["l_sep"].is_null(), "{last}");

    s.ok(&["eval", "--mode", "ccol", "--protocols", "grounding", "--name", "g"]);
    let mut files: Vec<String> = std::fs::read_dir(s.path("out/eval/g"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["grounding.csv", "grounding.json", "provenance.json"]);

    s.ok(&["eval", "--mode", "ccol", "--name", "a"]);
    s.ok(&["eval", "--mode", "ccol", "--name", "b"]);
    for f in ["summary.csv", "separation.csv", "grounding.csv", "separation.json"] {
        assert_eq!(s.read(&format!("out/eval/a/{f}")), s.read(&format!("out/eval/b/{f}")), "{f}");
    }
    let summary = s.read("out/eval/a/summary.csv");
    let rows: Vec<&str> = summary.lines().map(|l| l.rsplitn(2, ',').nth(1).unwrap()).collect();
    assert_eq!(
        rows,
        [
            "section,row",
            "grounding_accuracy,single",
            "grounding_accuracy,mixed",
            "separation,SDR",
            "separation,SIR",
            "separation_per_sample,SDR",
            "separation_per_sample,SIR",
            "separation_ground_truth,SDR",
            "separation_ground_truth,SIR",
            "silent,SDR",
            "silent,SIR",
            "silent_ground_truth,SDR",
            "silent_ground_truth,SIR",
            "silent,success_rate",
        ]
    );
    assert!(s.path("out/eval/a/metrics.png").exists());
    s.fails(&["eval", "--mode", "ccol", "--name", "a"], 2);
}

#[test]
fn resumes_from_a_partial_checkpoint() {
    let set = ["--set", "train.epochs_per_stage=3", "--set", "world.samples.train=64"];
    let train = [&set[..], &["train", "--mode", "grounding_only"]].concat();
    let full = Sandbox::new();
    let dataset = [&set[..], &["dataset"]].concat();
    full.ok(&dataset);
    full.ok(&train);

    // Kill a second run as soon as its first epoch is checkpointed.
    let cut = Sandbox::new();
    cut.ok(&dataset);
    let mut child = Command::new(env!("CARGO_BIN_EXE_ccol"))
        .current_dir(cut.dir.path())
        .args(["--config", "tiny.toml", "--out", "out"])
        .args(&train)
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    while err.read_line(&mut line).unwrap() > 0 && !line.contains("epoch 1/3 done") {
        line.clear();
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(cut.path("out/runs/grounding_only/stage1.partial.ckpt").exists());
    assert!(!cut.path("out/runs/grounding_only/stage1.ckpt").exists(), "run finished before it was killed");

    let o = cut.run(&train);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("at epoch 1 from"));
    for f in ["stage1.last.ckpt", "stage1.ckpt"] {
        let p = format!("out/runs/grounding_only/{f}");
        let a = checkpoint::checksum(&checkpoint::load(&full.path(&p)).unwrap()).unwrap();
        let b = checkpoint::checksum(&checkpoint::load(&cut.path(&p)).unwrap()).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn oracle_needs_labels() {
    let s = Sandbox::new();
    let cfg = s.config();
    std::fs::create_dir_all(s.path("ext")).unwrap();
    let mut mapping = String::new();
    for v in 0..2 {
        let clip = AudioClip {
            samples: (0..cfg.stft.clip_len()).map(|i| ((i * (v + 3)) as f64 * 0.1).sin() * 0.3).collect(),
            sample_rate: cfg.stft.sample_rate,
        };
        wav::write(&s.path(&format!("ext/v{v}.wav")), &clip, wav::WavFormat::Pcm16).unwrap();
        std::fs::write(s.path(&format!("ext/v{v}.json")), format!("[{v}, 0.5, -0.5, 1]")).unwrap();
        mapping.push_str(&format!(
            "{{\"entry_id\": \"v{v}\", \"audio\": \"v{v}.wav\", \"features\": [\"v{v}.json\"]}}\n"
        ));
    }
    std::fs::write(s.path("map.jsonl"), mapping).unwrap();
    let args = ["dataset", "--ingest", "map.jsonl", "--audio-dir", "ext", "--feature-dir", "ext", "--split", "train"];
    s.ok(&args);
    assert_eq!(lines(&s.path("out/data/train.jsonl")), 2);

    let mut state = ModelState::fresh(cfg.arch.clone(), cfg.stft.clone(), 1).unwrap();
    (state.stage, state.stage_complete) = (1, true);
    let ckpt = Checkpoint { state, mode: None };
    checkpoint::save(&s.path("init.ckpt"), &ckpt).unwrap();
    let err = s.fails(&["train", "--mode", "oracle", "--stage", "2", "--init", "init.ckpt"], 2);
    assert!(err.contains("label"), "{err}");
    // Learned modes train on the same unlabeled data.
    s.ok(&["train", "--mode", "col", "--stage", "2", "--init", "init.ckpt"]);

    std::fs::write(s.path("bad.jsonl"), "{\"entry_id\": \"x\", \"audio\": \"nope.wav\", \"features\": [\"v0.json\"]}\n").unwrap();
    let err = s.fails(&["dataset", "--ingest", "bad.jsonl", "--feature-dir", "ext", "--force"], 5);
    assert!(err.contains("nope.wav"), "{err}");
}

/// A model whose grounding verdict is the sign of the first feature value.
fn sign_checkpoint(cfg: &RunConfig) -> Checkpoint {
    let mut state = ModelState::fresh(cfg.arch.clone(), cfg.stft.clone(), 3).unwrap();
    let p = &mut state.model.params;
    let e = cfg.arch.embed_dim();
    for id in 0..p.len() {
        let name = p.name(id).to_string();
        if name.starts_with("object.") || name.starts_with("ground.") {
            p.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut set = |name: &str, idx: usize, v: f64| {
        let id = p.find(name).unwrap();
        p.tensor_mut(id).data_mut()[idx] = v;
    };
    set("object.fc0.w", 0, 1.0);
    set("object.fc1.w", 0, 1.0);
    set("ground.fc0.w", e, 1.0);
    set("ground.fc1.w", 0, 1.0);
    set("ground.fc2.w", 0, 20.0);
    set("ground.fc2.w", cfg.arch.ground_hidden[1], -20.0);
    set("ground.fc2.b", 0, -1.0);
    set("ground.fc2.b", 1, 1.0);
    Checkpoint {
        state,
        mode: Some("ccol".parse().unwrap()),
    }
}

#[test]
fn separate_writes_audible_objects_only() {
    let s = Sandbox::new();
    let cfg = s.config();
    checkpoint::save(&s.path("sign.ckpt"), &sign_checkpoint(&cfg)).unwrap();
    std::fs::write(s.path("drum.json"), "[1, 0, 0, 0]").unwrap();
    std::fs::write(s.path("lamp.json"), "[-1, 0, 0, 0]").unwrap();
    // Two and a half clips at twice the model rate.
    let len = 5 * cfg.stft.clip_len();
    let clip = AudioClip {
        samples: (0..len).map(|i| (i as f64 * 0.07).sin() * 0.5).collect(),
        sample_rate: 2 * cfg.stft.sample_rate,
    };
    wav::write(&s.path("mix.wav"), &clip, wav::WavFormat::Float32).unwrap();

    let args = ["separate", "--checkpoint", "sign.ckpt", "--wav", "mix.wav", "--features", "drum.json", "lamp.json"];
    let o = s.run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("resampling"));
    let dir = s.path("out/separate/mix");
    assert!(dir.join("drum.wav").exists() && !dir.join("lamp.wav").exists());
    let v: serde_json::Value = serde_json::from_str(&s.read("out/separate/mix/verdicts.json")).unwrap();
    let v = v.as_array().unwrap();
    assert_eq!(v.len(), 2);
    assert_eq!((v[0]["audible"].as_bool(), v[1]["audible"].as_bool()), (Some(true), Some(false)));
    let out = wav::read(&dir.join("drum.wav")).unwrap();
    assert_eq!(out.sample_rate, cfg.stft.sample_rate);
    assert_eq!(out.samples.len(), len / 2, "output matches the resampled input length");
    assert!(out.samples.iter().any(|x| *x != 0.0));

    s.fails(&args, 2);
    let mut forced = args.to_vec();
    forced.extend(["--emit-silent", "--force"]);
    s.ok(&forced);
    let silent = wav::read(&dir.join("lamp.wav")).unwrap();
    assert_eq!(silent.samples.len(), len / 2);
    assert!(silent.samples.iter().all(|x| *x == 0.0));
}

#[test]
fn exit_codes() {
    let s = Sandbox::new();
    s.fails(&["--set", "train.nope=1", "dataset"], 2);
    s.fails(&["--workers", "0", "dataset"], 2);
    s.fails(&["--preset", "huge", "dataset"], 2);
    let err = s.fails(&["eval", "--checkpoint", "missing.ckpt"], 3);
    assert!(err.contains("missing.ckpt"), "{err}");
}
