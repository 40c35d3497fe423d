use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_glyphgen"));
    c.env_remove("GLYPHGEN_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Trained {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
    checkpoint: PathBuf,
    label: String,
    root: PathBuf,
}

const TINY: &str = r#"{
    "iterations": 20, "stage_len": 10, "batch_size": 4,
    "model": {
        "max_stage": 1, "channels": [6, 4], "z_dim": 6, "embed_dim": 8, "ilsc_dim": 4,
        "style_resolution": 8, "style_channels": 2, "style_features": 4
    }
}"#;

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus");
        ok(&["corpus", "synth", "--fonts", "40", "--resolution", "16", "--seed", "2", "--out", s(&corpus)]);
        let cfg = root.join("tiny.json");
        std::fs::write(&cfg, TINY).unwrap();
        let train_dir = root.join("train");
        ok(&[
            "train", "--corpus", s(&corpus), "--desk", "--config", s(&cfg), "--seed", "4", "--test-fraction", "0.25",
            "--out", s(&train_dir),
        ]);
        let stats: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(corpus.join("stats.json")).unwrap()).unwrap();
        let label = stats["label_frequency"][0][0].as_str().unwrap().to_string();
        Trained {
            _dir: dir,
            corpus,
            checkpoint: train_dir.join("model.ckpt"),
            label,
            root,
        }
    })
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run-manifest.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [&["frobnicate"][..], &["generate", "--bogus"], &["eval"], &[]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    let out = run(&["generate", "--checkpoint", "x", "--impressions", "thin:2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one_and_json() {
    let out = run(&["generate", "--checkpoint", "/nonexistent.ckpt", "--impressions", "thin"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "io");

    let t = trained();
    let out = run(&["generate", "--checkpoint", s(&t.checkpoint), "--impressions", "xyzzy", "--out", s(&t.root.join("bad"))]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "unknown_label");
}

#[test]
fn training_run_records_its_manifest() {
    let t = trained();
    let m = manifest(&t.root.join("train"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["seeds"]["train"], 4);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.root.join("train/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["iterations"], 20);
    assert_eq!(cfg["batch_size"], 4);
    assert!(t.root.join("train/telemetry.jsonl").is_file());
    let synth = manifest(&t.corpus);
    assert_eq!(synth["details"]["fonts"], 40);
}

#[test]
fn generate_writes_one_image_per_char_and_replays() {
    let t = trained();
    let out = t.root.join("gen");
    ok(&[
        "generate", "--checkpoint", s(&t.checkpoint), "--impressions", &t.label, "--chars", "ABCHERONS", "--seed", "7",
        "--out", s(&out),
    ]);
    let mut pngs: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    pngs.sort();
    assert_eq!(pngs.len(), 9);
    assert!(pngs[3].file_name().unwrap().to_str().unwrap().ends_with("-H.png"));
    let m = manifest(&out);
    assert_eq!(m["seeds"]["noise"], 7);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 9);

    let again = t.root.join("gen-replay");
    ok(&["replay", s(&out.join("run-manifest.json")), "--out", s(&again)]);
    for p in &pngs {
        let q = again.join(p.file_name().unwrap());
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap());
    }
}

#[test]
fn output_root_comes_from_the_environment() {
    let t = trained();
    let root = t.root.join("envroot");
    let out = bin()
        .env("GLYPHGEN_OUT", &root)
        .args(["generate", "--checkpoint", s(&t.checkpoint), "--impressions", &t.label, "--chars", "AB"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("generate/run-manifest.json").is_file());
}

#[test]
fn sweep_writes_one_row_per_ratio() {
    let t = trained();
    let out = t.root.join("sweep");
    ok(&[
        "eval", "sweep", "--checkpoint", s(&t.checkpoint), "--corpus", s(&t.corpus), "--test-fraction", "0.25",
        "--ratios", "0,0.3,0.6,0.9", "--chars", "AEIM", "--out", s(&out),
    ]);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "ratio,map_test");
    assert_eq!(lines.len(), 5);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metric"], "sweep");
    assert_eq!(report["details"]["points"].as_array().unwrap().len(), 4);
}

#[test]
fn interpolation_and_correlation_artifacts() {
    let t = trained();
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.corpus.join("stats.json")).unwrap()).unwrap();
    let other = stats["label_frequency"][1][0].as_str().unwrap();
    let out = t.root.join("interp");
    ok(&[
        "interpolate", "impression", "--checkpoint", s(&t.checkpoint), "--from", &t.label, "--to", other, "--chars", "AB",
        "--out", s(&out),
    ]);
    assert!(out.join("grid.png").is_file());
    let out = t.root.join("interp-noise");
    ok(&[
        "interpolate", "noise", "--checkpoint", s(&t.checkpoint), "--impressions", &t.label, "--seed", "1", "--seed-2",
        "2", "--lambdas", "0,0.5,1", "--out", s(&out),
    ]);
    assert_eq!(manifest(&out)["details"]["rows"], 3);

    let out = t.root.join("corr");
    ok(&["analyze", "correlation", "--checkpoint", s(&t.checkpoint), "--corpus", s(&t.corpus), "--out", s(&out)]);
    let csv = std::fs::read_to_string(out.join("correlation-reordered.csv")).unwrap();
    let k = stats["labels"].as_u64().unwrap() as usize;
    assert_eq!(csv.lines().count(), k.min(30) + 1);
    assert!(out.join("heatmap-reordered.png").is_file());
    assert_eq!(manifest(&out)["details"]["order"].as_array().unwrap().len(), k.min(30));
}

#[test]
fn corpus_stats_reads_back_the_synthetic_corpus() {
    let t = trained();
    let out = ok(&["corpus", "stats", "--corpus", s(&t.corpus), "--out", s(&t.root.join("stats"))]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["fonts"], 40);
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.corpus.join("stats.json")).unwrap()).unwrap();
    for key in ["fonts", "labels", "total_positives", "max_labels", "min_labels"] {
        assert_eq!(v[key], saved[key], "{key}");
    }
    let freq = |x: &serde_json::Value| -> std::collections::BTreeMap<String, u64> {
        x["label_frequency"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| (e[0].as_str().unwrap().to_string(), e[1].as_u64().unwrap()))
            .collect()
    };
    assert_eq!(freq(&v), freq(&saved));
}
