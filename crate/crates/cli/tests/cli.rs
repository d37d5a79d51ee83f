use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_face2scene");

const TINY: &str = r#"
[data]
n = 6
variants = 2
train_frac = 0.5
val_frac = 0.2
canonical = 16

[data.scene]
size = 64
face_min = 16.0

[degrade]
presets = ["d1", "d4"]

[fadex]
channels = 8
proj_dim = 8
epochs = 1
batch_size = 4
queue_capacity = 16

[mapnet]
in_channels = 8
heads = 4
token_dim = 8
tokens = 5

[restorer]
base_width = 4
token_dim = 8
attn_dim = 4
bank_rows = 2
steps = 3
batch = 2

[eval]
images = 2
"#;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("FACE2SCENE_DATA")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["no-such-command"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["restore", "--ckpt", "m", "--refq", "great"], dir.path()).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen-data", "--config", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = run(&["train-fadex", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(1), "no dataset yet");
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    for out in ["a", "b"] {
        ok(&run(&["gen-data", "--config", "tiny.toml", "--seed", "3", "--out", out], dir.path()));
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/manifest.jsonl"), read("b/manifest.jsonl"));
    assert_eq!(read("a/specs.json"), read("b/specs.json"));
    assert_eq!(read("a/lq/d4/scene_00005_v1.png"), read("b/lq/d4/scene_00005_v1.png"));
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let cfg = ["--config", "tiny.toml"];
    let with = |extra: &[&str]| -> Vec<String> { cfg.iter().chain(extra).map(|s| s.to_string()).collect() };
    let go = |cmd: &str, extra: &[&str]| {
        let mut a = vec![cmd.to_string()];
        a.extend(with(extra));
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        ok(&run(&refs, d));
    };
    // FACE2SCENE_DATA is cleared, so the default root is relative to the temp dir
    go("gen-data", &["--out", "data"]);
    std::fs::write(
        d.join("tiny.toml"),
        format!("{}\n", TINY.replacen("[data]\n", "[data]\nroot = \"data\"\n", 1)),
    )
    .unwrap();
    go("train-fadex", &["--out", "fadex"]);
    assert!(d.join("fadex/fadex.ckpt").is_file());
    go("train", &["--ckpt", "fadex/fadex.ckpt", "--out", "model"]);
    for f in ["mapnet.ckpt", "restorer.ckpt", "models.json", "restorer_log.csv"] {
        assert!(d.join("model").join(f).is_file(), "{f}");
    }
    go("restore", &["--ckpt", "model", "--scene", "scene_00005", "--refq", "bad", "--out", "out.png"]);
    let img = face2scene_core::Image::load_png(&d.join("out.png")).unwrap();
    assert_eq!(img.dims(), (64, 64));
    go("eval", &["--ckpt", "model", "--out", "eval"]);
    assert!(d.join("eval/metrics.csv").is_file());
    go("report", &["--ckpt", "model", "--out", "report"]);
    let rep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("report/robustness.json")).unwrap()).unwrap();
    assert_eq!(rep["rows"].as_array().map(Vec::len), Some(4));

    // missing input file
    let o = run(&["degrade", "--input", "nope.png"], d);
    assert_eq!(o.status.code(), Some(1));
}
