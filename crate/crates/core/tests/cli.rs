use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pad_core::checkpoint::Checkpoint;
use pad_core::pipeline::{init_params, RunConfig};
use serde_json::Value;

const TINY: &str = r#"
seed = 3
sweep_horizons = [1, 2, 3, 4, 5]

[data.synthetic]
t_len = 2400
n_channels = 2
anomaly_count = 4
precursor_len = 8
min_len = 40
max_len = 120

[model]
n_channels = 2
hidden_dim = 3
width_f = 4
width_g = 4
width_c = 4
n_hidden_layers_f = 1
n_hidden_layers_g = 1
n_hidden_layers_c = 1

[solver]
scheme = "rk4"
steps_per_window = 1
knot_aligned = true

[train]
epochs = 1
batch_size = 32
window_size = 10
poa_horizon = 3
shard_size = 16
"#;

fn pad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pad"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{TINY}\nbogus = 1\n"));
    let out = pad(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["event"], "error");
    assert!(err["message"].as_str().unwrap().contains("bogus"));
}

#[test]
fn nested_unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &TINY.replace("epochs = 1", "epochs = 1\nepoch = 2"));
    assert_eq!(pad(&["train", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn missing_data_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"data": {"synthetic": null, "train_csv": "/nonexistent/train.csv"}, "model": {"n_channels": 2}}"#,
    );
    let out = pad(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_drop_value_is_a_usage_error() {
    let out = pad(&["eval", "--config", "x.toml", "--drop", "0.4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_fails_on_zero_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let small = r#"{"window": 5, "batch": 2, "model": {"n_channels": 2, "hidden_dim": 2, "width_f": 3, "width_g": 3, "width_c": 3, "n_hidden_layers_f": 1, "n_hidden_layers_g": 1}, "solver": {"scheme": "rk4", "steps_per_window": 4, "knot_aligned": false}}"#;
    let cfg = write(dir.path(), "g.json", small);
    let out = pad(&["gradcheck", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("PASS max_rel_err ≤ 1e-4"), "{stdout}");
    assert!(dir.path().join("gradcheck.json").exists());

    let strict = write(dir.path(), "strict.json", &small.replacen('{', r#"{"tolerance": 0.0, "#, 1));
    let out = pad(&["gradcheck", "--config", s(&strict)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL"));
}

#[test]
fn zero_epoch_checkpoint_equals_init() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &TINY.replace("epochs = 1", "epochs = 0"));
    let out = pad(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = Checkpoint::load(&dir.path().join("checkpoint.json")).unwrap();
    let run = RunConfig::from_file(&cfg).unwrap();
    assert_eq!(ck.params().unwrap(), init_params(&run).unwrap());
}

#[test]
fn train_then_eval_embeds_config_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let out = pad(&["train", "--config", s(&cfg), "--out", s(dir.path()), "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["L_a"].is_number() && first["L_KD"].is_number());

    let out = pad(&["eval", "--config", s(&cfg), "--out", s(dir.path()), "--seed", "9", "--drop", "0.3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = read_json(&dir.path().join("metrics.json"));
    assert_eq!(metrics["drop"], 0.3);
    assert_eq!(metrics["config"]["seed"], 9);
    assert_eq!(metrics["config"]["data"]["drop"], 0.3);
    for task in ["anomaly", "poa"] {
        let f1 = metrics[task]["f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }
    assert_eq!(read_json(&dir.path().join("train_summary.json"))["config"]["seed"], 9);
    assert_eq!(read_json(&dir.path().join("checkpoint.json"))["config"]["seed"], 9);
    let preds = std::fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    assert!(preds.lines().count() > 1);
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn toml_and_json_configs_are_equivalent() {
    let from_toml = RunConfig::from_toml(TINY).unwrap();
    let json = serde_json::to_string(&from_toml.snapshot()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (t, j) = (write(dir.path(), "c.toml", TINY), write(dir.path(), "c.json", &json));
    assert_eq!(RunConfig::from_file(&t).unwrap(), RunConfig::from_file(&j).unwrap());

    let run = |cfg: &Path, out: &Path| {
        let o = pad(&["train", "--config", s(cfg), "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out.join("checkpoint.json")).unwrap()
    };
    assert_eq!(run(&t, &dir.path().join("a")), run(&j, &dir.path().join("b")));
}

#[test]
fn sweep_writes_one_row_per_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let out = pad(&["sweep", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "p,poa_f1");
    assert_eq!(lines.len(), 6);
    for (line, p) in lines[1..].iter().zip(1..) {
        let (h, f1) = line.split_once(',').unwrap();
        assert_eq!(h.parse::<usize>().unwrap(), p);
        assert!((0.0..=1.0).contains(&f1.parse::<f64>().unwrap()));
    }
}

#[test]
fn synth_and_augment_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", TINY);
    let out = pad(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let seq = pad_core::data::load_csv(dir.path().join("synthetic.csv")).unwrap();
    assert_eq!(seq.len(), 2400);
    assert!(seq.anomaly_ratio() > 0.0);

    // augmentation needs unlabeled input
    let plain = dir.path().join("plain.csv");
    let mut text = String::from("timestamp,a,b\n");
    for t in 0..1500 {
        text.push_str(&format!("{t},{},{}\n", (t as f64 * 0.02).sin(), (t as f64 * 0.03).cos()));
    }
    std::fs::write(&plain, text).unwrap();
    let out = pad(&["augment", "--input", s(&plain), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let aug = pad_core::data::load_csv(dir.path().join("augmented.csv")).unwrap();
    assert!(aug.len() > 1500 && aug.anomaly_ratio() > 0.0);
}
