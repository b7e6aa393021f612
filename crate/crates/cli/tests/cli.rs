use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[scenario]
name = "cyclist_crossing"

[train]
epochs = 3
batch_size = 4
seed = 11

[experiment]
fallback_window = 2
"#;

fn safegen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safegen"))
        .current_dir(dir)
        .env_remove("SAFEGEN_SEED")
        .env_remove("SAFEGEN_WORKERS")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(root.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn presets_are_listed() {
    let dir = setup();
    let o = safegen(dir.path(), &["presets-list"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    for name in ["cyclist_crossing", "red_light_runner", "unprotected_left", "signalized_right"] {
        assert!(out.contains(name), "{out}");
    }
}

#[test]
fn train_writes_append_only_reproducible_runs() {
    let dir = setup();
    for _ in 0..2 {
        let o = safegen(dir.path(), &["train", "--config", "small.toml"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let runs = run_dirs(dir.path());
    assert_eq!(runs.len(), 2);
    assert!(runs[0].ends_with("cyclist_crossing-seed11-001"));
    assert!(runs[1].ends_with("cyclist_crossing-seed11-002"));

    let a = fs::read(runs[0].join("metrics.csv")).unwrap();
    let b = fs::read(runs[1].join("metrics.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 4);

    let ck: Vec<_> = fs::read_dir(runs[0].join("checkpoints")).unwrap().collect();
    assert_eq!(ck.len(), 3);
    assert!(runs[0].join("final.json").exists());

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(runs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["version"].as_str().unwrap().starts_with('v'));
}

#[test]
fn seed_env_overrides_config() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_safegen"))
        .current_dir(dir.path())
        .env("SAFEGEN_SEED", "5")
        .env("SAFEGEN_WORKERS", "1")
        .args(["train", "--config", "small.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let runs = run_dirs(dir.path());
    assert!(runs[0].ends_with("cyclist_crossing-seed5-001"));
    let cfg = fs::read_to_string(runs[0].join("config.toml")).unwrap();
    assert!(cfg.contains("seed = 5"));
}

#[test]
fn eval_heatmap_and_replay_round_trip() {
    let dir = setup();
    assert_eq!(code(&safegen(dir.path(), &["train", "--config", "small.toml"])), 0);
    let ck = run_dirs(dir.path())[0].join("final.json");
    let ck = ck.to_str().unwrap();

    let o = safegen(
        dir.path(),
        &["eval", "--config", "small.toml", "--checkpoint", ck, "--route", "heldout_right", "--speed", "35", "--episodes", "12", "--trace", "top.jsonl"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ranked = fs::read_to_string(dir.path().join("ranked.csv")).unwrap();
    let rows: Vec<&str> = ranked.lines().collect();
    assert_eq!(rows.len(), 13);
    assert!(rows[0].starts_with("rank,reward,"));
    let rewards: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(rewards.windows(2).all(|w| w[0] >= w[1]));

    let o = safegen(dir.path(), &["replay", "top.jsonl", "--svg", "top.svg"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("matches"));
    assert!(fs::read_to_string(dir.path().join("top.svg")).unwrap().starts_with("<svg"));

    let o = safegen(
        dir.path(),
        &["heatmap", "--config", "small.toml", "--checkpoint", ck, "--block", "Theta", "--given", "X=5", "--given", "Y=-2", "--out", "theta"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("theta.csv")).unwrap();
    let total: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9, "{total}");
    assert_eq!(csv.lines().count(), 257);

    let o = safegen(dir.path(), &["heatmap", "--config", "small.toml", "--checkpoint", ck, "--block", "X", "--y-block", "Y", "--out", "xy"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("xy.csv")).unwrap();
    let total: f64 = csv
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "{total}");
}

#[test]
fn tampered_trace_fails_replay() {
    let dir = setup();
    let o = safegen(dir.path(), &["baseline", "--method", "human_design", "--route", "straight_75", "--out", "h.csv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&safegen(dir.path(), &["train", "--config", "small.toml"])), 0);
    let ck = run_dirs(dir.path())[0].join("final.json");
    let o = safegen(dir.path(), &["eval", "--checkpoint", ck.to_str().unwrap(), "--episodes", "3", "--trace", "t.jsonl"]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut step: serde_json::Value = serde_json::from_str(&lines[5]).unwrap();
    let x = step["ego"]["x"].as_f64().unwrap();
    step["ego"]["x"] = serde_json::json!(x + 1.0);
    lines[5] = step.to_string();
    fs::write(dir.path().join("t.jsonl"), lines.join("\n") + "\n").unwrap();
    assert_eq!(code(&safegen(dir.path(), &["replay", "t.jsonl"])), 3);
}

#[test]
fn grid_baseline_covers_the_default_grid() {
    let dir = setup();
    let o = safegen(dir.path(), &["baseline", "--method", "grid", "--route", "straight_75", "--out", "grid.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("10800 rollouts"));
    assert_eq!(fs::read_to_string(dir.path().join("grid.csv")).unwrap().lines().count(), 10_801);
}

#[test]
fn random_baseline_honours_count() {
    let dir = setup();
    let o = safegen(dir.path(), &["baseline", "--method", "random", "--count", "40", "--out", "r.csv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(dir.path().join("r.csv")).unwrap().lines().count(), 41);
}

#[test]
fn exit_codes() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "[train]\nlearning_rate = -1.0\n[scenario]\nname = \"cyclist_crossing\"\n").unwrap();
    fs::write(dir.path().join("unknown.toml"), "bogus = 1\n").unwrap();
    fs::write(dir.path().join("noname.toml"), "[train]\nepochs = 2\n").unwrap();

    assert_eq!(code(&safegen(dir.path(), &["train", "--config", "bad.toml"])), 2);
    assert_eq!(code(&safegen(dir.path(), &["train", "--config", "unknown.toml"])), 2);
    assert_eq!(code(&safegen(dir.path(), &["train", "--config", "noname.toml"])), 2);
    assert_eq!(code(&safegen(dir.path(), &["train", "--preset", "spaceship"])), 2);
    assert_eq!(code(&safegen(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&safegen(dir.path(), &["eval", "--checkpoint", "x.json", "--episodes", "0"])), 2);
    assert_eq!(code(&safegen(dir.path(), &["baseline", "--method", "cmaes"])), 2);
    assert_eq!(code(&safegen(dir.path(), &["baseline", "--method", "random", "--route", "nowhere"])), 2);
    assert_eq!(code(&safegen(dir.path(), &["eval", "--checkpoint", "missing.json"])), 3);
    assert_eq!(code(&safegen(dir.path(), &["replay", "missing.jsonl"])), 3);
    assert!(!dir.path().join("runs").exists());
}
