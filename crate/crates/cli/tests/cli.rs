use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[learner]
hidden = [16, 16]
num_critics = 2
sampled_critics = 2
batch_size = 32
utd = 0.5
actor_update_every = 1
seed_steps = 200
buffer_capacity = 5000

[reverse]
phi = 0.5

[forward]
n = 20

[trainer]
stage1_budget = 800
stage2_budget = 800
eval_interval = 400
eval_episodes = 4
num_envs = 4
steps_per_env = 2
record_wall_time = false
"#;

fn rfcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfcl"))
        .args(args)
        .env("RFCL_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rfcl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn demo_gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let stdout = ok(&["demo-gen", "--count", "5", "--seed", "3", "--out", s(&a)]);
    ok(&["demo-gen", "--count", "5", "--seed", "3", "--out", s(&b)]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("demo ")).count(), 5);
    let fa = fs::read(a.join("demos.rfcl")).unwrap();
    assert_eq!(fa, fs::read(b.join("demos.rfcl")).unwrap());
    let resolved = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 3"));
    assert!(resolved.contains("[learner]"));
}

#[test]
fn train_eval_heatmap_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let demos_dir = dir.path().join("demos");
    ok(&["demo-gen", "--config", &cfg, "--out", s(&demos_dir)]);
    let run = dir.path().join("run");
    let demos = demos_dir.join("demos.rfcl");
    let stdout = ok(&["train", "--config", &cfg, "--demos", s(&demos), "--seed", "1", "--out", s(&run)]);
    assert!(stdout.contains("stage switch at env step"));
    for f in ["config.toml", "metrics.csv", "events.csv", "stage1.ckpt", "final.ckpt", "summary.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let resolved = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(resolved.contains("demos.rfcl"));
    let ckpt = run.join("final.ckpt");
    let ev = dir.path().join("eval");
    ok(&["eval", "--config", &cfg, "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["episodes"], 4);

    let heat = |sub: &str| {
        let out = dir.path().join(sub);
        ok(&[
            "heatmap",
            "--config",
            &cfg,
            "--checkpoint",
            s(&ckpt),
            "--episodes-per-cell",
            "2",
            "--out",
            s(&out),
        ]);
        (
            fs::read_to_string(out.join("heatmap.csv")).unwrap(),
            fs::read_to_string(out.join("heatmap.pgm")).unwrap(),
        )
    };
    let (csv, pgm) = heat("h1");
    assert_eq!(heat("h2"), (csv.clone(), pgm.clone()));
    assert_eq!(csv.lines().count(), 8);
    assert!(csv.lines().all(|l| l.split(',').count() == 8));
    assert!(csv.contains("NaN"));
    assert!(pgm.starts_with("P2\n8 8\n"));
}

#[test]
fn invalid_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[reverse]\ndelta = -1\n").unwrap();
    let out = rfcl(&["train", "--config", s(&path), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("E_CONFIG"), "{err}");
    assert!(err.contains("reverse.delta"), "{err}");

    fs::write(&path, "[trainer]\nunknown_key = 1\n").unwrap();
    let out = rfcl(&["train", "--config", s(&path), "--out", s(&dir.path().join("o"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("trainer.unknown_key"));
}

#[test]
fn corrupt_demo_file_reports_stable_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demos.rfcl");
    fs::write(&path, b"not a demo file").unwrap();
    let out = rfcl(&["train", "--demos", s(&path), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("E_BAD_MAGIC"));
}

#[test]
fn trace_emits_reproducible_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["trace", "--seed", "2", "--out", s(out)]);
    }
    for f in ["trace_reverse.json", "trace_forward.json", "trace_env.json"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
    }
    let forward: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("trace_forward.json")).unwrap()).unwrap();
    assert_eq!(forward["calls"].as_array().unwrap().len(), 1000);
    let env: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("trace_env.json")).unwrap()).unwrap();
    assert_eq!(env["steps"].as_array().unwrap().len(), 100);
}

#[test]
fn ablation_prints_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("abl");
    let stdout = ok(&["ablate-reverse", "--config", &cfg, "--seeds", "0", "--out", s(&out)]);
    let rows: Vec<&str> = stdout.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| variant")).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("| uniform"));
    assert!(out.join("ablation.json").exists());
}

#[test]
fn modes_parse_from_the_command_line() {
    let out = rfcl(&["train", "--mode", "sideways"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sideways"));
}
