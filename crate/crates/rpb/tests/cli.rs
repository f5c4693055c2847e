use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rpb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpb")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
seed = 3
[train]
samples = 4
epochs = 2
batch_size = 2
horizon = 60
lr = 0.01
[eval]
scenarios = 5
[robust]
trials = 4
horizon = 200
gain_trials = 12
gain_horizon = 60
"#;

#[test]
fn simulate_without_checkpoint_plots_base_controller() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = rpb(&["simulate", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["eta.csv", "u.csv", "e.csv", "w_hat.csv", "loss.csv", "rollout.json"] {
        assert!(out.join("rollout_000").join(f).exists(), "{f}");
    }
    let svg = fs::read_to_string(out.join("trajectories.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("valid XML");
    let class = |c: &str| doc.descendants().filter(|n| n.attribute("class") == Some(c)).count();
    assert_eq!(class("path"), 2);
    assert_eq!(class("obstacle"), 2);
    assert_eq!(class("start"), 2);
    assert_eq!(class("target"), 2);
    // base controller: inputs are identically zero
    let u = rpb::io::read_signal_csv(&out.join("rollout_000/u.csv")).unwrap();
    assert!(u.as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn simulate_is_deterministic_under_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let o = rpb(&["simulate", "--seed", seed, "--rollouts", "2", "--out", s(out)]);
        assert!(o.status.success());
    }
    let read = |d: &Path| fs::read(d.join("rollout_001/eta.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn train_eval_simulate_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("train");
    let o = rpb(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck = out.join("checkpoint.json");
    let hist = fs::read_to_string(out.join("loss_history.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 3);
    // the resolved config reproduces itself, with the output override applied
    let saved = rpb::ExperimentConfig::load(&out.join("config.toml")).unwrap();
    let mut orig = rpb::ExperimentConfig::load(&cfg).unwrap();
    orig.output_dir = out.clone();
    assert_eq!(saved, orig);

    let ev = dir.path().join("eval");
    let o = rpb(&["eval", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&ev)]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    let keys: Vec<&str> = m.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    assert_eq!(
        keys,
        ["collision_free", "collisions", "mean_final_error", "mean_loss", "penetration_frames", "scenarios"]
    );
    assert_eq!(m["scenarios"], 5);

    let o = rpb(&["eval", "--config", s(&cfg), "--checkpoint", s(&ck), "--rollouts", "0", "--out", s(&ev)]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["scenarios"], 0);
    assert_eq!(m["collisions"], 0);

    let sim = dir.path().join("sim");
    let o = rpb(&["simulate", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&sim)]);
    assert!(o.status.success());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(sim.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["boosted"], true);
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let runs: Vec<String> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = dir.path().join(n);
            let o = rpb(&["train", "--config", s(&cfg), "--epochs", "1", "--out", s(&out)]);
            assert!(o.status.success());
            fs::read_to_string(out.join("checkpoint.json")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn check_robustness_without_mismatch_is_trivially_admissible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("rob");
    let o = rpb(&["check-robustness", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("margin      1.000000  admissible"), "{stdout}");
    let sweep = fs::read_to_string(out.join("beta_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 6);
    assert!(sweep.starts_with("beta,alpha_m,margin,admissible"));
}

#[test]
fn inadmissible_margin_is_advisory() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[mismatch]\nkind = \"bounded_operator\"\nmagnitude = 0.2\n");
    let cfg = write(dir.path(), "mm.toml", &text);
    let out = dir.path().join("rob");
    let o = rpb(&["check-robustness", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success());
    let sweep = fs::read_to_string(out.join("beta_sweep.csv")).unwrap();
    // 3x the chosen scaling pushes the margin negative
    assert!(sweep.lines().skip(1).any(|l| l.split(',').nth(3) == Some("false")), "{sweep}");
    // same disturbances at every point: larger scaling, larger input ratio
    let u_ratio: Vec<f64> = sweep.lines().skip(1).map(|l| l.split(',').nth(6).unwrap().parse().unwrap()).collect();
    assert!(u_ratio.windows(2).all(|w| w[0] <= w[1]), "{u_ratio:?}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[train]\nepochs = \"many\"\n");
    let o = rpb(&["train", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = rpb(&["simulate", "--config", s(&dir.path().join("nope.toml"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = rpb(&["eval", "--checkpoint", s(&dir.path().join("missing.json")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = rpb(&["eval", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    // a huge learning rate drives the loss past the divergence threshold
    let wild = write(
        dir.path(),
        "wild.toml",
        "[train]\nsamples = 2\nepochs = 30\nbatch_size = 1\nhorizon = 40\nlr = 1e4\n[boost]\nbound = 1e4\n",
    );
    let o = rpb(&["train", "--config", s(&wild), "--out", s(&dir.path().join("wild"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let cfg = rpb::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert_eq!(rpb::ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
            n += 1;
        }
    }
    assert!(n >= 4);
}
