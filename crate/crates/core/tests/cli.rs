use std::path::Path;
use std::process::{Command, Output};

use nvif_lab::harness::{read_replay_dump, EvalReport, ScalabilityMatrix};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvif-lab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body.to_string()).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_bad_usage() {
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(&["train"]).status.code(), Some(1));
}

#[test]
fn configuration_errors_exit_with_one_and_name_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        serde_json::json!({"task": "desk-random-12", "bogus": 1, "ppo": {"gama": 0.9, "clip_eps": 2.0}}),
    );
    let o = cli(&["train", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for key in ["bogus", "ppo.gama", "ppo.clip_eps"] {
        assert!(err.contains(key), "{key} missing from {err}");
    }
    let cfg = write_config(dir.path(), "alg.json", serde_json::json!({"algorithm": "dgn"}));
    assert_eq!(cli(&["train", "--config", &cfg]).status.code(), Some(1));
    let cfg = write_config(dir.path(), "task.json", serde_json::json!({"task": "huge-99"}));
    assert_eq!(cli(&["pretrain-obs", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn missing_artifacts_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cfg = write_config(dir.path(), "c.json", serde_json::json!({"output_dir": out}));
    for args in [vec!["pretrain-nvif"], vec!["train"], vec!["eval"]] {
        let mut full = args.clone();
        full.extend(["--config", &cfg]);
        let o = cli(&full);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn random_policy_leaves_food_on_the_small_task() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cfg = write_config(dir.path(), "c.json", serde_json::json!({"task": "normal-small", "output_dir": out}));
    let o = cli(&["eval", "--config", &cfg, "--policy", "random", "--episodes", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reports: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    let r: EvalReport = serde_json::from_value(reports["random"].clone()).unwrap();
    assert_eq!(r.episodes, 3);
    assert!(r.food_eaten_frac < 1.0);
}

#[test]
fn full_pipeline_through_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut bundles = Vec::new();
    for (name, task) in [("a", "desk-random-12"), ("b", "desk-normal-16")] {
        let out = dir.path().join(name);
        let cfg = write_config(
            dir.path(),
            &format!("{name}.json"),
            serde_json::json!({
                "task": task,
                "output_dir": out,
                "nvif": {"corpus_episodes": 6, "obs_vae": {"epochs": 1}, "pretrain": {"epochs": 1}},
                "ppo": {"epochs": 2, "episodes_per_epoch": 2},
                "eval": {"episodes": 2}
            }),
        );
        for cmd in ["pretrain-obs", "pretrain-nvif", "train"] {
            let o = cli(&[cmd, "--config", &cfg]);
            assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
        }
        for f in ["obs-vae.json", "nvif-neighbor.json", "nvif-neighbor.csv", "seed-0/metrics.csv", "seed-0/bundle.json"] {
            assert!(out.join(f).exists(), "{f} not written");
        }
        let o = cli(&["eval", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let o = cli(&["train", "--config", &cfg, "--resume"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

        let replay = out.join("replay.jsonl");
        let bundle = out.join("seed-0/bundle.json").display().to_string();
        let o = cli(&["replay-dump", "--config", &cfg, "--policy", &bundle, "--episodes", "2"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert_eq!(read_replay_dump(&replay).unwrap().len(), 2);
        bundles.push((bundle, cfg));
    }

    let policies = format!("{},{}", bundles[0].0, bundles[1].0);
    let o = cli(&[
        "scalability",
        "--config",
        &bundles[0].1,
        "--policies",
        &policies,
        "--tasks",
        "desk-random-12,desk-normal-16",
        "--episodes",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (rows, cols, scores) = ScalabilityMatrix::read_csv(&dir.path().join("a/matrix.csv")).unwrap();
    assert_eq!(rows, vec!["desk-random-12", "desk-normal-16"]);
    assert_eq!(cols, vec!["desk-random-12", "desk-normal-16"]);
    for c in 0..2 {
        assert!(scores.iter().all(|r| (0.0..=1.0).contains(&r[c])));
        assert!(scores.iter().any(|r| r[c] == 1.0));
    }
}
