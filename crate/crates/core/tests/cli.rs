//! End-to-end checks of the `eqpk` binary: exit codes, report files and the
//! train / resume contract.

use std::path::Path;
use std::process::{Command, Output};

use eqpk::actions::ActionKind;
use eqpk::harness::{MetricsRecord, TransformResult, METRICS_SCHEMA};
use eqpk::policy::ObsMode;
use eqpk::sim::Task;

fn eqpk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqpk")).args(args).output().expect("run eqpk")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small reach config; `extra` lines are spliced into the top-level table
/// and `policy_extra` into `[policy]`.
fn tiny_config(extra: &str, policy_extra: &str) -> String {
    format!(
        "seeds = [5]\ndemos = 3\ntrain_steps = 20\nbatch_size = 8\nwarmup_steps = 5\n\
         eval_episodes = 2\neval_rotations = 1\n{extra}\n\n[env]\ntask = \"reach\"\n\n\
         [policy]\nhidden = 32\ndiffusion_steps = 8\nimage_size = 16\ncrop = 16\n{policy_extra}\n\n\
         [policy.encoder]\nfeature_dim = 8\ninput_size = 16\nwidths = [4, 8]\n\n\
         [policy.encoder.kind]\ntype = \"plain_cnn\"\n"
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_ok(args: &[&str]) -> Output {
    let out = eqpk(args);
    assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
    out
}

fn record(name: &str, encoder: &str, seed: u64, success: f64) -> MetricsRecord {
    MetricsRecord {
        schema: METRICS_SCHEMA.into(),
        name: name.into(),
        config_hash: format!("hash-{name}"),
        seed,
        task: Task::Reach,
        obs_mode: ObsMode::EyeInHand,
        action_kind: ActionKind::Relative,
        encoder: encoder.into(),
        condition_on_pose: false,
        success_rate: success,
        success_rate_identity: success,
        success_rate_final_weights: None,
        transforms: vec![TransformResult {
            angle: 0.0,
            successes: (success * 10.0).round() as usize,
            episodes: 10,
        }],
        final_loss: Some(0.1),
        equivariance_error: 0.0,
        equivariance_case: "exact".into(),
    }
}

#[test]
fn check_passes_for_a_cheap_scope() {
    let out = run_ok(&["check", "--scope", "actions"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("passed"));
}

#[test]
fn check_names_the_failing_suite() {
    let out = eqpk(&["check", "--scope", "se3", "--tolerance-scale", "0"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("se3"), "{}", stderr(&out));
}

#[test]
fn unknown_scope_is_a_config_error() {
    assert_eq!(code(&eqpk(&["check", "--scope", "everything"])), 2);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &tiny_config("learning_rate = 0.1", ""));
    let out = eqpk(&["collect", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"));
}

#[test]
fn report_rejects_empty_garbage_and_foreign_schema() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&eqpk(&["report", "--out", d])), 7);
    let garbage = write(dir.path(), "g.json", "{not json");
    assert_eq!(code(&eqpk(&["report", &garbage, "--out", d])), 7);
    let mut r = record("a", "plain_cnn", 0, 0.5);
    r.schema = "other.v9".into();
    let foreign = write(dir.path(), "f.json", &r.to_json());
    assert_eq!(code(&eqpk(&["report", &foreign, "--out", d])), 7);
}

#[test]
fn report_groups_seeds_with_standard_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (i, s) in [0.4, 0.5, 0.6].into_iter().enumerate() {
        files.push(write(dir.path(), &format!("a{i}.json"), &record("a", "plain_cnn", i as u64, s).to_json()));
        files.push(write(dir.path(), &format!("b{i}.json"), &record("b", "equi_cnn_c4", i as u64, 0.9).to_json()));
    }
    let mut args = vec!["report", "--out", dir.path().to_str().unwrap()];
    args.extend(files.iter().map(|s| s.as_str()));
    run_ok(&args);
    let rows = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(rows.lines().count(), 7);
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    let plain = lines.iter().find(|l| l.contains("plain_cnn")).unwrap();
    assert!(plain.contains(",3,0.5000,0.0577,"), "{plain}");
    let equi = lines.iter().find(|l| l.contains("equi_cnn_c4")).unwrap();
    assert!(equi.contains(",3,0.9000,0.0000,"), "{equi}");
}

#[test]
fn unsolvable_collection_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = tiny_config("", "");
    text = text.replace("task = \"reach\"", "task = \"reach\"\nmax_steps = 1");
    let cfg = write(dir.path(), "c.toml", &text);
    let out = eqpk(&["collect", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn action_kind_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let abs = write(dir.path(), "abs.toml", &tiny_config("", "action_kind = \"absolute\""));
    run_ok(&["collect", "--config", &abs, "--out", d]);
    let rel = write(dir.path(), "rel.toml", &tiny_config("", ""));
    let out = eqpk(&["train", "--config", &rel, "--out", d]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn diverging_training_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = write(dir.path(), "c.toml", &tiny_config("lr = 1e300\nwarmup_steps = 0", "").replace("warmup_steps = 5\n", ""));
    run_ok(&["collect", "--config", &cfg, "--out", d]);
    let out = eqpk(&["train", "--config", &cfg, "--out", d]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn bad_checkpoints_exit_6() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = write(dir.path(), "c.toml", &tiny_config("", ""));
    run_ok(&["collect", "--config", &cfg, "--out", d]);
    run_ok(&["train", "--config", &cfg, "--out", d]);

    let other = write(dir.path(), "other.toml", &tiny_config("", "hidden = 48").replace("hidden = 32\n", ""));
    assert_eq!(code(&eqpk(&["eval", "--config", &other, "--out", d])), 6);
    let resumed = eqpk(&["train", "--config", &other, "--out", d, "--resume", &format!("{d}/checkpoint.eqcp")]);
    assert_eq!(code(&resumed), 6);

    let garbage = write(dir.path(), "garbage.eqcp", "definitely not a checkpoint");
    assert_eq!(code(&eqpk(&["eval", "--config", &cfg, "--out", d, "--checkpoint", &garbage])), 6);
    let missing = format!("{d}/missing.eqcp");
    assert_eq!(code(&eqpk(&["eval", "--config", &cfg, "--out", d, "--checkpoint", &missing])), 6);
}

fn losses(log: &str) -> Vec<(usize, String)> {
    log.lines()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[1].parse().unwrap(), f[3].to_string())
        })
        .collect()
}

#[test]
fn training_reduces_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &tiny_config("log_every = 20", "").replace("train_steps = 20", "train_steps = 200"),
    );
    run_ok(&["collect", "--config", &cfg, "--out", d]);
    run_ok(&["train", "--config", &cfg, "--out", d]);
    let log = std::fs::read_to_string(dir.path().join("train.log")).unwrap();
    let l = losses(&log);
    assert_eq!(l.len(), 10);
    let first: f64 = l[0].1.parse().unwrap();
    let last: f64 = l[9].1.parse().unwrap();
    assert!(last < first, "loss went from {first} to {last}");
    run_ok(&["eval", "--config", &cfg, "--out", d]);
    let m = MetricsRecord::from_json(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m.transforms.len(), 2);
    let timing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("timing.json")).unwrap()).unwrap();
    assert!(timing["eval_wall_seconds"].as_f64().unwrap() > 0.0);
}

#[test]
fn resume_continues_the_same_run() {
    let root = tempfile::tempdir().unwrap();
    let full_dir = root.path().join("full");
    let part_dir = root.path().join("part");
    let full = write(root.path(), "full.toml", &tiny_config("log_every = 1", ""));
    let (f, p) = (full_dir.to_str().unwrap(), part_dir.to_str().unwrap());
    run_ok(&["collect", "--config", &full, "--out", f]);
    run_ok(&["train", "--config", &full, "--out", f]);
    run_ok(&["collect", "--config", &full, "--out", p]);
    run_ok(&["train", "--config", &full, "--out", p, "--until", "10"]);
    let ck_first = root.path().join("first.eqcp");
    std::fs::copy(part_dir.join("checkpoint.eqcp"), &ck_first).unwrap();
    run_ok(&["train", "--config", &full, "--out", p, "--resume", ck_first.to_str().unwrap()]);

    let whole = losses(&std::fs::read_to_string(full_dir.join("train.log")).unwrap());
    let tail = losses(&std::fs::read_to_string(part_dir.join("train.log")).unwrap());
    assert_eq!(tail.first().map(|x| x.0), Some(11));
    assert_eq!(&whole[10..], &tail[..]);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            eqpk::harness::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
