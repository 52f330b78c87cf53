use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vasb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vasb")).args(args).output().expect("spawn vasb")
}

fn ok(args: &[&str]) -> Output {
    let out = vasb(args);
    assert!(
        out.status.success(),
        "vasb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A tiny experiment: narrow network, few samples, a few hundred steps.
fn write_config(dir: &Path, run_id: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"schema_version = 1
run_id = "{run_id}"
output_dir = "{out}"
seed = 5

[corpus]
mix = "mixed"
n_samples = 200
frames_per_sample = 24

[model]
hidden_width = 16
hidden_layers = 1

[train]
kind = "rabo"
latent_size = 8
p_global = 0.1
steps = 60
batch_frames = 12
log_every = 10
checkpoint_every = 25

[eval]
n_samples = 6
frames_per_sample = 24

[eval.metrics]
glide_frames = 4
{extra}
"#,
        out = dir.join("runs").display()
    );
    let path = dir.join(format!("{run_id}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn gen_train_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "round", "");
    let c = cfg.to_str().unwrap();
    let run = tmp.path().join("runs/round");

    ok(&["gen", "--config", c]);
    let manifest = String::from_utf8(read(&run.join("manifest.toml"))).unwrap();
    let value: toml::Table = manifest.parse().unwrap();
    let speech = value["train"]["stats"]["speech_fraction"].as_float().unwrap();
    assert!((0.3..=0.7).contains(&speech), "{speech}");
    let corpus = read(&run.join("train.corpus"));
    ok(&["gen", "--config", c]);
    assert_eq!(read(&run.join("train.corpus")), corpus);

    ok(&["train", "--config", c]);
    let trace = String::from_utf8(read(&run.join("loss.tsv"))).unwrap();
    assert_eq!(trace.lines().count(), 1 + 6);
    let ckpt = read(&run.join("checkpoint.bin"));

    ok(&["eval", "--config", c]);
    let report = read(&run.join("report.toml"));
    let curve = String::from_utf8(read(&run.join("curve.tsv"))).unwrap();
    assert_eq!(curve.lines().count(), 1 + 25);
    ok(&["eval", "--config", c]);
    assert_eq!(read(&run.join("report.toml")), report);

    // Retraining from scratch reproduces the checkpoint bit for bit.
    ok(&["train", "--config", c]);
    assert_eq!(read(&run.join("checkpoint.bin")), ckpt);

    let table = ok(&["report", run.join("report.toml").to_str().unwrap()]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.starts_with("run\terr@-1600"));
    assert!(text.contains("round\t"));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = write_config(tmp.path(), "full", "");
    ok(&["gen", "--config", full.to_str().unwrap()]);
    ok(&["train", "--config", full.to_str().unwrap()]);
    let reference = read(&tmp.path().join("runs/full/checkpoint.bin"));

    // The same run stopped after 25 steps, then resumed with the full budget.
    let part = write_config(tmp.path(), "part", "");
    let p = part.to_str().unwrap();
    ok(&["gen", "--config", p]);
    let text = std::fs::read_to_string(&part).unwrap();
    std::fs::write(&part, text.replace("steps = 60", "steps = 25")).unwrap();
    ok(&["train", "--config", p]);
    std::fs::write(&part, &text).unwrap();
    ok(&["train", "--config", p, "--resume"]);
    let run = tmp.path().join("runs/part");
    assert_eq!(read(&run.join("checkpoint.bin")), reference);
    assert_eq!(read(&run.join("loss.tsv")), read(&tmp.path().join("runs/full/loss.tsv")));

    // A checkpoint from another training seed is refused.
    std::fs::write(&part, text.replace("latent_size = 8", "latent_size = 8\nseed = 3")).unwrap();
    let out = vasb(&["train", "--config", p, "--resume"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "compatibility");
}

#[test]
fn errors_are_machine_readable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "err", "");
    let out = vasb(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");

    let bad = write_config(tmp.path(), "bad", "[sweep]\np_globals = [0.5, 1.5]\n");
    let out = vasb(&["gen", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("sweep.p_globals[1]"));
}

#[test]
fn eval_rejects_foreign_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a", "");
    ok(&["gen", "--config", a.to_str().unwrap()]);
    ok(&["train", "--config", a.to_str().unwrap()]);
    let b = write_config(tmp.path(), "b", "");
    let text = std::fs::read_to_string(&b).unwrap().replace("[corpus]", "[corpus.params]\nnoise_floor = 0.02\n\n[corpus]");
    std::fs::write(&b, text).unwrap();
    ok(&["gen", "--config", b.to_str().unwrap()]);
    let runs = tmp.path().join("runs");
    std::fs::copy(runs.join("a/checkpoint.bin"), runs.join("b/checkpoint.bin")).unwrap();
    let out = vasb(&["eval", "--config", b.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "compatibility");
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = "[sweep]\nkinds = [\"nobo\", \"rabo\"]\nlatent_sizes = [8]\np_globals = [0.0, 0.2]\nmixes = [\"singingonly\"]\n";
    let cfg = write_config(tmp.path(), "sw", sweep);
    let c = cfg.to_str().unwrap();
    let out1 = tmp.path().join("one");
    let out2 = tmp.path().join("two");
    ok(&["sweep", "--config", c, "--workers", "1", "--output", out1.to_str().unwrap()]);
    ok(&["sweep", "--config", c, "--workers", "2", "--output", out2.to_str().unwrap()]);
    let s1 = read(&out1.join("sw/summary.tsv"));
    assert_eq!(s1, read(&out2.join("sw/summary.tsv")));
    let text = String::from_utf8(s1).unwrap();
    // nobo collapses to one cell; rabo keeps both p_g values.
    assert_eq!(text.lines().count(), 1 + 3);
    assert!(text.lines().skip(1).all(|l| l.split('\t').nth(5) == Some("ok")), "{text}");
}

#[test]
fn run_id_is_unique_within_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "same", "");
    ok(&["gen", "--config", a.to_str().unwrap()]);
    let out = vasb(&["gen", "--config", a.to_str().unwrap(), "--seed", "99"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("run_id"));
}
