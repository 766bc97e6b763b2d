//! End-to-end checks of the command-line binary: synthesize a corpus, train
//! on it, evaluate, decode one file, gradient-check a tiny model and run a
//! two-entry ablation grid, all through the compiled executable.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

// ── harness ─────────────────────────────────────────────────────────────────

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mltsf"))
}

/// Runs the binary, asserts exit success, returns captured stdout.
fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("failed to spawn mltsf");
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(
        out.status.success(),
        "mltsf {args:?} exited with {:?}\nstdout:\n{stdout}\nstderr:\n{stderr}",
        out.status.code()
    );
    stdout
}

/// Fresh scratch directory under the system temp root.
fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("mltsf-cli").join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small model and corpus so every subcommand finishes in seconds. Keys not
/// listed keep their defaults.
const TINY_CONFIG: &str = "\
scales=8,6,4
feat_dim=8
out_dim=10
n_glosses=4
d_min=4
d_max=8
sigma=0.4
trans_min=1
trans_max=2
dropout_prob=0.1
glosses_min=2
glosses_max=3
lr=0.001
epochs=2
decay_start=1
decay_interval=1
batch_size=2
seed=7
";

// ── tests ───────────────────────────────────────────────────────────────────

#[test]
fn synth_train_eval_decode_round_trip() {
    let dir = scratch("round-trip");
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();
    let train_dir = dir.join("train");
    let dev_dir = dir.join("dev");
    let ckpt = dir.join("model.ckpt");

    let synth_out = run_ok(&[
        "synth", "--config", cfg, "--n", "10", "--out", train_dir.to_str().unwrap(),
    ]);
    assert!(synth_out.contains("wrote 10 samples"), "unexpected synth output: {synth_out}");
    run_ok(&[
        "synth", "--config", cfg, "--n", "4", "--out", dev_dir.to_str().unwrap(),
        "--split", "dev",
    ]);
    assert!(train_dir.join("vocab.txt").exists());
    assert!(dev_dir.join("dev0000.mlts").exists());

    let train_out = run_ok(&[
        "train", "--config", cfg, "--data-dir", train_dir.to_str().unwrap(),
        "--dev-dir", dev_dir.to_str().unwrap(), "--out", ckpt.to_str().unwrap(),
    ]);
    assert!(train_out.contains("epoch"), "no per-epoch trace in: {train_out}");
    assert!(train_out.contains("saved"), "no save confirmation in: {train_out}");
    assert!(ckpt.exists());

    let eval_out = run_ok(&[
        "eval", "--ckpt", ckpt.to_str().unwrap(), "--data-dir", dev_dir.to_str().unwrap(),
    ]);
    assert!(eval_out.contains("wer="), "no wer line in: {eval_out}");
    assert!(eval_out.contains("ref_len="), "no edit breakdown in: {eval_out}");

    let decode_out = run_ok(&[
        "decode", "--ckpt", ckpt.to_str().unwrap(),
        "--features", dev_dir.join("dev0000.mlts").to_str().unwrap(),
    ]);
    assert!(decode_out.contains("reference:"), "no reference line in: {decode_out}");
    assert!(decode_out.contains("hypothesis:"), "no hypothesis line in: {decode_out}");
}

#[test]
fn gradcheck_passes_on_the_tiny_config() {
    let dir = scratch("gradcheck");
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, TINY_CONFIG).unwrap();

    // The instance is deterministic (fixed config seed, fixed sample draw),
    // so this tolerance is a frozen observation, not a guess.
    let out = run_ok(&[
        "gradcheck", "--config", cfg.to_str().unwrap(), "--tolerance", "1e-3",
    ]);
    assert!(out.contains("gradcheck passed"), "unexpected gradcheck output: {out}");
}

#[test]
fn ablate_runs_a_small_grid() {
    let out = run_ok(&[
        "ablate", "--suite", "aggregator", "--seeds", "1", "--train-n", "6", "--dev-n", "2",
    ]);
    assert!(out.contains("dynamic"), "missing dynamic row in: {out}");
    assert!(out.contains("average"), "missing average row in: {out}");
    assert!(out.contains("median"), "missing median column in: {out}");
}

#[test]
fn bad_config_key_is_reported() {
    let dir = scratch("bad-config");
    let cfg = dir.join("bad.cfg");
    fs::write(&cfg, "learning_rate=0.1\n").unwrap();

    let out = bin()
        .args(["gradcheck", "--config", cfg.to_str().unwrap()])
        .output()
        .expect("failed to spawn mltsf");
    assert!(!out.status.success(), "bad config was accepted");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rate"), "unhelpful error: {stderr}");
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = scratch("missing-ckpt");
    let out = bin()
        .args([
            "eval", "--ckpt", dir.join("nope.ckpt").to_str().unwrap(),
            "--data-dir", dir.to_str().unwrap(),
        ])
        .output()
        .expect("failed to spawn mltsf");
    assert!(!out.status.success(), "missing checkpoint was accepted");
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
