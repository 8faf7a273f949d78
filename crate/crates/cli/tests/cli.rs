use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdectrl_core::dataset::Dataset;

const TINY: &str = r#"
benchmark = "hyperbolic"
seed = 3

[dataset]
n_coeffs = 2
n_inits = 2

[deeponet]
latent_dim = 8
branch_hidden = [16]
trunk_hidden = [8]
epochs = 2
batch_size = 32

[sac]
total_steps = 40
warmup = 16
batch_size = 8
actor_hidden = [8]
critic_hidden = [8]

[eval]
u0 = [9.0]
"#;

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p
}

fn pdectrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdectrl"))
        .args(args)
        .env_remove("PDECTRL_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pdectrl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn dry_run_reports_plan_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "benchmark = \"hyperbolic\"\n").unwrap();
    let out_dir = dir.path().join("out");
    let text = ok(&["gen-data", "--config", s(&cfg), "--out", s(&out_dir), "--dry-run"]);
    assert!(
        text.contains("6000 rollouts") && text.contains("600000 samples"),
        "{text}"
    );
    assert!(!out_dir.exists());
}

#[test]
fn reversed_gamma_range_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    std::fs::write(
        &cfg,
        TINY.replace("n_inits = 2", "n_inits = 2\ngamma_range = [7.0, 5.5]"),
    )
    .unwrap();
    let out = pdectrl(&["gen-data", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn bad_thread_setting_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = Command::new(env!("CARGO_BIN_EXE_pdectrl"))
        .args(["gen-data", "--config", s(&cfg), "--out", s(dir.path())])
        .env("PDECTRL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_subcommand_and_missing_config_are_usage_errors() {
    assert_eq!(code(&pdectrl(&["bogus"])), 2);
    assert_eq!(code(&pdectrl(&["gen-data"])), 2);
    assert_eq!(code(&pdectrl(&["gen-data", "--config", "/no/such/file.toml"])), 2);
}

#[test]
fn gen_data_is_byte_reproducible_and_split_ninety_ten() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&b)]);
    for f in ["train.pdds", "test.pdds", "generation_report.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let train = Dataset::read(a.join("train.pdds")).unwrap();
    let test = Dataset::read(a.join("test.pdds")).unwrap();
    assert_eq!((train.len(), test.len()), (360, 40));
    let c = ok(&[
        "gen-data",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("c")),
        "--seed",
        "4",
    ]);
    assert!(c.contains("400 samples"));
    assert_ne!(read(a.join("train.pdds")), read(dir.path().join("c/train.pdds")));
}

#[test]
fn train_deeponet_needs_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = pdectrl(&["train-deeponet", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.pdds"));
}

#[test]
fn zero_epochs_reports_the_initial_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    std::fs::write(&cfg, TINY.replace("epochs = 2", "epochs = 0")).unwrap();
    let out = dir.path().join("o");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    let text = ok(&["train-deeponet", "--config", s(&cfg), "--out", s(&out)]);
    let rest = text.trim().strip_prefix("held-out relative L2 error ").unwrap();
    let (fin, init) = rest.split_once(" (initial ").unwrap();
    assert_eq!(format!("{fin})"), init, "{text}");
    assert!(out.join("deeponet.nncp").exists());
}

#[test]
fn full_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
        ok(&["train-deeponet", "--config", s(&cfg), "--out", s(&out)]);
        for v in ["sac", "nosac", "nosac_training"] {
            ok(&["train-rl", "--config", s(&cfg), "--out", s(&out), "--variant", v]);
        }
        ok(&["evaluate", "--config", s(&cfg), "--out", s(&out)]);
        ok(&[
            "simulate-backstepping",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--controller",
            "both",
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let mut files: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert!(files.len() >= 18, "{files:?}");
    for f in &files {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f:?}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&read(a.join("eval_summary.json"))).unwrap();
    let entries = summary.as_array().unwrap();
    assert_eq!(entries.len(), 4);
    for e in entries {
        assert!(e["overshoot"].as_f64().unwrap().is_finite());
        assert!(e["total_effort"].as_f64().unwrap().is_finite());
    }
    let metrics = String::from_utf8(read(a.join("sac_seed3_metrics.csv"))).unwrap();
    assert!(metrics.starts_with("# variant=sac\n# benchmark=hyperbolic\n# discount=0.99\n"));
    assert_eq!(metrics.lines().filter(|l| !l.starts_with('#')).count(), 41);
}

#[test]
fn nosac_training_without_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "\n[paths]\ndeeponet_checkpoint = \"missing.nncp\"\n");
    let out = pdectrl(&["train-rl", "--config", s(&cfg), "--variant", "nosac_training"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.nncp"));
}

#[test]
fn unknown_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert_eq!(
        code(&pdectrl(&["train-rl", "--config", s(&cfg), "--variant", "ppo"])),
        2
    );
}

#[test]
fn evaluate_without_agents_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = pdectrl(&["evaluate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("agent checkpoint"));
}

#[test]
fn explicit_training_gamma_matches_nominal_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let nominal = dir.path().join("n");
    for v in ["sac", "nosac"] {
        ok(&["train-rl", "--config", s(&cfg), "--out", s(&nominal), "--variant", v]);
    }
    // nosac_training needs a pretrained model; a zero-epoch one is enough.
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&nominal)]);
    ok(&["train-deeponet", "--config", s(&cfg), "--out", s(&nominal)]);
    ok(&[
        "train-rl",
        "--config",
        s(&cfg),
        "--out",
        s(&nominal),
        "--variant",
        "nosac_training",
    ]);
    ok(&["evaluate", "--config", s(&cfg), "--out", s(&nominal)]);
    let explicit_cfg = dir.path().join("explicit.toml");
    std::fs::write(
        &explicit_cfg,
        TINY.replace("u0 = [9.0]", "u0 = [9.0]\ngamma_eval = [5.5]")
            + &format!("\n[paths]\nagent_dir = \"{}\"\n", nominal.display()),
    )
    .unwrap();
    let explicit = dir.path().join("e");
    ok(&["evaluate", "--config", s(&explicit_cfg), "--out", s(&explicit)]);
    assert_eq!(
        read(nominal.join("eval_summary.json")),
        read(explicit.join("eval_summary.json"))
    );
}

#[test]
fn zero_initial_state_gives_zero_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    std::fs::write(&cfg, TINY.replace("u0 = [9.0]", "u0 = [0.0]")).unwrap();
    ok(&["simulate-backstepping", "--config", s(&cfg), "--out", s(dir.path())]);
    let csv = String::from_utf8(read(dir.path().join("simulate_u0_backstepping.csv"))).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!((cols[1], cols[2]), (0.0, 0.0), "{line}");
    }
}

#[test]
fn deeponet_simulation_without_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = pdectrl(&[
        "simulate-backstepping",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "--controller",
        "deeponet",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn dump_kernel_writes_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let k = dir.path().join("kernel.pdds");
    ok(&[
        "simulate-backstepping",
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "--dump-kernel",
        s(&k),
    ]);
    let table = Dataset::read(&k).unwrap();
    assert_eq!(table.len(), 101);
    assert_eq!(table.sample(100).target, 1.0);
    assert!(table.sample(0).state[1..].iter().all(|&v| v == 0.0));
}
