use std::path::Path;
use std::process::{Command, Output};

fn cfgdp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfgdp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .env_remove("CFGDP_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfgdp(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gen-data"));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cfgdp(&["fly"], dir.path()).status.code(), Some(2));
}

#[test]
fn unknown_variant_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfgdp(&["eval", "--variant", "CFG_DP,FAST"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("FAST"), "{err}");
    assert!(err.contains("CFG_DP, NO_CFG, NO_STEP, DP_BASELINE"), "{err}");
}

#[test]
fn zero_rollouts_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfgdp(&["eval", "--n", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eval.n"));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"grad_stepz": 5}}"#).unwrap();
    let o = cfgdp(&["gen-data", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grad_stepz"));
}

#[test]
fn train_without_dataset_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfgdp(&["train", "--profile", "smoke"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset.cfgdp"), "{}", stderr(&o));
}

#[test]
fn eval_without_checkpoints_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        cfgdp(&["gen-data", "--profile", "smoke", "--n", "4"], dir.path()).status.code(),
        Some(0)
    );
    let o = cfgdp(&["eval", "--profile", "smoke"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest"), "{}", stderr(&o));
}

#[test]
fn gen_data_writes_dataset_and_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfgdp(&["gen-data", "--profile", "smoke", "--n", "6", "--seed", "9"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("dataset.cfgdp").exists());
    let text = std::fs::read_to_string(dir.path().join("effective_config.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["data"]["n_demos"], 6);
    assert!(String::from_utf8_lossy(&o.stdout).contains("demos 6"));
}

#[test]
fn output_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cfgdp"))
        .args(["gen-data", "--profile", "smoke", "--n", "3"])
        .env("CFGDP_OUT", dir.path())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("dataset.cfgdp").exists());
}
