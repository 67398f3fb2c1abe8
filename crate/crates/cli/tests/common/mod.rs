#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skillprobe_cli::{Overrides, Resolved, RunConfig};

pub const BIN: &str = env!("CARGO_BIN_EXE_skillprobe");

/// A small synthetic setup; `extra` is appended to the TOML.
pub fn config_text(seed: u64, agent: &str, extra: &str) -> String {
    format!(
        r#"seed = {seed}
out_dir = "out"
[world.synthetic]
n_scenes = 2
n_nodes = 40
[corpus.synthetic]
n_trajectories = 8
[agent]
{agent}
[execution]
workers = 2
[report]
n_boot = 100
tf_experiment = false
{extra}
"#
    )
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn resolve(path: &Path, overrides: Overrides) -> Resolved {
    let mut cfg = RunConfig::load(path).unwrap();
    cfg.apply(&overrides);
    cfg.resolve().unwrap()
}

pub fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).env_remove("SKILLPROBE_OUT").output().expect("binary runs")
}

pub fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).map(|s| s.lines().filter(|l| !l.trim().is_empty()).count()).unwrap_or(0)
}
