#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub const BIN: &str = env!("CARGO_BIN_EXE_driftlab");

pub fn one_asset() -> Value {
    json!({
        "model": {
            "d": 1, "kappa": [[1.0]], "mu_bar": [0.05], "sigma_mu": [[0.1]], "sigma_r": [[0.2]],
            "gamma": [[0.02]], "lambda": 1.0, "theta": 0.5, "horizon": 1.0,
            "m0": [0.05], "q0": [[0.005]], "x0": 1.0
        },
        "mc": {"n_paths": 200, "dt": 0.01, "seed": 5, "n_bundles": 2},
        "grid": {"n_m": 41, "n_q": 11, "n_t": 6, "min_substeps": 1}
    })
}

pub fn two_asset() -> Value {
    json!({
        "model": {
            "d": 2, "kappa": [[1.0, 0.0], [0.2, 0.8]], "mu_bar": [0.05, 0.03],
            "sigma_mu": [[0.1, 0.0], [0.02, 0.08]], "sigma_r": [[0.2, 0.0], [0.05, 0.25]],
            "gamma": [[0.02, 0.005], [0.005, 0.03]], "lambda": 2.0, "theta": -1.0, "horizon": 1.0,
            "m0": [0.05, 0.03], "q0": [[0.005, 0.0], [0.0, 0.004]], "x0": 1.0
        },
        "mc": {"n_paths": 100, "dt": 0.01, "seed": 3, "n_bundles": 1}
    })
}

/// Write `config` into `dir` and run `cmd` with it and `extra` flags.
pub fn run(dir: &Path, cmd: &str, config: &Value, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{cmd}_config.json"));
    std::fs::write(&cfg, serde_json::to_string_pretty(config).unwrap()).unwrap();
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .args(extra)
        .output()
        .expect("binary runs")
}

pub fn run_to(dir: &Path, out: &Path, cmd: &str, config: &Value) -> Output {
    run(dir, cmd, config, &["--out", out.to_str().unwrap(), "--workers", "1"])
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Sorted file names in a directory.
pub fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

/// File contents with the ledger's wall-clock column blanked.
pub fn comparable(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    if path.file_name().is_some_and(|n| n == "ledger.csv") {
        let text = String::from_utf8(bytes).unwrap();
        return text
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string() + "\n")
            .collect::<String>()
            .into_bytes();
    }
    bytes
}
