#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tablegraph_cli::manifest::{RunManifest, MANIFEST_FILE};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn ok(&self) -> &Self {
        assert_eq!(self.code, 0, "stderr:\n{}", self.stderr);
        self
    }
}

/// Runs the built binary to completion.
pub fn tablegraph<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_tablegraph"))
        .args(args)
        .output()
        .expect("spawning tablegraph");
    Run {
        code: out.status.code().expect("terminated by signal"),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

pub fn manifest(out: &Path) -> RunManifest {
    RunManifest::read(&out.join(MANIFEST_FILE)).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Runs `synth` with `config` into `dir/name` and returns the dataset path.
pub fn synth(dir: &Path, name: &str, config: &str) -> PathBuf {
    let cfg = write_file(dir, &format!("{name}.toml"), config);
    let out = dir.join(name);
    tablegraph(&["synth", "--config", p(&cfg), "--out", p(&out)]).ok();
    out.join("dataset.jsonl")
}
