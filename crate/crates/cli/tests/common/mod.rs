#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use seqlayers::Sequence;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn seqlayers(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_seqlayers"))
        .args(args)
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// A shipped spec under `specs/` at the workspace root.
pub fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name)
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn read_sequence(path: &Path) -> Sequence {
    Sequence::from_bytes(&fs::read(path).unwrap()).unwrap()
}

/// Writes a manifest reading `input` and writing `output`, both relative
/// to `dir`.
pub fn manifest(dir: &Path, name: &str, input: &str, output: &str, extra: &str) -> PathBuf {
    write(
        dir,
        name,
        &format!("input = \"{input}\"\noutput = \"{output}\"\ntraining = false\n{extra}"),
    )
}

pub fn random_input(dir: &Path, name: &str, spec: &str, batch: usize, time: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    let out = seqlayers(&[
        "random-input",
        "--input-spec",
        spec,
        "--batch",
        &batch.to_string(),
        "--time",
        &time.to_string(),
        "--seed",
        &seed.to_string(),
        "--output",
        s(&path),
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    path
}
