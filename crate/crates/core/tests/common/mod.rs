#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn mediaite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mediaite"))
        .args(args)
        .env_remove("MEDIAITE_SEED")
        .output()
        .expect("spawn mediaite")
}

/// Run and require exit code 0.
pub fn ok(args: &[&str]) -> Output {
    let out = mediaite(args);
    assert!(
        out.status.success(),
        "mediaite {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// `synth → preprocess → aie → report` into `root`; returns the report
/// directory.
pub fn pipeline(root: &Path, seed: &str, threads: &str) -> PathBuf {
    let raw = root.join("raw");
    let pre = root.join("pre");
    let aie = root.join("aie.csv");
    let rep = root.join("report");
    ok(&["--threads", threads, "synth", "--preset", "benchmark", "--level", "2", "--seed", seed, "--n-mc", "20000", "--out", s(&raw)]);
    ok(&["--threads", threads, "preprocess", "--manifest", s(&raw.join("manifest.json")), "--out", s(&pre), "--seed", seed]);
    ok(&[
        "--threads", threads, "aie", "--manifest", s(&pre.join("manifest.json")), "--out", s(&aie),
        "--mode", "normal,adjusted,parametric", "--seed", seed,
    ]);
    ok(&["--threads", threads, "report", s(&aie), "--out", s(&rep)]);
    root.to_path_buf()
}

/// Every file under `dir`, relative path and bytes, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
