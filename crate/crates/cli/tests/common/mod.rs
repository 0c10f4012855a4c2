#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_apportion"));
    c.env_remove("APPORTION_SEED");
    c
}

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn apportion")
}

/// Relative path → contents for every file under `dir`.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Names of files that differ between two trees (missing on either side
/// counts as differing).
pub fn tree_diff(a: &Path, b: &Path) -> Vec<String> {
    let (ta, tb) = (tree(a), tree(b));
    let mut names: Vec<&String> = ta.keys().chain(tb.keys()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .filter(|k| ta.get(*k) != tb.get(*k))
        .cloned()
        .collect()
}

pub fn copy_tree(from: &Path, to: &Path) {
    if to.exists() {
        std::fs::remove_dir_all(to).unwrap();
    }
    for (rel, bytes) in tree(from) {
        let dest = to.join(rel);
        std::fs::create_dir_all(dest.parent().unwrap()).unwrap();
        std::fs::write(dest, bytes).unwrap();
    }
}

/// Runs `simulate` and `run` on the golden fixture into `work`, returning
/// the two output directories. With `UPDATE_GOLDEN=1` the frozen copies are
/// replaced by the fresh outputs.
pub fn golden_run(work: &Path) -> (PathBuf, PathBuf) {
    let cfg = fixture_dir().join("config.toml");
    let cfg = cfg.to_str().unwrap();
    let sim = work.join("simulate");
    let full = work.join("run");
    for (cmd, out) in [("simulate", &sim), ("run", &full)] {
        let o = run(&[cmd, "--config", cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    if std::env::var("UPDATE_GOLDEN").as_deref() == Ok("1") {
        copy_tree(&sim, &fixture_dir().join("expected/simulate"));
        copy_tree(&full, &fixture_dir().join("expected/run"));
    }
    (sim, full)
}
