//! Helpers shared by the binary-level test suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_riskfactor"))
}

/// Runs the binary in `dir` and panics (with captured stderr) on failure.
pub fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let output = bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn riskfactor");
    assert!(
        output.status.success(),
        "riskfactor {:?} failed with {:?}\nstderr: {}",
        args,
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

/// Runs the binary expecting failure; returns (exit code, stderr).
pub fn run_err(dir: &Path, args: &[&str]) -> (i32, String) {
    let output = bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn riskfactor");
    assert!(
        !output.status.success(),
        "riskfactor {args:?} unexpectedly succeeded"
    );
    (
        output.status.code().expect("exit code"),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

/// Collects every file under `root` keyed by its relative path.
pub fn walk(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn visit(dir: &Path, root: &Path, into: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("read_dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                visit(&path, root, into);
            } else {
                let rel = path.strip_prefix(root).expect("relative path").to_path_buf();
                into.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    let mut files = BTreeMap::new();
    visit(root, root, &mut files);
    files
}

/// Parses a manifest and drops its only volatile field.
pub fn manifest_without_duration(bytes: &[u8]) -> serde_json::Value {
    let mut value: serde_json::Value = serde_json::from_slice(bytes).expect("manifest JSON");
    value
        .as_object_mut()
        .expect("manifest object")
        .remove("duration_ms");
    value
}

/// Asserts two artifact trees are identical: data files byte-for-byte,
/// manifests up to their recorded wall time. Paths listed in
/// `only_in_left` may exist solely on the left side.
pub fn assert_trees_match(left: &Path, right: &Path, only_in_left: &[&str]) {
    let a = walk(left);
    let b = walk(right);
    for (rel, bytes_b) in &b {
        let Some(bytes_a) = a.get(rel) else {
            panic!("{} missing from {}", rel.display(), left.display());
        };
        if rel.file_name().is_some_and(|n| n == "manifest.json") {
            assert_eq!(
                manifest_without_duration(bytes_a),
                manifest_without_duration(bytes_b),
                "manifest {} differs beyond timing",
                rel.display()
            );
        } else {
            assert_eq!(bytes_a, bytes_b, "artifact {} differs", rel.display());
        }
    }
    let extra: Vec<&PathBuf> = a.keys().filter(|rel| !b.contains_key(*rel)).collect();
    for rel in &extra {
        assert!(
            only_in_left.iter().any(|allowed| Path::new(allowed) == rel.as_path()),
            "unexpected extra artifact {} in {}",
            rel.display(),
            left.display()
        );
    }
}
