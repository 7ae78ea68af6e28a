//! Run manifests: every output directory records the tool version, the
//! resolved flags, input digests, and derived seeds, so a run can be
//! reproduced from the manifest alone.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use riskfactor_core::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub subcommand: String,
    pub flags: BTreeMap<String, String>,
    pub input_digests: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub duration_ms: u64,
    pub complete: bool,
}

impl Manifest {
    pub fn new(subcommand: &str, flags: BTreeMap<String, String>) -> Manifest {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            flags,
            input_digests: BTreeMap::new(),
            seeds: BTreeMap::new(),
            duration_ms: 0,
            complete: false,
        }
    }

    /// Records the SHA-256 of an input file, keyed by its last two path
    /// components so the key is stable across working directories.
    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::open(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 65536];
        loop {
            let n = file.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        let digest = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>();
        self.input_digests.insert(short_key(path), digest);
        Ok(())
    }

    pub fn add_seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    /// Writes the manifest into `dir`, marked incomplete until
    /// [`Manifest::finish`] rewrites it.
    pub fn write_incomplete(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.write(dir)
    }

    /// Stamps the duration, marks the run complete, and rewrites.
    pub fn finish(&mut self, dir: impl AsRef<Path>, started: Instant) -> Result<()> {
        self.duration_ms = started.elapsed().as_millis() as u64;
        self.complete = true;
        self.write(dir)
    }

    fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Container(format!("manifest serialization: {e}")))?;
        std::fs::write(dir.as_ref().join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Container(format!("manifest {}: {e}", path.display())))
}

/// The last two components of a path, e.g. `training/matrix.csr`.
fn short_key(path: &Path) -> String {
    let components: Vec<String> = path
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    match components.as_slice() {
        [] => String::new(),
        [one] => one.clone(),
        [.., a, b] => format!("{a}/{b}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_digests() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("events.tsv");
        std::fs::write(&input, "p1\tc1\t3\n").unwrap();
        let started = Instant::now();
        let mut flags = BTreeMap::new();
        flags.insert("k".to_string(), "9".to_string());
        let mut m = Manifest::new("ingest", flags);
        m.add_input(&input).unwrap();
        m.add_seed("split", 42);
        m.write_incomplete(dir.path()).unwrap();
        let partial = read_manifest(dir.path()).unwrap();
        assert!(!partial.complete);
        m.finish(dir.path(), started).unwrap();
        let done = read_manifest(dir.path()).unwrap();
        assert!(done.complete);
        assert_eq!(done.subcommand, "ingest");
        assert_eq!(done.flags["k"], "9");
        assert_eq!(done.seeds["split"], 42);
        let key = done.input_digests.keys().next().unwrap();
        assert!(key.ends_with("events.tsv"));
        assert_eq!(done.input_digests[key].len(), 64);
    }

    #[test]
    fn digest_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.tsv");
        let b = dir.path().join("b.tsv");
        std::fs::write(&a, "same\n").unwrap();
        std::fs::write(&b, "same\n").unwrap();
        let mut m = Manifest::new("x", BTreeMap::new());
        m.add_input(&a).unwrap();
        m.add_input(&b).unwrap();
        let digests: Vec<&String> = m.input_digests.values().collect();
        assert_eq!(digests[0], digests[1]);
    }
}
