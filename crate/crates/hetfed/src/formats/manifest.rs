//! Run manifest: reproducibility record written atomically at run end.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::write_atomic;

const MAGIC: &str = "HETFED-RUN v1";

/// What a finished (or aborted) run looked like.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    /// SHA-256 over the raw config file bytes.
    pub config_sha256: String,
    /// Effective root seed (after any CLI override).
    pub seed: u64,
    /// Simulator version that produced the outputs.
    pub artifact_version: String,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// `completed` or `aborted: <reason>`.
    pub status: String,
    /// Wall-clock duration; excluded from reproducibility comparisons.
    pub wall_clock_ms: u128,
}

pub fn config_hash(config_bytes: &[u8]) -> String {
    let digest = Sha256::digest(config_bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

pub fn format_manifest(m: &RunManifest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "status {}", m.status);
    let _ = writeln!(out, "config_sha256 {}", m.config_sha256);
    let _ = writeln!(out, "seed {}", m.seed);
    let _ = writeln!(out, "artifact_version {}", m.artifact_version);
    let _ = writeln!(out, "outputs {}", m.outputs.join(","));
    let _ = writeln!(out, "wall_clock_ms {}", m.wall_clock_ms);
    out
}

pub fn write_manifest(m: &RunManifest, path: &Path) -> io::Result<()> {
    write_atomic(path, &format_manifest(m))
}

/// Parse a manifest; used to re-verify the config hash.
pub fn parse_manifest(text: &str) -> Option<RunManifest> {
    let mut lines = text.lines();
    if lines.next()? != MAGIC {
        return None;
    }
    let mut status = None;
    let mut sha = None;
    let mut seed = None;
    let mut version = None;
    let mut outputs = Vec::new();
    let mut wall = 0u128;
    for line in lines {
        let (key, value) = line.split_once(' ')?;
        match key {
            "status" => status = Some(value.to_string()),
            "config_sha256" => sha = Some(value.to_string()),
            "seed" => seed = value.parse().ok(),
            "artifact_version" => version = Some(value.to_string()),
            "outputs" => {
                outputs = value.split(',').filter(|s| !s.is_empty()).map(String::from).collect();
            }
            "wall_clock_ms" => wall = value.parse().ok()?,
            _ => return None,
        }
    }
    Some(RunManifest {
        config_sha256: sha?,
        seed: seed?,
        artifact_version: version?,
        outputs,
        status: status?,
        wall_clock_ms: wall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_hex() {
        let h = config_hash(b"version = 1\n");
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(b"version = 1\n"));
        assert_ne!(h, config_hash(b"version = 2\n"));
    }

    #[test]
    fn manifest_round_trip() {
        let m = RunManifest {
            config_sha256: config_hash(b"x"),
            seed: 7,
            artifact_version: "0.1.0".into(),
            outputs: vec!["metrics.csv".into()],
            status: "completed".into(),
            wall_clock_ms: 1234,
        };
        let parsed = parse_manifest(&format_manifest(&m)).unwrap();
        assert_eq!(parsed, m);
    }
}
