//! Run manifests: every command writes a `<output>.manifest.json` sidecar
//! recording the exact invocation, input digests, seed, and tool version, so
//! any artifact can be re-derived.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    /// The argv of the invocation, verbatim.
    pub command: Vec<String>,
    /// Input path -> sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    /// Parsed parameter echo of the subcommand.
    pub parameters: serde_json::Value,
}

pub fn sha256_hex(path: &Path) -> anyhow::Result<String> {
    let mut file =
        File::open(path).with_context(|| format!("open {} for digest", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("sha256:{:x}", hasher.finalize()))
}

/// Writes the manifest next to `primary_output` as
/// `<primary_output>.manifest.json` and returns its path.
pub fn write_manifest(
    primary_output: &Path,
    inputs: &[&Path],
    outputs: &[&Path],
    seed: Option<u64>,
    parameters: serde_json::Value,
) -> anyhow::Result<PathBuf> {
    let mut digests = BTreeMap::new();
    for input in inputs {
        digests.insert(input.display().to_string(), sha256_hex(input)?);
    }
    let manifest = RunManifest {
        tool: "iohmm",
        version: env!("CARGO_PKG_VERSION"),
        command: std::env::args().collect(),
        inputs: digests,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        seed,
        parameters,
    };
    let path = PathBuf::from(format!("{}.manifest.json", primary_output.display()));
    let mut file = File::create(&path)
        .with_context(|| format!("create manifest {}", path.display()))?;
    serde_json::to_writer_pretty(&mut file, &manifest)?;
    writeln!(file)?;
    Ok(path)
}
