//! Run manifests.
//!
//! The hash covers the tool version, the command, the source configuration,
//! the resolved parameters and the SHA-256 of every input file. Paths,
//! thread count and timing are recorded but not hashed, so the same run
//! reproduces the same hash from any directory on any machine.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use superbunch_core::SourceConfig;

use crate::failure::{Context, Outcome, IO};

pub const TOOL: &str = "superbunch";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub hash: String,
    pub config: Option<SourceConfig>,
    pub parameters: Value,
    pub inputs: Vec<FileDigest>,
    /// Input directory or file as given on the command line.
    pub input: Option<PathBuf>,
    /// Output directory (or file, for `fit`).
    pub out: PathBuf,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub threads: usize,
    pub created_unix_s: u64,
    pub elapsed_s: f64,
}

pub fn sha256_file(path: &Path) -> Outcome<String> {
    let bytes = fs::read(path).code(IO, &format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest(path: &Path) -> Outcome<FileDigest> {
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
    })
}

/// Manifest under construction; the hash is fixed before any output is written.
pub struct Draft {
    command: String,
    hash: String,
    config: Option<SourceConfig>,
    parameters: Value,
    inputs: Vec<FileDigest>,
    input: Option<PathBuf>,
    out: PathBuf,
    threads: usize,
    started: Instant,
}

impl Draft {
    pub fn new(
        command: &str,
        config: Option<&SourceConfig>,
        parameters: Value,
        inputs: Vec<FileDigest>,
        input: Option<&Path>,
        out: &Path,
        threads: usize,
    ) -> Self {
        let hash = run_hash(command, config, &parameters, &inputs);
        Draft {
            command: command.to_string(),
            hash,
            config: config.cloned(),
            parameters,
            inputs,
            input: input.map(Path::to_path_buf),
            out: out.to_path_buf(),
            threads,
            started: Instant::now(),
        }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Records the outputs (relative to `base`) and writes the manifest to `path`.
    pub fn finish(self, base: &Path, outputs: &[PathBuf], path: &Path) -> Outcome<Manifest> {
        let outputs = outputs
            .iter()
            .map(|rel| {
                Ok(FileDigest {
                    path: rel.clone(),
                    sha256: sha256_file(&base.join(rel))?,
                })
            })
            .collect::<Outcome<Vec<_>>>()?;
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let manifest = Manifest {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            command: self.command,
            hash: self.hash,
            config: self.config,
            parameters: self.parameters,
            inputs: self.inputs,
            input: self.input,
            out: self.out,
            outputs,
            threads: self.threads,
            created_unix_s: created,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(path, text + "\n").code(IO, &format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

pub fn run_hash(command: &str, config: Option<&SourceConfig>, parameters: &Value, inputs: &[FileDigest]) -> String {
    let digests: Vec<&str> = inputs.iter().map(|d| d.sha256.as_str()).collect();
    let payload = json!({
        "tool": TOOL,
        "version": VERSION,
        "command": command,
        "config": config,
        "parameters": parameters,
        "inputs": digests,
    });
    hex::encode(Sha256::digest(payload.to_string().as_bytes()))
}

pub fn read(path: &Path) -> Outcome<Manifest> {
    let text = fs::read_to_string(path).code(IO, &format!("reading {}", path.display()))?;
    serde_json::from_str(&text).code(crate::failure::VALIDATION, &format!("parsing manifest {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_paths_but_not_contents() {
        let a = FileDigest { path: "/x/ch1.pstr".into(), sha256: "ab".into() };
        let b = FileDigest { path: "/y/ch1.pstr".into(), sha256: "ab".into() };
        let c = FileDigest { path: "/x/ch1.pstr".into(), sha256: "cd".into() };
        let p = json!({"bin_width_ps": 10});
        assert_eq!(run_hash("analyze", None, &p, &[a.clone()]), run_hash("analyze", None, &p, &[b]));
        assert_ne!(run_hash("analyze", None, &p, &[a]), run_hash("analyze", None, &p, &[c]));
    }

    #[test]
    fn hash_depends_on_seed() {
        let mut cfg = SourceConfig::default_two_stage();
        let h1 = run_hash("simulate", Some(&cfg), &json!({}), &[]);
        cfg.seed += 1;
        assert_ne!(h1, run_hash("simulate", Some(&cfg), &json!({}), &[]));
    }
}
