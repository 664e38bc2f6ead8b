//! Run manifests: the resolved job, tool versions, and SHA-256 hashes of
//! every input and output file. No timestamps, so identical runs write
//! identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use geobench::seed::sha256_hex;

use crate::error::{config, runtime, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub toolkit_version: String,
    pub parser_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// The resolved subcommand arguments.
    pub job: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) to hash.
    pub outputs: BTreeMap<String, String>,
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn hash_inputs(paths: &[PathBuf]) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        if p.is_file() {
            out.insert(p.display().to_string(), hash_file(p)?);
        }
    }
    Ok(out)
}

/// Hashes every regular file under `dir` except the manifest itself.
pub fn hash_outputs(dir: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| runtime(format!("{}: {e}", d.display())))?;
        for e in entries {
            let p = e.map_err(|e| runtime(e.to_string()))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
                let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
                out.insert(rel, hash_file(&p)?);
            }
        }
    }
    Ok(out)
}

impl Manifest {
    pub fn new<J: Serialize>(command: &str, seed: Option<u64>, job: &J, inputs: &[PathBuf]) -> CliResult<Self> {
        Ok(Manifest {
            command: command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            parser_version: geobench::parser::PARSER_VERSION.to_string(),
            seed,
            job: serde_json::to_value(job).expect("serializable job"),
            inputs: hash_inputs(inputs)?,
            outputs: BTreeMap::new(),
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("serializable manifest") + "\n";
        std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        crate::error::require_file(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
    }
}
