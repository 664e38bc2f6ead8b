//! Settings shared across subcommands. A value comes from the command-line
//! flag when given, else the TOML config file, else a `GEOBENCH_*`
//! environment variable, else the built-in default.
//!
//! Config file keys (all optional):
//!
//! ```toml
//! seed = 7
//! parallelism = 4
//! backend = "oracle"
//! image_root = "images"
//! templates = "default"
//! radius_km = 5.0
//! per_city_cap = 1
//! sessions_dir = "sessions"
//! addr = "127.0.0.1:8080"
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{config, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub backend: Option<String>,
    pub image_root: Option<PathBuf>,
    pub templates: Option<String>,
    pub radius_km: Option<f64>,
    pub per_city_cap: Option<usize>,
    pub sessions_dir: Option<PathBuf>,
    pub addr: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => match std::env::var_os("GEOBENCH_CONFIG") {
                Some(p) => PathBuf::from(p),
                None => return Ok(FileConfig::default()),
            },
        };
        crate::error::require_file(&path)?;
        let text = std::fs::read_to_string(&path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
    }
}

fn env<T: FromStr>(key: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match std::env::var(key) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| config(format!("environment variable {key}: {e}"))),
        _ => Ok(None),
    }
}

/// Flag, then file, then `GEOBENCH_<KEY>`.
pub fn pick<T: FromStr>(flag: Option<T>, file: Option<T>, key: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    if file.is_some() {
        return Ok(file);
    }
    env(&format!("GEOBENCH_{}", key.to_ascii_uppercase()))
}
