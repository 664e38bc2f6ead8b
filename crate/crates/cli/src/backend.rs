//! Backend specifications.
//!
//! | spec | backend |
//! |---|---|
//! | `oracle` | answers with the bound ground truth |
//! | `constant[:TEXT]` | always replies `TEXT` |
//! | `first-candidate` | picks the first numbered candidate in HIER prompts |
//! | `scripted:FILE.json` | rule table, see `ScriptedBackend::from_json` |
//! | `noisy:KM@BEARING` | oracle labels, coordinate displaced by KM |
//! | `converging:KM@BEARING` | displacement halves with every model turn |
//! | `http:FILE.toml` | OpenAI-compatible chat endpoint |

use std::path::PathBuf;
use std::sync::Arc;

use geobench::model::http::{BackendConfig, HttpBackend};
use geobench::model::mock::{ConstantBackend, ConvergingBackend, NoisyOracleBackend, OracleBackend, ScriptedBackend, UNBOUND_REPLY};
use geobench::model::{ChatBackend, RateLimited, RetryPolicy};

use crate::error::{config, require_file, CliResult};

pub struct Resolved {
    pub backend: Arc<dyn ChatBackend>,
    pub retry: RetryPolicy,
    /// Files the backend was built from, for manifest hashing.
    pub inputs: Vec<PathBuf>,
}

fn offset(spec: &str, rest: &str) -> CliResult<(f64, f64)> {
    let (km, bearing) = rest.split_once('@').unwrap_or((rest, "0"));
    let km: f64 = km.parse().map_err(|_| config(format!("backend {spec:?}: bad distance {km:?}")))?;
    let bearing: f64 = bearing.parse().map_err(|_| config(format!("backend {spec:?}: bad bearing {bearing:?}")))?;
    if !(km.is_finite() && km >= 0.0 && bearing.is_finite()) {
        return Err(config(format!("backend {spec:?}: distance must be non-negative")));
    }
    Ok((km, bearing))
}

pub fn resolve(spec: &str) -> CliResult<Resolved> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mock = |b: Arc<dyn ChatBackend>| Resolved {
        backend: b,
        retry: RetryPolicy::none(),
        inputs: Vec::new(),
    };
    Ok(match kind {
        "oracle" if rest.is_empty() => mock(Arc::new(OracleBackend::new())),
        "constant" => mock(Arc::new(ConstantBackend::new(if rest.is_empty() { UNBOUND_REPLY } else { rest }))),
        "first-candidate" if rest.is_empty() => mock(Arc::new(ScriptedBackend::first_candidate())),
        "noisy" => {
            let (km, b) = offset(spec, rest)?;
            mock(Arc::new(NoisyOracleBackend::new(km, b)))
        }
        "converging" => {
            let (km, b) = offset(spec, rest)?;
            mock(Arc::new(ConvergingBackend::halving(km, b)))
        }
        "scripted" => {
            let path = PathBuf::from(rest);
            require_file(&path)?;
            let text = std::fs::read_to_string(&path).map_err(|e| config(format!("{}: {e}", path.display())))?;
            let b = ScriptedBackend::from_json(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
            let mut r = mock(Arc::new(b));
            r.inputs.push(path);
            r
        }
        "http" => {
            let path = PathBuf::from(rest);
            require_file(&path)?;
            let text = std::fs::read_to_string(&path).map_err(|e| config(format!("{}: {e}", path.display())))?;
            let cfg: BackendConfig = toml::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
            let retry = cfg.retry_policy();
            let rpm = cfg.requests_per_minute;
            let http = HttpBackend::new(cfg).map_err(|e| config(format!("{}: {e}", path.display())))?;
            let backend: Arc<dyn ChatBackend> = match rpm {
                Some(n) if n > 0 => Arc::new(RateLimited::new(http, n)),
                _ => Arc::new(http),
            };
            Resolved {
                backend,
                retry,
                inputs: vec![path],
            }
        }
        _ => return Err(config(format!("unknown backend spec {spec:?}"))),
    })
}
