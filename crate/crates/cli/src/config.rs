//! Configuration file, environment overrides and defaults.
//!
//! The file is TOML; every key may be written flat with a dotted section
//! prefix (`provider.base_url = "..."`) or inside a `[provider]` table.
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use kgcqr::construction::BuildOptions;
use kgcqr::pipeline::PipelineParams;
use kgcqr::providers::ProviderConfig;
use serde::Deserialize;

use crate::UsageError;

/// Environment variable holding the provider API key.
pub const ENV_API_KEY: &str = "KGCQR_API_KEY";
/// Environment variable overriding `params.alpha`.
pub const ENV_ALPHA: &str = "KGCQR_ALPHA";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    provider: ProviderSection,
    #[serde(default)]
    params: PipelineParams,
    #[serde(default)]
    paths: PathsSection,
    #[serde(default)]
    server: ServerSection,
    #[serde(default)]
    mock: MockSection,
    #[serde(default)]
    chunk: ChunkSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProviderSection {
    base_url: Option<String>,
    model: Option<String>,
    embedding_model: Option<String>,
    api_key: Option<String>,
    timeout_secs: Option<f64>,
    max_retries: Option<u32>,
    retry_base_delay_ms: Option<u64>,
    embedding_dim: Option<usize>,
    embed_batch_size: Option<usize>,
    max_in_flight: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsSection {
    kg: Option<PathBuf>,
    corpus: Option<PathBuf>,
    doc_index: Option<PathBuf>,
    ttr_index: Option<PathBuf>,
    templates_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServerSection {
    bind_addr: Option<String>,
    port: Option<u16>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MockSection {
    rules: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChunkSection {
    max_chars: Option<usize>,
    overlap: Option<usize>,
}

/// Artifact locations. Unset entries must be supplied on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    /// Directory holding `triplets.jsonl`.
    pub kg: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub doc_index: Option<PathBuf>,
    pub ttr_index: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind_addr: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind_addr: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AppConfig {
    pub provider: ProviderConfig,
    pub params: PipelineParams,
    pub paths: Paths,
    pub server: ServerConfig,
    /// Rule table for the mock chat model.
    pub mock_rules: Option<PathBuf>,
    pub chunk: BuildOptions,
}

impl AppConfig {
    /// Reads `path` (or starts from defaults) and applies the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        Self::load_with_env(path, |k| std::env::var(k).ok())
    }

    pub fn load_with_env(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, UsageError> {
        let (text, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config file {}: {e}", p.display())))?;
                (text, p.parent().unwrap_or(Path::new("")).to_path_buf())
            }
            None => (String::new(), PathBuf::new()),
        };
        Self::parse(&text, &base, env)
            .map_err(|e| UsageError(format!("{}: {}", path.map_or("config".into(), |p| p.display().to_string()), e.0)))
    }

    /// Parses config text; relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, UsageError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| UsageError(e.to_string()))?;
        let d = ProviderConfig::default();
        let p = file.provider;
        let mut provider = ProviderConfig {
            base_url: p.base_url.unwrap_or(d.base_url),
            model: p.model.unwrap_or(d.model),
            embedding_model: p.embedding_model.or(d.embedding_model),
            api_key: p.api_key.filter(|k| !k.is_empty()),
            timeout: match p.timeout_secs {
                Some(s) if s.is_finite() && s > 0.0 => Duration::from_secs_f64(s),
                Some(s) => return Err(UsageError(format!("provider.timeout_secs must be positive, got {s}"))),
                None => d.timeout,
            },
            max_retries: p.max_retries.unwrap_or(d.max_retries),
            retry_base_delay: p.retry_base_delay_ms.map_or(d.retry_base_delay, Duration::from_millis),
            embedding_dim: p.embedding_dim.unwrap_or(d.embedding_dim),
            embed_batch_size: p.embed_batch_size.unwrap_or(d.embed_batch_size),
            max_in_flight: p.max_in_flight.unwrap_or(d.max_in_flight),
        };
        let mut params = file.params;

        if let Some(key) = env(ENV_API_KEY).filter(|k| !k.is_empty()) {
            provider.api_key = Some(key);
        }
        if let Some(raw) = env(ENV_ALPHA) {
            params.alpha = raw
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("{ENV_ALPHA}={raw:?} is not a number")))?;
        }

        provider.validate().map_err(|e| UsageError(e.to_string()))?;
        params.validate().map_err(|e| UsageError(e.to_string()))?;

        let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
        let chunk_defaults = BuildOptions::default();
        let sd = ServerConfig::default();
        Ok(Self {
            provider,
            params,
            paths: Paths {
                kg: resolve(file.paths.kg),
                corpus: resolve(file.paths.corpus),
                doc_index: resolve(file.paths.doc_index),
                ttr_index: resolve(file.paths.ttr_index),
                templates_dir: resolve(file.paths.templates_dir),
            },
            server: ServerConfig {
                bind_addr: file.server.bind_addr.unwrap_or(sd.bind_addr),
                port: file.server.port.unwrap_or(sd.port),
            },
            mock_rules: resolve(file.mock.rules),
            chunk: BuildOptions {
                max_chars: file.chunk.max_chars.unwrap_or(chunk_defaults.max_chars),
                overlap: file.chunk.overlap.unwrap_or(chunk_defaults.overlap),
            },
        })
    }

    /// Applies a command-line fusion weight, the highest-precedence source.
    pub fn set_alpha(&mut self, alpha: Option<f64>) -> Result<(), UsageError> {
        if let Some(a) = alpha {
            check_alpha(a)?;
            self.params.alpha = a;
        }
        Ok(())
    }
}

pub fn check_alpha(alpha: f64) -> Result<(), UsageError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(UsageError(format!("alpha must be within [0, 1], got {alpha}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults_without_file() {
        let cfg = AppConfig::parse("", Path::new(""), no_env).unwrap();
        assert_eq!(cfg.params, PipelineParams::default());
        assert_eq!(cfg.params.alpha, 0.7);
        assert_eq!(cfg.params.k_complete, 20);
        assert_eq!(cfg.params.beam_width, 3);
        assert_eq!(cfg.provider.max_in_flight, 8);
        assert_eq!(cfg.server, ServerConfig::default());
    }

    #[test]
    fn dotted_keys_and_tables_agree() {
        let flat = "provider.model = \"m\"\nparams.beam_width = 5\npaths.kg = \"kg\"\n";
        let table = "[provider]\nmodel = \"m\"\n[params]\nbeam_width = 5\n[paths]\nkg = \"kg\"\n";
        let a = AppConfig::parse(flat, Path::new("/etc/kgcqr"), no_env).unwrap();
        let b = AppConfig::parse(table, Path::new("/etc/kgcqr"), no_env).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.paths.kg.as_deref(), Some(Path::new("/etc/kgcqr/kg")));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(AppConfig::parse("params.beam = 3", Path::new(""), no_env).is_err());
        assert!(AppConfig::parse("params.alpha = 1.5", Path::new(""), no_env).is_err());
        assert!(AppConfig::parse("provider.max_retries = 11", Path::new(""), no_env).is_err());
        assert!(AppConfig::parse("params.k_complete = 0", Path::new(""), no_env).is_err());
    }

    #[test]
    fn precedence_flag_env_file_default() {
        let env = |k: &str| match k {
            ENV_ALPHA => Some("0.5".to_string()),
            ENV_API_KEY => Some("from-env".to_string()),
            _ => None,
        };
        let file = "params.alpha = 0.3\nprovider.api_key = \"from-file\"\n";

        let cfg = AppConfig::parse(file, Path::new(""), no_env).unwrap();
        assert_eq!(cfg.params.alpha, 0.3);
        assert_eq!(cfg.provider.api_key.as_deref(), Some("from-file"));

        let mut cfg = AppConfig::parse(file, Path::new(""), env).unwrap();
        assert_eq!(cfg.params.alpha, 0.5);
        assert_eq!(cfg.provider.api_key.as_deref(), Some("from-env"));

        cfg.set_alpha(Some(0.9)).unwrap();
        assert_eq!(cfg.params.alpha, 0.9);
        assert!(cfg.set_alpha(Some(1.5)).is_err());

        let bad = |k: &str| (k == ENV_ALPHA).then(|| "lots".to_string());
        assert!(AppConfig::parse("", Path::new(""), bad).is_err());
    }
}
