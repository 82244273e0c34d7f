//! Config file support.
//!
//! A config file is a flat list of `key = "value"` lines (TOML syntax, no
//! tables); `#` starts a comment. Recognised keys:
//!
//! ```text
//! registry_url = "http://127.0.0.1:7000"
//! data_dir     = "data"
//! log_level    = "info"
//! listen       = ":7101"
//! format       = "binary-log"
//! seed_dir     = "fixtures/seed"
//! gateway_url  = "http://127.0.0.1:8080"
//! journal      = "data/registry/journal.jsonl"
//! wsdd         = "fixtures/i3.wsdd"
//! ```
//!
//! Command-line flags win over `I3_*` environment variables, which win over
//! the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub registry_url: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub log_level: Option<String>,
    pub listen: Option<String>,
    pub format: Option<String>,
    pub seed_dir: Option<PathBuf>,
    pub gateway_url: Option<String>,
    pub journal: Option<PathBuf>,
    pub wsdd: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: FileConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        // relative paths in a config file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.seed_dir, &mut cfg.journal, &mut cfg.wsdd]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("amis.toml");
        std::fs::write(&p, "# amis\nlisten = \":7101\"\ndata_dir = \"data\"\nformat = \"binlog\"\n").unwrap();
        let cfg = FileConfig::load(&p).unwrap();
        assert_eq!(cfg.listen.as_deref(), Some(":7101"));
        assert_eq!(cfg.data_dir, Some(dir.path().join("data")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.toml");
        std::fs::write(&p, "lisen = \":1\"\n").unwrap();
        assert!(matches!(FileConfig::load(&p), Err(ConfigError::Parse { .. })));
    }
}
