//! Service configuration: a JSON file plus `LL_*` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use lineup_core::evolve::SearchConfig;
use lineup_core::turing::TuringConfig;

use crate::error::{Result, ServiceError};

pub const ENV_CONFIG: &str = "LL_CONFIG";
pub const ENV_DATA_DIR: &str = "LL_DATA_DIR";
pub const ENV_BIND: &str = "LL_BIND";

/// Search parameters plus the instruction shown above each lineup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSessionConfig {
    #[serde(flatten)]
    pub search: SearchConfig,
    pub prompt: String,
}

impl Default for SearchSessionConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::default(),
            prompt: "Rank the portraits by how much they resemble the person you are looking for.".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Eigenface model file; search sessions and the model generator need it.
    pub model_path: Option<PathBuf>,
    /// Directory of aligned PNG portraits used as the real pool and the
    /// bootstrap control in 2AFC sessions.
    pub corpus_dir: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub bind: String,
    /// Side of the portraits rendered for lineups.
    pub lineup_side: usize,
    /// Events between snapshots of a session.
    pub snapshot_every: u64,
    pub search: SearchSessionConfig,
    pub turing: TuringConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            model_path: None,
            corpus_dir: None,
            data_dir: PathBuf::from("data"),
            bind: "127.0.0.1:8080".into(),
            lineup_side: 64,
            snapshot_every: 64,
            search: SearchSessionConfig::default(),
            turing: TuringConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| ServiceError::Invalid(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file named by `explicit`, else by `LL_CONFIG`, else starts
    /// from defaults; then applies `LL_DATA_DIR` and `LL_BIND`.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        Self::load_with(explicit, |k| std::env::var(k).ok())
    }

    pub fn load_with(explicit: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let path = explicit.map(Path::to_path_buf).or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => Self::from_file(&p)?,
            None => Self::default(),
        };
        if let Some(dir) = env(ENV_DATA_DIR) {
            cfg.data_dir = PathBuf::from(dir);
        }
        if let Some(bind) = env(ENV_BIND) {
            cfg.bind = bind;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lineup_side == 0 {
            return Err(ServiceError::Invalid("lineup_side must be positive".into()));
        }
        if self.snapshot_every == 0 {
            return Err(ServiceError::Invalid("snapshot_every must be positive".into()));
        }
        self.turing.ladder()?;
        Ok(())
    }
}

/// Overlays the keys of `overrides` on the JSON form of `base`. Keys that
/// `base` does not have are rejected.
pub fn merge_config<T>(base: &T, overrides: Option<&Value>) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut merged = serde_json::to_value(base)?;
    if let Some(over) = overrides.filter(|v| !v.is_null()) {
        let over = over
            .as_object()
            .ok_or_else(|| ServiceError::Invalid("config must be a JSON object".into()))?;
        let target = merged
            .as_object_mut()
            .ok_or_else(|| ServiceError::Internal("config defaults are not an object".into()))?;
        for (k, v) in over {
            match target.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => return Err(ServiceError::Invalid(format!("unknown config key {k:?}"))),
            }
        }
    }
    Ok(serde_json::from_value(merged)?)
}
