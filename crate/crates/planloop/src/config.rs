//! The JSON configuration file. Command-line flags override its values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::http::HttpSettings;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Endpoint used by every module without its own entry.
    pub http: HttpSettings,
    pub planner: Option<HttpSettings>,
    pub eo: Option<HttpSettings>,
    pub executor: Option<HttpSettings>,
    pub p_fail: Option<f64>,
    pub timeout_factor: Option<f64>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: p.clone(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigFileError::Json { path: p, source })
    }

    /// The defaults when no file is given.
    pub fn load_optional(path: Option<&Path>) -> Result<Self, ConfigFileError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Settings for one module: its own entry, else the shared one, with
    /// environment variables filling the gaps.
    pub fn role(&self, role: Option<&HttpSettings>) -> HttpSettings {
        role.unwrap_or(&self.http).clone().with_env()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_take_defaults() {
        let c: FileConfig = serde_json::from_str(r#"{"http": {"model": "m"}, "p_fail": 0.2}"#).unwrap();
        assert_eq!(c.http.model.as_deref(), Some("m"));
        assert_eq!(c.http.path, "/v1/chat/completions");
        assert_eq!(c.p_fail, Some(0.2));
        assert!(serde_json::from_str::<FileConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
