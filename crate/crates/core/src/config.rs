//! Whole-service configuration, loadable from one TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::feed::FeedConfig;
use crate::rec::RecConfig;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AppConfig {
    /// Directory holding the embedded database.
    pub store_dir: PathBuf,
    pub ingest: IngestSection,
    pub classify: ClassifySection,
    pub rec: RecConfig,
    pub feed: FeedConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSection {
    pub queue_capacity: usize,
    pub worker_count: usize,
    pub resume_checkpoint_path: Option<PathBuf>,
    pub dead_letter_path: Option<PathBuf>,
    pub write_retry_limit: u32,
}

impl Default for IngestSection {
    fn default() -> Self {
        let d = crate::ingest::IngestConfig::default();
        IngestSection {
            queue_capacity: d.queue_capacity,
            worker_count: d.worker_count,
            resume_checkpoint_path: d.resume_checkpoint_path,
            dead_letter_path: d.dead_letter_path,
            write_retry_limit: d.write_retry_limit,
        }
    }
}

impl IngestSection {
    pub fn to_ingest_config(&self) -> crate::ingest::IngestConfig {
        crate::ingest::IngestConfig {
            queue_capacity: self.queue_capacity,
            worker_count: self.worker_count,
            resume_checkpoint_path: self.resume_checkpoint_path.clone(),
            dead_letter_path: self.dead_letter_path.clone(),
            write_retry_limit: self.write_retry_limit,
            ..crate::ingest::IngestConfig::default()
        }
    }
}

/// Paths to the editable classifier lists; absent paths use the shipped
/// defaults.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ClassifySection {
    pub domains_path: Option<PathBuf>,
    pub keywords_path: Option<PathBuf>,
}

impl ClassifySection {
    pub fn build_classifier(
        &self,
    ) -> Result<crate::classify::Classifier, crate::classify::ClassifyError> {
        match (&self.domains_path, &self.keywords_path) {
            (Some(d), Some(k)) => crate::classify::Classifier::from_files(d, k),
            (None, None) => Ok(crate::classify::Classifier::with_defaults()),
            (d, k) => {
                let domains = match d {
                    Some(p) => std::fs::read_to_string(p).map(|s| crate::classify::parse_list(&s)),
                    None => Ok(crate::classify::parse_list(
                        crate::classify::DEFAULT_DOMAINS,
                    )),
                };
                let keywords = match k {
                    Some(p) => std::fs::read_to_string(p).map(|s| crate::classify::parse_list(&s)),
                    None => Ok(crate::classify::parse_list(
                        crate::classify::DEFAULT_KEYWORDS,
                    )),
                };
                match (domains, keywords) {
                    (Ok(d), Ok(k)) => crate::classify::Classifier::new(d, k),
                    (Err(e), _) | (_, Err(e)) => Err(crate::classify::ClassifyError::Io {
                        path: "classifier list".to_string(),
                        source: e,
                    }),
                }
            }
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(toml::from_str(&raw)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
}
