use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volregime::Result;

use crate::Invocation;

/// Record written next to every run's artifacts. The invocation alone is
/// enough to replay the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    /// File name of the threshold table used, when the command needs one.
    pub threshold_cache_key: Option<String>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(invocation: Invocation, threshold_cache_key: Option<String>, artifacts: Vec<PathBuf>) -> Self {
        Self {
            tool: env!("CARGO_BIN_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            threshold_cache_key,
            artifacts,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// `dir/stem.suffix` for an artifact `dir/stem.ext`.
pub fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let stem = primary.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    primary.with_file_name(format!("{stem}.{suffix}"))
}
