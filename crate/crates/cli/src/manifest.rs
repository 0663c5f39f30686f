use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Record of one invocation, enough to reproduce its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    /// Every parameter after defaults were applied.
    pub parameters: serde_json::Value,
    pub seed: u64,
    pub tolerance: f64,
    pub inputs: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    pub version: String,
}

impl RunManifest {
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Next to the output file when there is one, otherwise on stderr.
    pub fn emit(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        match &self.output {
            Some(out) => {
                let path = Self::path_for(out);
                std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
            }
            None => {
                eprintln!("{text}");
                Ok(())
            }
        }
    }
}
