use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

/// Git-style object hash: SHA-256 over `"blob <len>\0" + content`, hex encoded.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub hash: String,
}

impl InputRecord {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        Ok(InputRecord {
            path: path.display().to_string(),
            hash: content_hash(&std::fs::read(path)?),
        })
    }
}

/// Everything needed to repeat a run: the command line, the configuration
/// text as given, the seed and the hashes of every input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as passed.
    pub args: Vec<String>,
    pub seed: u64,
    /// The configuration file verbatim, if one was used.
    pub config_text: Option<String>,
    /// Effective configuration after defaults and overrides.
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, args: Vec<String>, seed: u64) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            args,
            seed,
            config_text: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.inputs.push(InputRecord::from_file(path)?);
        Ok(())
    }

    /// Inputs whose current content no longer matches the recorded hash.
    pub fn changed_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|r| InputRecord::from_file(Path::new(&r.path)).map_or(true, |now| now.hash != r.hash))
            .map(|r| r.path.clone())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
