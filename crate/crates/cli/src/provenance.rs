//! Output envelopes: every JSON file carries the tool version, the resolved
//! configuration, the seed and the hashes of the inputs it was built from.

use std::fs;
use std::path::{Path, PathBuf};

use mscr::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> Result<Self, Error> {
        let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Ok(InputFile {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

impl Default for Tool {
    fn default() -> Self {
        Tool {
            name: "mscr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<C, R> {
    pub tool: Tool,
    pub command: String,
    pub config: C,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFile>,
    pub result: R,
}

impl<C: Serialize, R: Serialize> Envelope<C, R> {
    pub fn new(command: &str, config: C, seed: Option<u64>, inputs: Vec<InputFile>, result: R) -> Self {
        Envelope {
            tool: Tool::default(),
            command: command.into(),
            config,
            seed,
            inputs,
            result,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}
