use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, EpochMetrics};
use crate::dsl::DslModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Model, optimizer state and metric history at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub epoch: usize,
    pub model: DslModel,
    pub optimizer: AdamState,
    pub history: Vec<EpochMetrics>,
}

impl Checkpoint {
    /// Pretty-printed JSON. Floats use shortest round-trip formatting, so
    /// save → load → save reproduces the same bytes.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format("checkpoint", e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: Option<u32>,
        }
        // version first, so an old file reports the version rather than
        // whatever field changed shape
        if let Ok(Header { format_version: Some(v) }) = serde_json::from_str::<Header>(text) {
            if v != CHECKPOINT_FORMAT_VERSION {
                return Err(Error::format(
                    "format_version",
                    format!("{v} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"),
                ));
            }
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        let ckpt: Checkpoint = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = match e.path().to_string() {
                p if p == "?" || p == "." => "<document>".to_string(),
                p => p,
            };
            Error::format(path, e.into_inner().to_string())
        })?;
        ckpt.model
            .validate()
            .map_err(|e| match e {
                Error::Format { field, detail } => Error::format(format!("model.{field}"), detail),
                other => Error::format("model", other.to_string()),
            })?;
        if ckpt.history.iter().enumerate().any(|(i, m)| m.epoch != i + 1) {
            return Err(Error::format("history", "epochs are not consecutive from 1"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
