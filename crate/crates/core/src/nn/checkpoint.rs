//! JSON checkpoints holding one or more networks plus a model header.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so a save/load cycle is exact.

use std::path::Path;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::dense::DenseNet;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::io;

pub const CHECKPOINT_FORMAT: &str = "dsf-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub architecture: DenseNet,
    /// Seed the parameters were initialized from.
    pub init_seed: u64,
    pub params: ParamStore,
}

impl NetworkRecord {
    pub fn new(architecture: DenseNet, init_seed: u64, params: ParamStore) -> Result<Self> {
        architecture.check_params(&params)?;
        Ok(Self {
            architecture,
            init_seed,
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<H> {
    pub format: String,
    pub kind: String,
    pub header: H,
    pub networks: IndexMap<String, NetworkRecord>,
}

impl<H: Serialize + DeserializeOwned> Checkpoint<H> {
    pub fn new(kind: impl Into<String>, header: H) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            kind: kind.into(),
            header,
            networks: IndexMap::new(),
        }
    }

    pub fn with_network(mut self, name: impl Into<String>, record: NetworkRecord) -> Self {
        self.networks.insert(name.into(), record);
        self
    }

    pub fn network(&self, name: &str) -> Result<&NetworkRecord> {
        self.networks
            .get(name)
            .ok_or_else(|| Error::parse("checkpoint", format!("missing network `{name}`")))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("checkpoint", e.to_string()))
    }

    pub fn from_json(text: &str, expected_kind: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(
                "checkpoint",
                format!("unsupported format `{}`", ckpt.format),
            ));
        }
        if ckpt.kind != expected_kind {
            return Err(Error::parse(
                "checkpoint",
                format!("expected a `{expected_kind}` checkpoint, found `{}`", ckpt.kind),
            ));
        }
        for (name, rec) in &ckpt.networks {
            rec.architecture
                .check_params(&rec.params)
                .map_err(|e| Error::parse(format!("checkpoint network `{name}`"), e.to_string()))?;
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path, expected_kind: &str) -> Result<Self> {
        Self::from_json(&io::read_to_string(path)?, expected_kind)
    }
}
