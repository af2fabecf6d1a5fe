use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::state::ServerState;
use super::Federation;
use crate::error::{Error, Result};
use crate::nn::DenseLayer;
use crate::partition::ModelLayout;
use crate::seed::SimRng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClientSnapshot {
    client_id: usize,
    personal: Vec<DenseLayer>,
    rng: SimRng,
}

/// Server state, every client's personal layers and all generator states.
///
/// Client data is not included; it is rebuilt from the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    layout: ModelLayout,
    server: ServerState,
    clients: Vec<ClientSnapshot>,
    sampler: SimRng,
}

impl Checkpoint {
    pub fn round(&self) -> usize {
        self.server.round
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

impl Federation {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layout: self.layout.clone(),
            server: self.server.clone(),
            clients: self
                .clients
                .iter()
                .map(|c| ClientSnapshot {
                    client_id: c.client_id,
                    personal: c.personal.clone(),
                    rng: c.rng.clone(),
                })
                .collect(),
            sampler: self.sampler.clone(),
        }
    }

    /// Overwrites model and generator state from a checkpoint of the same roster.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.layout != self.layout {
            return Err(Error::Checkpoint("checkpoint layout differs".into()));
        }
        if ck.clients.len() != self.clients.len()
            || ck
                .clients
                .iter()
                .zip(&self.clients)
                .any(|(s, c)| s.client_id != c.client_id)
        {
            return Err(Error::Checkpoint("checkpoint client roster differs".into()));
        }
        if ck.server.task.len() != self.server.task.len() {
            return Err(Error::Checkpoint("checkpoint task count differs".into()));
        }
        self.server = ck.server.clone();
        for (c, s) in self.clients.iter_mut().zip(&ck.clients) {
            c.personal = s.personal.clone();
            c.rng = s.rng.clone();
        }
        self.sampler = ck.sampler.clone();
        Ok(())
    }
}
