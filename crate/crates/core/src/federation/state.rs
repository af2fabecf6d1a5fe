use serde::{Deserialize, Serialize};

use super::aggregate::AggregationRule;
use crate::data::Shard;
use crate::error::{Error, Result};
use crate::nn::DenseLayer;
use crate::seed::SimRng;

/// A simulated client. Its personal layers and data never leave it.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub task_id: usize,
    pub shard: Shard,
    pub personal: Vec<DenseLayer>,
    /// Drives the per-epoch shuffling of this client's training rows.
    pub rng: SimRng,
}

impl ClientState {
    /// `N_m`, the number of local training rows.
    pub fn sample_count(&self) -> usize {
        self.shard.train.len()
    }
}

/// Everything the coordinator holds: frozen, common and per-task weights.
///
/// Personal layers have no place here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub pretrained: Vec<DenseLayer>,
    pub common: Vec<DenseLayer>,
    pub task: Vec<Vec<DenseLayer>>,
    pub round: usize,
    /// `N`, summed over every client.
    pub total_samples: usize,
}

impl ServerState {
    pub fn task_count(&self) -> usize {
        self.task.len()
    }

    /// Number of parameter tensors (weights and biases) the server holds.
    pub fn layer_count(&self) -> usize {
        self.pretrained.len() + self.common.len() + self.task.iter().map(Vec::len).sum::<usize>()
    }
}

/// Client ids selected for one round, indexed by task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub per_task: Vec<Vec<usize>>,
}

impl RoundPlan {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_task.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationHyperparams {
    pub rounds: usize,
    pub clients_per_group: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub aggregation: AggregationRule,
    #[serde(default)]
    pub seed: u64,
}

impl FederationHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.clients_per_group == 0 {
            return Err(Error::Config("clients per group must be at least 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}
