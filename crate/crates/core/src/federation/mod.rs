//! Coordinator and clients for layered multi-task federated training.
//!
//! Each round: sample `K` clients per task group, broadcast common and
//! task weights, train locally, then aggregate task-specific updates within
//! each group and common updates across all sampled clients.

mod aggregate;
mod checkpoint;
mod evaluate;
mod local;
mod sampling;
mod state;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate_common, aggregate_task, AggregationRule};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use evaluate::{evaluate, is_correct, score_outputs, Score};
pub use local::{local_update, Broadcast, LocalOutcome};
pub use sampling::sample_clients;
pub use state::{ClientState, FederationHyperparams, RoundPlan, ServerState};

use crate::data::Shard;
use crate::error::{Error, Result};
use crate::nn::{predict, sgd_step, DenseLayer, LossKind};
use crate::partition::{assemble_client_model, LayerGroup, ModelLayout, PartitionedModel};
use crate::seed::{derive, rng_from_seed, stream, SimRng};

/// Summary of one executed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub plan: RoundPlan,
    /// Sample-weighted mean of the participants' final-epoch training loss.
    pub train_loss: f64,
}

/// Test metrics recorded after a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub task_scores: Vec<Score>,
    pub train_loss: f64,
    pub wall_clock_secs: f64,
}

impl RoundRecord {
    pub fn task_accuracy(&self) -> Vec<f64> {
        self.task_scores.iter().map(Score::accuracy).collect()
    }

    /// Accuracy pooled over every test row.
    pub fn overall_accuracy(&self) -> f64 {
        let mut s = Score::default();
        self.task_scores.iter().for_each(|t| s.merge(t));
        s.accuracy()
    }

    /// Unweighted mean of per-task accuracies, ignoring tasks without test rows.
    pub fn mean_accuracy(&self) -> f64 {
        let accs: Vec<f64> = self
            .task_scores
            .iter()
            .filter(|s| s.total > 0)
            .map(Score::accuracy)
            .collect();
        if accs.is_empty() {
            f64::NAN
        } else {
            accs.iter().sum::<f64>() / accs.len() as f64
        }
    }
}

/// Produces per-task test scores for the current state of a federation.
pub trait Evaluator: Sync {
    fn evaluate(&self, federation: &Federation) -> Result<Vec<Score>>;
}

/// Scores every client on its own held-out split, pooled per task.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClientTestEvaluator;

impl Evaluator for ClientTestEvaluator {
    fn evaluate(&self, fed: &Federation) -> Result<Vec<Score>> {
        let per_client: Vec<(usize, Score)> = fed
            .clients
            .par_iter()
            .filter(|c| !c.shard.test.is_empty())
            .map(|c| {
                let model = fed.client_model(c)?;
                let out = predict(model.layers(), &c.shard.test.features)?;
                Ok((
                    c.task_id,
                    score_outputs(&out, &c.shard.test.targets, fed.loss)?,
                ))
            })
            .collect::<Result<_>>()?;
        let mut scores = vec![Score::default(); fed.task_count()];
        for (t, s) in per_client {
            scores[t].merge(&s);
        }
        Ok(scores)
    }
}

/// A coordinator together with its simulated clients.
#[derive(Debug, Clone)]
pub struct Federation {
    layout: ModelLayout,
    pub server: ServerState,
    /// Sorted by ascending client id.
    pub clients: Vec<ClientState>,
    groups: Vec<Vec<usize>>,
    sampler: SimRng,
    loss: LossKind,
}

impl Federation {
    /// Starts every client and task group from `initial`.
    ///
    /// Task groups are `0..=max(task_id)` and each must have at least one client.
    pub fn new(
        layout: ModelLayout,
        initial: &PartitionedModel,
        shards: Vec<Shard>,
        seed: u64,
    ) -> Result<Self> {
        if initial.tags() != layout.tags() {
            return Err(Error::Assembly(
                "initial model tags differ from the layout".into(),
            ));
        }
        layout.arch().check_layers(initial.layers())?;
        if shards.is_empty() {
            return Err(Error::Config(
                "a federation needs at least one client".into(),
            ));
        }
        let fragments = initial.split_weights();
        let tasks = shards.iter().map(|s| s.task_id).max().unwrap() + 1;
        let mut groups = vec![Vec::new(); tasks];
        let mut clients: Vec<ClientState> = shards
            .into_iter()
            .map(|shard| ClientState {
                client_id: shard.client_id,
                task_id: shard.task_id,
                personal: fragments.personal.clone(),
                rng: rng_from_seed(derive(seed, stream::CLIENT, shard.client_id as u64)),
                shard,
            })
            .collect();
        clients.sort_by_key(|c| c.client_id);
        for pair in clients.windows(2) {
            if pair[0].client_id == pair[1].client_id {
                return Err(Error::Config(format!(
                    "client id {} appears twice",
                    pair[0].client_id
                )));
            }
        }
        let out_width = layout.arch().output_dim();
        for c in &clients {
            if c.shard.train.features.cols() != layout.arch().input_dim
                || c.shard.train.targets.cols() != out_width
            {
                return Err(Error::Config(format!(
                    "client {} data is {}→{} wide, model is {}→{out_width}",
                    c.client_id,
                    c.shard.train.features.cols(),
                    c.shard.train.targets.cols(),
                    layout.arch().input_dim
                )));
            }
            groups[c.task_id].push(c.client_id);
        }
        if let Some(t) = groups.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("task group {t} has no clients")));
        }
        let total_samples = clients.iter().map(ClientState::sample_count).sum();
        let loss = LossKind::for_output(layout.arch().layers.last().unwrap().activation);
        Ok(Self {
            server: ServerState {
                pretrained: fragments.pretrained,
                common: fragments.common,
                task: vec![fragments.task; tasks],
                round: 0,
                total_samples,
            },
            layout,
            clients,
            groups,
            sampler: rng_from_seed(derive(seed, stream::SAMPLER, 0)),
            loss,
        })
    }

    pub fn with_loss(mut self, loss: LossKind) -> Result<Self> {
        loss.check_compatible(self.layout.arch().layers.last().unwrap().activation)?;
        self.loss = loss;
        Ok(self)
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn task_count(&self) -> usize {
        self.groups.len()
    }

    /// Client ids of each task group.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn client(&self, client_id: usize) -> Option<&ClientState> {
        self.clients
            .binary_search_by_key(&client_id, |c| c.client_id)
            .ok()
            .map(|i| &self.clients[i])
    }

    /// The model a client would use right now.
    pub fn client_model(&self, client: &ClientState) -> Result<PartitionedModel> {
        assemble_client_model(
            &self.layout,
            &self.server.pretrained,
            &self.server.common,
            &self.server.task[client.task_id],
            &client.personal,
        )
    }

    /// One sampling, broadcast, local-training and aggregation pass.
    pub fn run_round(&mut self, hp: &FederationHyperparams) -> Result<RoundReport> {
        let plan = sample_clients(&mut self.sampler, &self.groups, hp.clients_per_group)?;
        let mut selected: Vec<usize> = plan.all().collect();
        selected.sort_unstable();

        let layout = &self.layout;
        let server = &self.server;
        let loss = self.loss;
        let outcomes: Vec<(usize, Result<Option<LocalOutcome>>)> = self
            .clients
            .par_iter_mut()
            .filter(|c| selected.binary_search(&c.client_id).is_ok())
            .map(|c| {
                let broadcast = Broadcast {
                    pretrained: &server.pretrained,
                    common: &server.common,
                    task: &server.task[c.task_id],
                };
                (c.client_id, local_update(c, layout, broadcast, hp, loss))
            })
            .collect();

        let mut updates = Vec::with_capacity(outcomes.len());
        let mut loss_num = 0.0;
        let mut loss_den = 0usize;
        for (_, outcome) in outcomes {
            if let Some(o) = outcome? {
                loss_num += o.train_loss * o.update.sample_count as f64;
                loss_den += o.update.sample_count;
                updates.push(o.update);
            }
        }

        let tasks = self.task_count();
        if self.layout.count(LayerGroup::TaskSpecific) > 0 {
            for t in 0..tasks {
                let group: Vec<_> = updates.iter().filter(|u| u.task_id == t).cloned().collect();
                if group.is_empty() {
                    continue;
                }
                let agg = aggregate_task(
                    &group,
                    hp.aggregation,
                    hp.clients_per_group,
                    self.server.total_samples,
                )?;
                sgd_step(&mut self.server.task[t], &agg, 1.0)?;
            }
        }
        if self.layout.count(LayerGroup::Common) > 0 && !updates.is_empty() {
            let agg = aggregate_common(
                &updates,
                hp.aggregation,
                tasks,
                hp.clients_per_group,
                self.server.total_samples,
            )?;
            sgd_step(&mut self.server.common, &agg, 1.0)?;
        }
        self.server.round += 1;
        Ok(RoundReport {
            round: self.server.round,
            plan,
            train_loss: if loss_den > 0 {
                loss_num / loss_den as f64
            } else {
                f64::NAN
            },
        })
    }

    /// `R` rounds with client-test evaluation after each.
    pub fn run_training(&mut self, hp: &FederationHyperparams) -> Result<Vec<RoundRecord>> {
        self.run_training_with(hp, &ClientTestEvaluator)
    }

    pub fn run_training_with(
        &mut self,
        hp: &FederationHyperparams,
        evaluator: &dyn Evaluator,
    ) -> Result<Vec<RoundRecord>> {
        hp.validate()?;
        let mut log = Vec::with_capacity(hp.rounds);
        for _ in 0..hp.rounds {
            let start = Instant::now();
            let report = self.run_round(hp)?;
            let task_scores = evaluator.evaluate(self)?;
            log.push(RoundRecord {
                round: report.round,
                task_scores,
                train_loss: report.train_loss,
                wall_clock_secs: start.elapsed().as_secs_f64(),
            });
        }
        Ok(log)
    }

    /// Parameters of every client's personal layers, in client order.
    pub fn personal_weights(&self) -> Vec<(usize, &[DenseLayer])> {
        self.clients
            .iter()
            .map(|c| (c.client_id, c.personal.as_slice()))
            .collect()
    }
}
