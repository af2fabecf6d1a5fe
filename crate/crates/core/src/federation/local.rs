use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;

use super::state::{ClientState, FederationHyperparams};
use crate::error::{Error, Result};
use crate::nn::{backward, forward, predict, sgd_step, DenseLayer, LayerGrad, LossKind};
use crate::partition::{assemble_client_model, GroupedGradients, LayerGroup, ModelLayout};

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    /// `W_broadcast − W_trained` for the common and task-specific groups.
    pub update: GroupedGradients,
    /// Mean mini-batch loss over the final local epoch.
    pub train_loss: f64,
}

/// Server weights handed to a client at the start of a round.
#[derive(Debug, Clone, Copy)]
pub struct Broadcast<'a> {
    pub pretrained: &'a [DenseLayer],
    pub common: &'a [DenseLayer],
    pub task: &'a [DenseLayer],
}

/// Runs `E` epochs of mini-batch SGD on the client's shard.
///
/// Personal layers are updated in place and not returned. Returns `None` for
/// a client without training rows.
pub fn local_update(
    client: &mut ClientState,
    layout: &ModelLayout,
    broadcast: Broadcast<'_>,
    hp: &FederationHyperparams,
    loss: LossKind,
) -> Result<Option<LocalOutcome>> {
    if hp.local_epochs == 0 || hp.batch_size == 0 {
        return Err(Error::Config(
            "local epochs and batch size must be positive".into(),
        ));
    }
    let n = client.sample_count();
    if n == 0 {
        warn!("client {} has no training rows; skipping", client.client_id);
        return Ok(None);
    }
    let model = assemble_client_model(
        layout,
        broadcast.pretrained,
        broadcast.common,
        broadcast.task,
        &client.personal,
    )?;
    let first = model.first_trainable();
    let mut layers = model.into_layers();
    let mut trainable = layers.split_off(first);

    // frozen layers never change, so their output is computed once
    let inputs = if first > 0 {
        predict(&layers, &client.shard.train.features)?
    } else {
        client.shard.train.features.clone()
    };
    let targets = &client.shard.train.targets;

    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = 0.0;
    for _ in 0..hp.local_epochs {
        order.shuffle(&mut client.rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            let xb = inputs.select_rows(chunk);
            let yb = targets.select_rows(chunk);
            let (out, cache) = forward(&trainable, &xb)?;
            let l = loss.value(&out, &yb)?;
            if !l.is_finite() {
                return Err(Error::Diverged {
                    client: client.client_id,
                });
            }
            let grads = backward(&trainable, &cache, &yb, loss)?;
            sgd_step(&mut trainable, &grads.layers, hp.learning_rate)?;
            loss_sum += l;
            batches += 1;
        }
        epoch_loss = loss_sum / batches as f64;
    }
    if trainable
        .iter()
        .any(|l| !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()))
    {
        return Err(Error::Diverged {
            client: client.client_id,
        });
    }

    let tags = &layout.tags()[first..];
    let mut groups: BTreeMap<LayerGroup, Vec<LayerGrad>> = BTreeMap::new();
    let mut personal = Vec::new();
    let mut common_i = 0;
    let mut task_i = 0;
    for (layer, tag) in trainable.into_iter().zip(tags) {
        match tag {
            LayerGroup::Common => {
                let d = LayerGrad::delta(&broadcast.common[common_i], &layer);
                groups.entry(LayerGroup::Common).or_default().push(d);
                common_i += 1;
            }
            LayerGroup::TaskSpecific => {
                let d = LayerGrad::delta(&broadcast.task[task_i], &layer);
                groups.entry(LayerGroup::TaskSpecific).or_default().push(d);
                task_i += 1;
            }
            LayerGroup::Personal => personal.push(layer),
            LayerGroup::Pretrained => unreachable!("pretrained layers precede `first`"),
        }
    }
    client.personal = personal;

    Ok(Some(LocalOutcome {
        update: GroupedGradients {
            client_id: client.client_id,
            task_id: client.task_id,
            sample_count: n,
            groups,
        },
        train_loss: epoch_loss,
    }))
}
