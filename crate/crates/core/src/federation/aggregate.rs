use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerGrad;
use crate::partition::{GroupedGradients, LayerGroup};

/// How client updates are normalized when aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// `Σ N_m Δ_m / Σ N_m` over the participating clients.
    #[default]
    WeightedMean,
    /// `1/(T K N) Σ N_m Δ_m` for common layers and `1/(K N) Σ N_m Δ_m` for
    /// task layers, with `N` the sample total over all clients.
    GlobalTotal,
}

fn ordered(updates: &[GroupedGradients]) -> Result<Vec<&GroupedGradients>> {
    if updates.is_empty() {
        return Err(Error::Aggregation("no updates to aggregate".into()));
    }
    let mut refs: Vec<_> = updates.iter().collect();
    refs.sort_by_key(|u| u.client_id);
    Ok(refs)
}

fn check_congruent(updates: &[&GroupedGradients], group: LayerGroup) -> Result<()> {
    let first = updates[0].get(group);
    for u in &updates[1..] {
        let other = u.get(group);
        if other.len() != first.len() || other.iter().zip(first).any(|(a, b)| !a.same_shape(b)) {
            return Err(Error::Aggregation(format!(
                "client {} sent {group} updates shaped unlike client {}",
                u.client_id, updates[0].client_id
            )));
        }
    }
    Ok(())
}

/// Weighted mean anchored at the first update: `Δ_1 + Σ w_m (Δ_m − Δ_1)`.
///
/// The anchor makes a list of identical updates return that update exactly.
fn weighted_mean(updates: &[&GroupedGradients], group: LayerGroup) -> Result<Vec<LayerGrad>> {
    let total: usize = updates.iter().map(|u| u.sample_count).sum();
    if total == 0 {
        return Err(Error::Aggregation(
            "participating clients hold no samples".into(),
        ));
    }
    let total = total as f64;
    let anchor = updates[0].get(group);
    let mut out = anchor.to_vec();
    for u in &updates[1..] {
        let w = u.sample_count as f64 / total;
        for ((acc, delta), base) in out.iter_mut().zip(u.get(group)).zip(anchor) {
            let mut diff = delta.clone();
            diff.add_scaled(-1.0, base);
            acc.add_scaled(w, &diff);
        }
    }
    Ok(out)
}

fn scaled_sum(
    updates: &[&GroupedGradients],
    group: LayerGroup,
    denominator: f64,
) -> Result<Vec<LayerGrad>> {
    if denominator.is_nan() || denominator <= 0.0 {
        return Err(Error::Aggregation(format!(
            "normalizer must be positive, got {denominator}"
        )));
    }
    let mut out: Vec<LayerGrad> = updates[0]
        .get(group)
        .iter()
        .map(|g| {
            let mut z = g.clone();
            z.scale(0.0);
            z
        })
        .collect();
    for u in updates {
        let w = u.sample_count as f64 / denominator;
        for (acc, delta) in out.iter_mut().zip(u.get(group)) {
            acc.add_scaled(w, delta);
        }
    }
    Ok(out)
}

/// Aggregates common-layer updates from every selected client of the round.
pub fn aggregate_common(
    updates: &[GroupedGradients],
    rule: AggregationRule,
    tasks: usize,
    clients_per_group: usize,
    total_samples: usize,
) -> Result<Vec<LayerGrad>> {
    let refs = ordered(updates)?;
    check_congruent(&refs, LayerGroup::Common)?;
    match rule {
        AggregationRule::WeightedMean => weighted_mean(&refs, LayerGroup::Common),
        AggregationRule::GlobalTotal => scaled_sum(
            &refs,
            LayerGroup::Common,
            (tasks * clients_per_group * total_samples) as f64,
        ),
    }
}

/// Aggregates task-specific updates from the selected clients of one task group.
pub fn aggregate_task(
    updates: &[GroupedGradients],
    rule: AggregationRule,
    clients_per_group: usize,
    total_samples: usize,
) -> Result<Vec<LayerGrad>> {
    let refs = ordered(updates)?;
    if let Some(u) = refs.iter().find(|u| u.task_id != refs[0].task_id) {
        return Err(Error::Aggregation(format!(
            "client {} belongs to task {}, not {}",
            u.client_id, u.task_id, refs[0].task_id
        )));
    }
    check_congruent(&refs, LayerGroup::TaskSpecific)?;
    match rule {
        AggregationRule::WeightedMean => weighted_mean(&refs, LayerGroup::TaskSpecific),
        AggregationRule::GlobalTotal => scaled_sum(
            &refs,
            LayerGroup::TaskSpecific,
            (clients_per_group * total_samples) as f64,
        ),
    }
}
