//! Layer-group tagging of a dense network.
//!
//! Groups run input to output: `Pretrained < Common < TaskSpecific < Personal`.
//! Any group may be empty. Pretrained layers are frozen.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    init_weights, predict, ArchitectureSpec, DenseLayer, GradientSet, LayerGrad, Tensor2,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerGroup {
    #[serde(alias = "pre")]
    Pretrained,
    #[serde(alias = "com")]
    Common,
    #[serde(alias = "task")]
    TaskSpecific,
    #[serde(alias = "pers")]
    Personal,
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 4] = [
        LayerGroup::Pretrained,
        LayerGroup::Common,
        LayerGroup::TaskSpecific,
        LayerGroup::Personal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerGroup::Pretrained => "pretrained",
            LayerGroup::Common => "common",
            LayerGroup::TaskSpecific => "task",
            LayerGroup::Personal => "personal",
        }
    }
}

impl fmt::Display for LayerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrained" | "pre" => Ok(LayerGroup::Pretrained),
            "common" | "com" => Ok(LayerGroup::Common),
            "task" | "task_specific" => Ok(LayerGroup::TaskSpecific),
            "personal" | "pers" => Ok(LayerGroup::Personal),
            other => Err(Error::Partition(format!("unknown layer group `{other}`"))),
        }
    }
}

fn check_monotone(tags: &[LayerGroup]) -> Result<()> {
    for (i, pair) in tags.windows(2).enumerate() {
        if pair[1] < pair[0] {
            return Err(Error::Partition(format!(
                "layer {} is tagged {} after a {} layer; groups must run pretrained, common, task, personal",
                i + 1,
                pair[1],
                pair[0]
            )));
        }
    }
    Ok(())
}

fn group_range(tags: &[LayerGroup], group: LayerGroup) -> Range<usize> {
    let start = tags.iter().take_while(|t| **t < group).count();
    let len = tags[start..].iter().take_while(|t| **t == group).count();
    start..start + len
}

/// Architecture plus a validated tag per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    arch: ArchitectureSpec,
    tags: Vec<LayerGroup>,
}

impl ModelLayout {
    pub fn new(arch: ArchitectureSpec, tags: Vec<LayerGroup>) -> Result<Self> {
        arch.validate()?;
        if tags.len() != arch.layers.len() {
            return Err(Error::Partition(format!(
                "{} tags for {} layers",
                tags.len(),
                arch.layers.len()
            )));
        }
        check_monotone(&tags)?;
        Ok(Self { arch, tags })
    }

    /// Every layer tagged with one group.
    pub fn uniform(arch: ArchitectureSpec, group: LayerGroup) -> Result<Self> {
        let tags = vec![group; arch.layers.len()];
        Self::new(arch, tags)
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn tags(&self) -> &[LayerGroup] {
        &self.tags
    }

    pub fn group_range(&self, group: LayerGroup) -> Range<usize> {
        group_range(&self.tags, group)
    }

    pub fn count(&self, group: LayerGroup) -> usize {
        self.group_range(group).len()
    }

    /// Index of the first layer that training may change.
    pub fn first_trainable(&self) -> usize {
        self.count(LayerGroup::Pretrained)
    }

    /// The same layout with every `from` tag replaced by `to`.
    pub fn retag(&self, from: LayerGroup, to: LayerGroup) -> Result<Self> {
        let tags = self
            .tags
            .iter()
            .map(|&t| if t == from { to } else { t })
            .collect();
        Self::new(self.arch.clone(), tags)
    }
}

/// A dense network with its layer-group tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedModel {
    layers: Vec<DenseLayer>,
    tags: Vec<LayerGroup>,
    frozen: Vec<bool>,
}

impl PartitionedModel {
    pub fn new(layers: Vec<DenseLayer>, tags: Vec<LayerGroup>) -> Result<Self> {
        if layers.len() != tags.len() {
            return Err(Error::Partition(format!(
                "{} tags for {} layers",
                tags.len(),
                layers.len()
            )));
        }
        check_monotone(&tags)?;
        for i in 1..layers.len() {
            if layers[i].input_width() != layers[i - 1].output_width() {
                return Err(Error::shape(
                    i,
                    format!(
                        "expects {} inputs but the previous layer emits {}",
                        layers[i].input_width(),
                        layers[i - 1].output_width()
                    ),
                ));
            }
        }
        let frozen = tags.iter().map(|t| *t == LayerGroup::Pretrained).collect();
        Ok(Self {
            layers,
            tags,
            frozen,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<DenseLayer> {
        self.layers
    }

    pub fn tags(&self) -> &[LayerGroup] {
        &self.tags
    }

    pub fn frozen_mask(&self) -> &[bool] {
        &self.frozen
    }

    pub fn first_trainable(&self) -> usize {
        self.frozen.iter().take_while(|f| **f).count()
    }

    pub fn group_range(&self, group: LayerGroup) -> Range<usize> {
        group_range(&self.tags, group)
    }

    pub fn group(&self, group: LayerGroup) -> &[DenseLayer] {
        &self.layers[self.group_range(group)]
    }

    /// `h_pers(h_task(h_com(h_pre(x))))`, evaluated one group at a time.
    pub fn compose_forward(&self, batch: &Tensor2) -> Result<Tensor2> {
        let mut x = batch.clone();
        let mut offset = 0;
        for group in LayerGroup::ALL {
            let layers = self.group(group);
            if layers.is_empty() {
                continue;
            }
            x = predict(layers, &x).map_err(|e| match e {
                Error::Shape { layer, detail } => Error::Shape {
                    layer: layer + offset,
                    detail,
                },
                other => other,
            })?;
            offset += layers.len();
        }
        Ok(x)
    }

    /// Copies out the weights of each group.
    pub fn split_weights(&self) -> WeightFragments {
        WeightFragments {
            pretrained: self.group(LayerGroup::Pretrained).to_vec(),
            common: self.group(LayerGroup::Common).to_vec(),
            task: self.group(LayerGroup::TaskSpecific).to_vec(),
            personal: self.group(LayerGroup::Personal).to_vec(),
        }
    }
}

/// Initializes every layer from `seed` and applies the layout's tags.
pub fn build_partitioned_model(layout: &ModelLayout, seed: u64) -> Result<PartitionedModel> {
    let layers = init_weights(layout.arch(), seed)?;
    PartitionedModel::new(layers, layout.tags().to_vec())
}

/// Per-group weights of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFragments {
    pub pretrained: Vec<DenseLayer>,
    pub common: Vec<DenseLayer>,
    pub task: Vec<DenseLayer>,
    pub personal: Vec<DenseLayer>,
}

/// Builds a client-local model from server fragments plus the client's personal layers.
pub fn assemble_client_model(
    layout: &ModelLayout,
    frozen_pre: &[DenseLayer],
    common: &[DenseLayer],
    task: &[DenseLayer],
    personal: &[DenseLayer],
) -> Result<PartitionedModel> {
    let fragments = [
        (LayerGroup::Pretrained, frozen_pre),
        (LayerGroup::Common, common),
        (LayerGroup::TaskSpecific, task),
        (LayerGroup::Personal, personal),
    ];
    let mut layers = Vec::with_capacity(layout.tags().len());
    for (group, frag) in fragments {
        let expected = layout.count(group);
        if frag.len() != expected {
            return Err(Error::Assembly(format!(
                "{group} fragment has {} layers, layout expects {expected}",
                frag.len()
            )));
        }
        layers.extend_from_slice(frag);
    }
    layout.arch().check_layers(&layers)?;
    PartitionedModel::new(layers, layout.tags().to_vec())
}

/// Gradients (or update deltas) of one client keyed by layer group.
///
/// Pretrained layers never appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedGradients {
    pub client_id: usize,
    pub task_id: usize,
    pub sample_count: usize,
    pub groups: BTreeMap<LayerGroup, Vec<LayerGrad>>,
}

impl GroupedGradients {
    pub fn get(&self, group: LayerGroup) -> &[LayerGrad] {
        self.groups.get(&group).map_or(&[], Vec::as_slice)
    }

    pub fn entry_count(&self, group: LayerGroup) -> usize {
        self.get(group).len()
    }

    pub fn with_owner(mut self, client_id: usize, task_id: usize, sample_count: usize) -> Self {
        self.client_id = client_id;
        self.task_id = task_id;
        self.sample_count = sample_count;
        self
    }
}

/// Files each trainable layer's gradient under its tag.
pub fn split_gradients(model: &PartitionedModel, grads: &GradientSet) -> Result<GroupedGradients> {
    if grads.layers.len() != model.layers().len() {
        return Err(Error::shape(
            grads.layers.len().min(model.layers().len()),
            "gradient set does not mirror the model",
        ));
    }
    let mut groups: BTreeMap<LayerGroup, Vec<LayerGrad>> = BTreeMap::new();
    for (i, ((g, tag), frozen)) in grads
        .layers
        .iter()
        .zip(model.tags())
        .zip(model.frozen_mask())
        .enumerate()
    {
        if !g.matches(&model.layers()[i]) {
            return Err(Error::shape(i, "gradient shape differs from layer"));
        }
        if *frozen {
            continue;
        }
        groups.entry(*tag).or_default().push(g.clone());
    }
    Ok(GroupedGradients {
        client_id: 0,
        task_id: 0,
        sample_count: 0,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, Activation, LayerSpec};
    use LayerGroup::*;

    fn arch(widths: &[usize]) -> ArchitectureSpec {
        let last = widths.len() - 2;
        ArchitectureSpec::new(
            widths[0],
            widths[1..]
                .iter()
                .enumerate()
                .map(|(i, &w)| LayerSpec {
                    width: w,
                    activation: if i == last {
                        Activation::Sigmoid
                    } else {
                        Activation::Relu
                    },
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn face_setup_is_valid() {
        let layout = ModelLayout::new(
            arch(&[12, 8, 6, 4, 1]),
            vec![Common, Common, TaskSpecific, TaskSpecific],
        )
        .unwrap();
        assert_eq!(layout.group_range(Common), 0..2);
        assert_eq!(layout.group_range(TaskSpecific), 2..4);
        assert_eq!(layout.count(Personal), 0);
        assert_eq!(layout.first_trainable(), 0);
    }

    #[test]
    fn all_personal_is_valid() {
        let layout = ModelLayout::uniform(arch(&[3, 2, 1]), Personal).unwrap();
        assert_eq!(layout.count(Personal), 2);
    }

    #[test]
    fn out_of_order_tags_rejected() {
        let err = ModelLayout::new(arch(&[3, 2, 1]), vec![TaskSpecific, Common]);
        assert!(matches!(err, Err(Error::Partition(_))));
        let err = PartitionedModel::new(
            vec![
                DenseLayer::zeros(3, 2, Activation::Relu),
                DenseLayer::zeros(2, 1, Activation::Sigmoid),
            ],
            vec![Personal, Common],
        );
        assert!(matches!(err, Err(Error::Partition(_))));
    }

    #[test]
    fn pretrained_layers_are_frozen() {
        let layout =
            ModelLayout::new(arch(&[4, 3, 3, 1]), vec![Pretrained, Common, Personal]).unwrap();
        let m = build_partitioned_model(&layout, 5).unwrap();
        assert_eq!(m.frozen_mask(), &[true, false, false]);
        assert_eq!(m.first_trainable(), 1);
    }

    #[test]
    fn compose_forward_equals_flat_forward() {
        let layout = ModelLayout::new(
            arch(&[5, 7, 6, 4, 3, 1]),
            vec![Pretrained, Common, Common, TaskSpecific, Personal],
        )
        .unwrap();
        let m = build_partitioned_model(&layout, 9).unwrap();
        let x = Tensor2::from_rows(&[
            vec![0.1, -0.4, 1.3, 0.0, 2.2],
            vec![-1.0, 0.5, 0.25, 0.75, -0.3],
        ])
        .unwrap();
        let (flat, _) = forward(m.layers(), &x).unwrap();
        assert_eq!(m.compose_forward(&x).unwrap(), flat);
    }

    #[test]
    fn empty_pretrained_group_is_identity_prefix() {
        let layout = ModelLayout::uniform(arch(&[3, 4, 1]), Common).unwrap();
        let m = build_partitioned_model(&layout, 2).unwrap();
        let x = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(m.group(Pretrained).is_empty());
        assert_eq!(
            m.compose_forward(&x).unwrap(),
            predict(m.layers(), &x).unwrap()
        );
    }

    #[test]
    fn split_gradients_follows_tag_histogram() {
        let tags = vec![Pretrained, Common, Common, TaskSpecific, Personal];
        let layout = ModelLayout::new(arch(&[5, 7, 6, 4, 3, 1]), tags.clone()).unwrap();
        let m = build_partitioned_model(&layout, 1).unwrap();
        let g = split_gradients(&m, &GradientSet::zeros_like(m.layers())).unwrap();
        for group in [Common, TaskSpecific, Personal] {
            let expected = tags.iter().filter(|t| **t == group).count();
            assert_eq!(g.entry_count(group), expected);
        }
        assert!(!g.groups.contains_key(&Pretrained));
    }

    #[test]
    fn all_common_gradients_land_under_common() {
        let layout = ModelLayout::uniform(arch(&[3, 4, 1]), Common).unwrap();
        let m = build_partitioned_model(&layout, 1).unwrap();
        let g = split_gradients(&m, &GradientSet::zeros_like(m.layers())).unwrap();
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.entry_count(Common), 2);
    }

    #[test]
    fn assemble_then_split_round_trips() {
        let layout = ModelLayout::new(
            arch(&[4, 5, 3, 2, 1]),
            vec![Pretrained, Common, TaskSpecific, Personal],
        )
        .unwrap();
        let m = build_partitioned_model(&layout, 4).unwrap();
        let f = m.split_weights();
        let back =
            assemble_client_model(&layout, &f.pretrained, &f.common, &f.task, &f.personal).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.split_weights(), f);
    }

    #[test]
    fn assemble_rejects_mismatched_fragments() {
        let layout = ModelLayout::new(arch(&[4, 5, 1]), vec![Common, TaskSpecific]).unwrap();
        let m = build_partitioned_model(&layout, 4).unwrap();
        let f = m.split_weights();
        let wrong = vec![DenseLayer::zeros(4, 6, Activation::Relu)];
        assert!(matches!(
            assemble_client_model(&layout, &[], &wrong, &f.task, &[]),
            Err(Error::Assembly(_))
        ));
        assert!(matches!(
            assemble_client_model(&layout, &[], &f.common, &[], &[]),
            Err(Error::Assembly(_))
        ));
    }

    #[test]
    fn clients_share_common_but_not_task_weights_across_groups() {
        let layout = ModelLayout::new(arch(&[4, 5, 1]), vec![Common, TaskSpecific]).unwrap();
        let a = build_partitioned_model(&layout, 10)
            .unwrap()
            .split_weights();
        let b = build_partitioned_model(&layout, 11)
            .unwrap()
            .split_weights();
        // same common broadcast, task weights from two different groups
        let m1 = assemble_client_model(&layout, &[], &a.common, &a.task, &[]).unwrap();
        let m2 = assemble_client_model(&layout, &[], &a.common, &b.task, &[]).unwrap();
        assert_eq!(m1.group(Common), m2.group(Common));
        assert_ne!(m1.group(TaskSpecific), m2.group(TaskSpecific));
        // same group: identical fragments
        let m3 = assemble_client_model(&layout, &[], &a.common, &a.task, &[]).unwrap();
        assert_eq!(m1, m3);
    }
}
