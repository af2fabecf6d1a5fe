use std::collections::BTreeSet;
use std::ops::Range;

use rayon::prelude::*;

use super::config::{ClientLayout, DataSource, ExperimentConfig, ScenarioKind};
use super::metrics::MetricsLog;
use crate::data::{
    gen_synthetic_multitask, load_frozen_embeddings, load_har_pooled, load_tabular,
    partition_by_subject, partition_uniform, Shard, Split, TabularDataset,
};
use crate::error::{Error, Result};
use crate::federation::{
    score_outputs, Evaluator, Federation, FederationHyperparams, RoundRecord, Score,
};
use crate::nn::{predict, Activation, ArchitectureSpec, LayerSpec, LossKind, Tensor2};
use crate::partition::{build_partitioned_model, LayerGroup, ModelLayout};
use crate::seed::{derive, stream};

/// Loaded data and client shards shared by every scenario of an experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: TabularDataset,
    pub shards: Vec<Shard>,
    pub task_names: Vec<String>,
    /// Label column read by each task group.
    pub task_labels: Vec<usize>,
}

impl PreparedData {
    pub fn task_count(&self) -> usize {
        self.task_labels.len()
    }

    fn shards_of(&self, task: usize) -> impl Iterator<Item = &Shard> {
        self.shards.iter().filter(move |s| s.task_id == task)
    }
}

/// Loads the dataset, applies embeddings and deals client shards.
///
/// Sharding is seeded from the experiment seed, so every scenario and grid
/// point of one experiment sees the same clients.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let d = &cfg.dataset;
    let missing = |s: &str| Error::Config(format!("`[dataset.{s}]` section missing"));
    let mut dataset = match d.source {
        DataSource::Synthetic => {
            gen_synthetic_multitask(d.synthetic.as_ref().ok_or_else(|| missing("synthetic"))?)?
        }
        DataSource::Tabular => {
            let t = d.tabular.as_ref().ok_or_else(|| missing("tabular"))?;
            load_tabular(&t.path, &t.schema)?
        }
        DataSource::Har => load_har_pooled(&d.har.as_ref().ok_or_else(|| missing("har"))?.path)?,
    };
    if let Some(path) = &d.embeddings {
        dataset = load_frozen_embeddings(path)?.apply(&dataset)?;
    }
    if d.standardize {
        dataset.standardize();
    }

    let split_seed = derive(cfg.seed, stream::PARTITION, 0);
    let c = &cfg.clients;
    let (shards, task_names, task_labels) = match c.layout {
        ClientLayout::Uniform => {
            let shards =
                partition_uniform(&dataset, c.count, c.tasks, split_seed, d.train_fraction)?;
            let names = dataset.task_names()[..c.tasks].to_vec();
            (shards, names, (0..c.tasks).collect())
        }
        ClientLayout::BySubject => {
            let shards = partition_by_subject(&dataset, c.label, split_seed, d.train_fraction)?;
            let subjects: BTreeSet<u32> = dataset.subject_ids.iter().flatten().copied().collect();
            let names = subjects.iter().map(|s| format!("subject_{s}")).collect();
            let labels = vec![c.label; shards.len()];
            (shards, names, labels)
        }
    };
    Ok(PreparedData {
        dataset,
        shards,
        task_names,
        task_labels,
    })
}

fn output_layer(width: usize) -> LayerSpec {
    LayerSpec {
        width,
        activation: if width == 1 {
            Activation::Sigmoid
        } else {
            Activation::Softmax
        },
    }
}

fn architecture(
    cfg: &ExperimentConfig,
    input_dim: usize,
    output: LayerSpec,
) -> Result<ArchitectureSpec> {
    let mut layers: Vec<LayerSpec> = cfg
        .model
        .hidden
        .iter()
        .map(|&width| LayerSpec {
            width,
            activation: cfg.model.hidden_activation,
        })
        .collect();
    layers.push(output);
    ArchitectureSpec::new(input_dim, layers)
}

/// Output width shared by every task's label column.
fn task_output_width(data: &PreparedData) -> Result<usize> {
    let widths: BTreeSet<usize> = data
        .task_labels
        .iter()
        .map(|&l| data.dataset.labels[l].output_width())
        .collect();
    match widths.len() {
        1 => Ok(*widths.first().unwrap()),
        _ => Err(Error::Config(
            "task label columns need equal output widths to share one architecture".into(),
        )),
    }
}

fn empty_split(features: usize, targets: usize) -> Split {
    Split {
        rows: Vec::new(),
        features: Tensor2::zeros(0, features),
        targets: Tensor2::zeros(0, targets),
    }
}

fn hstack(parts: &[Tensor2]) -> Tensor2 {
    let rows = parts.first().map_or(0, Tensor2::rows);
    let cols = parts.iter().map(Tensor2::cols).sum();
    let mut out = Tensor2::zeros(rows, cols);
    for r in 0..rows {
        let mut c0 = 0;
        for p in parts {
            out.row_mut(r)[c0..c0 + p.cols()].copy_from_slice(p.row(r));
            c0 += p.cols();
        }
    }
    out
}

fn columns(t: &Tensor2, range: Range<usize>) -> Tensor2 {
    if range.start == 0 && range.end == t.cols() {
        return t.clone();
    }
    let mut out = Tensor2::zeros(t.rows(), range.len());
    for r in 0..t.rows() {
        out.row_mut(r).copy_from_slice(&t.row(r)[range.clone()]);
    }
    out
}

/// A task's pooled test rows and the output columns holding its prediction.
#[derive(Debug, Clone)]
struct PooledTask {
    split: Split,
    outputs: Range<usize>,
    loss: LossKind,
}

/// Scores the single client of a centralized run on per-task pooled test sets.
#[derive(Debug, Clone)]
struct PooledEvaluator {
    tasks: Vec<PooledTask>,
}

impl Evaluator for PooledEvaluator {
    fn evaluate(&self, fed: &Federation) -> Result<Vec<Score>> {
        let model = fed.client_model(&fed.clients[0])?;
        self.tasks
            .par_iter()
            .map(|t| {
                if t.split.is_empty() {
                    return Ok(Score::default());
                }
                let out = predict(model.layers(), &t.split.features)?;
                score_outputs(&columns(&out, t.outputs.clone()), &t.split.targets, t.loss)
            })
            .collect()
    }
}

fn pooled_test(data: &PreparedData, task: usize) -> Result<Split> {
    let parts: Vec<&Split> = data.shards_of(task).map(|s| &s.test).collect();
    Split::concat(&parts)
}

/// Trains one model on a single pooled client.
///
/// Trainable layers run as personal layers, so a round is plain local SGD
/// with no server round trip.
#[allow(clippy::too_many_arguments)]
fn run_centralized(
    cfg: &ExperimentConfig,
    kind: ScenarioKind,
    hp: &FederationHyperparams,
    arch: ArchitectureSpec,
    train: Split,
    label: usize,
    evaluator: &PooledEvaluator,
    model_index: u64,
) -> Result<Vec<RoundRecord>> {
    let tags = cfg
        .scenario_tags(kind)
        .into_iter()
        .map(|t| {
            if t == LayerGroup::Pretrained {
                t
            } else {
                LayerGroup::Personal
            }
        })
        .collect();
    let layout = ModelLayout::new(arch, tags)?;
    let init = build_partitioned_model(&layout, derive(hp.seed, stream::MODEL, model_index))?;
    let test = empty_split(train.features.cols(), train.targets.cols());
    let shard = Shard {
        client_id: 0,
        task_id: 0,
        label,
        train,
        test,
    };
    let mut fed = Federation::new(layout, &init, vec![shard], hp.seed)?;
    let hp = FederationHyperparams {
        clients_per_group: 1,
        ..hp.clone()
    };
    fed.run_training_with(&hp, evaluator)
}

fn centralized_separate(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    hp: &FederationHyperparams,
) -> Result<Vec<RoundRecord>> {
    let labels: BTreeSet<usize> = data.task_labels.iter().copied().collect();
    let all_train: Vec<usize> = data
        .shards
        .iter()
        .flat_map(|s| s.train.rows.iter().copied())
        .collect();
    let mut per_label = Vec::new();
    for &label in &labels {
        let column = &data.dataset.labels[label];
        let width = column.output_width();
        let arch = architecture(cfg, data.dataset.feature_dim(), output_layer(width))?;
        let loss = LossKind::for_output(arch.layers.last().unwrap().activation);
        let tasks: Vec<usize> = (0..data.task_count())
            .filter(|&t| data.task_labels[t] == label)
            .collect();
        let evaluator = PooledEvaluator {
            tasks: tasks
                .iter()
                .map(|&t| {
                    Ok(PooledTask {
                        split: pooled_test(data, t)?,
                        outputs: 0..width,
                        loss,
                    })
                })
                .collect::<Result<_>>()?,
        };
        let train = Split::new(&data.dataset, label, all_train.clone());
        let records = run_centralized(
            cfg,
            ScenarioKind::CentralizedSeparate,
            hp,
            arch,
            train,
            label,
            &evaluator,
            label as u64,
        )?;
        per_label.push((tasks, records));
    }

    // one record per round, scores placed at their task positions
    let mut merged = Vec::with_capacity(hp.rounds);
    for r in 0..hp.rounds {
        let mut scores = vec![Score::default(); data.task_count()];
        let mut wall = 0.0;
        let mut loss = 0.0;
        for (tasks, records) in &per_label {
            let rec = &records[r];
            for (t, s) in tasks.iter().zip(&rec.task_scores) {
                scores[*t] = *s;
            }
            wall += rec.wall_clock_secs;
            loss += rec.train_loss;
        }
        merged.push(RoundRecord {
            round: r + 1,
            task_scores: scores,
            train_loss: loss / per_label.len() as f64,
            wall_clock_secs: wall,
        });
    }
    Ok(merged)
}

fn centralized_joint(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    hp: &FederationHyperparams,
) -> Result<Vec<RoundRecord>> {
    let labels: Vec<usize> = data
        .task_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let widths: Vec<usize> = labels
        .iter()
        .map(|&l| data.dataset.labels[l].output_width())
        .collect();
    let output = match widths.as_slice() {
        [w] => output_layer(*w),
        ws if ws.iter().all(|&w| w == 1) => LayerSpec {
            width: ws.len(),
            activation: Activation::Sigmoid,
        },
        _ => {
            return Err(Error::Config(
                "a joint model over several multi-class label columns is not supported".into(),
            ))
        }
    };
    let arch = architecture(cfg, data.dataset.feature_dim(), output)?;
    let column_loss = |w: usize| LossKind::for_output(output_layer(w).activation);

    let mut offsets = Vec::with_capacity(labels.len());
    let mut acc = 0;
    for w in &widths {
        offsets.push(acc..acc + w);
        acc += w;
    }
    let position = |label: usize| labels.iter().position(|&l| l == label).unwrap();
    let evaluator = PooledEvaluator {
        tasks: (0..data.task_count())
            .map(|t| {
                let p = position(data.task_labels[t]);
                Ok(PooledTask {
                    split: pooled_test(data, t)?,
                    outputs: offsets[p].clone(),
                    loss: column_loss(widths[p]),
                })
            })
            .collect::<Result<_>>()?,
    };

    let rows: Vec<usize> = data
        .shards
        .iter()
        .flat_map(|s| s.train.rows.iter().copied())
        .collect();
    let targets = hstack(
        &labels
            .iter()
            .map(|&l| data.dataset.labels[l].targets(&rows))
            .collect::<Vec<_>>(),
    );
    let train = Split {
        features: data.dataset.features.select_rows(&rows),
        targets,
        rows,
    };
    run_centralized(
        cfg,
        ScenarioKind::CentralizedJoint,
        hp,
        arch,
        train,
        labels[0],
        &evaluator,
        0,
    )
}

fn distributed(
    cfg: &ExperimentConfig,
    kind: ScenarioKind,
    data: &PreparedData,
    hp: &FederationHyperparams,
) -> Result<Vec<RoundRecord>> {
    let arch = architecture(
        cfg,
        data.dataset.feature_dim(),
        output_layer(task_output_width(data)?),
    )?;
    let layout = ModelLayout::new(arch, cfg.scenario_tags(kind))?;
    let init = build_partitioned_model(&layout, derive(hp.seed, stream::MODEL, 0))?;
    let mut fed = Federation::new(layout, &init, data.shards.clone(), hp.seed)?;
    let mut hp = hp.clone();
    if kind == ScenarioKind::DistributedSeparate {
        // isolated clients: everyone trains every round
        let sizes: BTreeSet<usize> = fed.groups().iter().map(Vec::len).collect();
        if sizes.len() != 1 {
            return Err(Error::Config(
                "separate training needs task groups of equal size".into(),
            ));
        }
        hp.clients_per_group = *sizes.first().unwrap();
    }
    fed.run_training(&hp)
}

/// Runs one scenario on prepared data with the given hyperparameters.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    kind: ScenarioKind,
    hp: &FederationHyperparams,
) -> Result<MetricsLog> {
    hp.validate()?;
    let records = match kind {
        ScenarioKind::CentralizedSeparate => centralized_separate(cfg, data, hp)?,
        ScenarioKind::CentralizedJoint => centralized_joint(cfg, data, hp)?,
        ScenarioKind::DistributedSeparate
        | ScenarioKind::DistributedSeparateFl
        | ScenarioKind::DistributedMultiTaskFl => distributed(cfg, kind, data, hp)?,
    };
    Ok(MetricsLog {
        scenario: kind,
        task_names: data.task_names.clone(),
        records,
    })
}

/// Loads the data and runs one scenario with the `[federation]` hyperparameters.
pub fn run_scenario(cfg: &ExperimentConfig, kind: ScenarioKind) -> Result<MetricsLog> {
    let data = prepare_data(cfg)?;
    run_prepared(cfg, &data, kind, &cfg.hyperparams())
}
