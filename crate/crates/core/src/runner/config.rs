use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{SyntheticConfig, TabularSchema};
use crate::error::{Error, Result};
use crate::federation::{AggregationRule, FederationHyperparams};
use crate::nn::Activation;
use crate::partition::LayerGroup;

/// The compared training setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// One model per label column on pooled data.
    CentralizedSeparate,
    /// One model for every task on pooled data.
    CentralizedJoint,
    /// Every client trains alone.
    DistributedSeparate,
    /// One federation per task group, no sharing across groups.
    DistributedSeparateFl,
    /// Common layers shared by all clients, task layers within a group.
    DistributedMultiTaskFl,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::CentralizedSeparate,
        ScenarioKind::CentralizedJoint,
        ScenarioKind::DistributedSeparate,
        ScenarioKind::DistributedSeparateFl,
        ScenarioKind::DistributedMultiTaskFl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::CentralizedSeparate => "centralized_separate",
            ScenarioKind::CentralizedJoint => "centralized_joint",
            ScenarioKind::DistributedSeparate => "distributed_separate",
            ScenarioKind::DistributedSeparateFl => "distributed_separate_fl",
            ScenarioKind::DistributedMultiTaskFl => "distributed_multi_task_fl",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ScenarioKind::CentralizedSeparate => "Centralized Separate",
            ScenarioKind::CentralizedJoint => "Centralized Joint",
            ScenarioKind::DistributedSeparate => "Distributed Separate",
            ScenarioKind::DistributedSeparateFl => "Distributed Separate FL",
            ScenarioKind::DistributedMultiTaskFl => "Distributed Multi-Task FL",
        }
    }

    /// Layer groups a scenario may use for its trainable layers.
    fn allowed_groups(self) -> &'static [LayerGroup] {
        use LayerGroup::*;
        match self {
            ScenarioKind::CentralizedSeparate | ScenarioKind::CentralizedJoint => {
                &[Pretrained, Common]
            }
            ScenarioKind::DistributedSeparate => &[Pretrained, Personal],
            ScenarioKind::DistributedSeparateFl => &[Pretrained, TaskSpecific, Personal],
            ScenarioKind::DistributedMultiTaskFl => &[Pretrained, Common, TaskSpecific, Personal],
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Tabular,
    Har,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSource {
    pub path: PathBuf,
    pub schema: TabularSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarSource {
    /// Directory holding `train/` and `test/` of the UCI HAR archive.
    pub path: PathBuf,
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Precomputed features replacing the raw ones (a frozen extractor's output).
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Standardize feature columns after loading (synthetic data already is).
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub tabular: Option<TabularSource>,
    #[serde(default)]
    pub har: Option<HarSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientLayout {
    /// Rows dealt evenly to `count` clients in `tasks` equal groups.
    Uniform,
    /// One client and one task per subject id.
    BySubject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientsConfig {
    pub layout: ClientLayout,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub tasks: usize,
    /// Label column used by `by_subject`.
    #[serde(default)]
    pub label: usize,
}

fn default_hidden_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; the output layer is added from the labels.
    pub hidden: Vec<usize>,
    #[serde(default = "default_hidden_activation")]
    pub hidden_activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// Tags of the multi-task FL model, one per layer including the output.
    pub tags: Vec<LayerGroup>,
    /// Explicit tags for other scenarios; otherwise derived from `tags`.
    #[serde(default)]
    pub overrides: BTreeMap<ScenarioKind, Vec<LayerGroup>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub clients_per_group: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub aggregation: AggregationRule,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub learning_rate: Option<Vec<f64>>,
    #[serde(default)]
    pub local_epochs: Option<Vec<usize>>,
    #[serde(default)]
    pub clients_per_group: Option<Vec<usize>>,
    #[serde(default)]
    pub batch_size: Option<Vec<usize>>,
}

/// A parsed and validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub scenarios: Vec<ScenarioKind>,
    pub dataset: DatasetConfig,
    pub clients: ClientsConfig,
    pub model: ModelConfig,
    pub partition: PartitionConfig,
    pub federation: FederationConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

/// One expanded grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub clients_per_group: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: origin.to_path_buf(),
                line,
                detail: e.message().to_string(),
            }
        })?;
        cfg.validate().map_err(|(key, detail)| Error::Parse {
            path: origin.to_path_buf(),
            line: line_of(text, &key),
            detail: format!("`{key}`: {detail}"),
        })?;
        let mut cfg = cfg;
        // relative data paths are resolved against the config file's directory
        if let Some(base) = origin.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            if let Some(t) = cfg.dataset.tabular.as_mut() {
                fix(&mut t.path);
            }
            if let Some(h) = cfg.dataset.har.as_mut() {
                fix(&mut h.path);
            }
            if let Some(e) = cfg.dataset.embeddings.as_mut() {
                fix(e);
            }
        }
        Ok(cfg)
    }

    /// Checks cross-field rules; errors name the offending key.
    fn validate(&self) -> std::result::Result<(), (String, String)> {
        let err = |k: &str, d: String| Err((k.to_string(), d));
        if self.scenarios.is_empty() {
            return err("scenarios", "at least one scenario is required".into());
        }
        let d = &self.dataset;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return err(
                "train_fraction",
                format!("{} outside (0, 1)", d.train_fraction),
            );
        }
        match d.source {
            DataSource::Synthetic if d.synthetic.is_none() => {
                return err("source", "`[dataset.synthetic]` section missing".into())
            }
            DataSource::Tabular if d.tabular.is_none() => {
                return err("source", "`[dataset.tabular]` section missing".into())
            }
            DataSource::Har if d.har.is_none() => {
                return err("source", "`[dataset.har]` section missing".into())
            }
            _ => {}
        }
        if let Some(s) = &d.synthetic {
            if let Err(e) = s.validate() {
                return err("synthetic", e.to_string());
            }
        }
        let c = &self.clients;
        if c.layout == ClientLayout::Uniform {
            if c.count == 0 || c.tasks == 0 {
                return err(
                    "count",
                    "uniform layout needs positive `count` and `tasks`".into(),
                );
            }
            if !c.count.is_multiple_of(c.tasks) {
                return err(
                    "count",
                    format!("{} clients cannot form {} equal groups", c.count, c.tasks),
                );
            }
        }
        if self.model.hidden.contains(&0) {
            return err("hidden", "hidden widths must be positive".into());
        }
        if self.model.hidden_activation == Activation::Softmax {
            return err(
                "hidden_activation",
                "softmax is only allowed on the output".into(),
            );
        }
        let layers = self.model.hidden.len() + 1;
        if self.partition.tags.len() != layers {
            return err(
                "tags",
                format!("{} tags for {layers} layers", self.partition.tags.len()),
            );
        }
        if self.partition.tags.windows(2).any(|w| w[1] < w[0]) {
            return err(
                "tags",
                "tags must run pretrained, common, task, personal".into(),
            );
        }
        for (kind, tags) in &self.partition.overrides {
            let key = kind.as_str();
            if tags.len() != layers {
                return err(key, format!("{} tags for {layers} layers", tags.len()));
            }
            if tags.windows(2).any(|w| w[1] < w[0]) {
                return err(
                    key,
                    "tags must run pretrained, common, task, personal".into(),
                );
            }
            if let Some(bad) = tags.iter().find(|t| !kind.allowed_groups().contains(t)) {
                return err(key, format!("scenario {kind} cannot use {bad} layers"));
            }
        }
        let f = &self.federation;
        let hp = FederationHyperparams {
            rounds: f.rounds,
            clients_per_group: f.clients_per_group,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            learning_rate: f.learning_rate,
            aggregation: f.aggregation,
            seed: self.seed,
        };
        if let Err(e) = hp.validate() {
            return err("federation", e.to_string());
        }
        let g = &self.grid;
        if g.learning_rate
            .as_ref()
            .is_some_and(|v| v.is_empty() || v.iter().any(|x| x.is_nan() || *x <= 0.0))
        {
            return err(
                "learning_rate",
                "grid values must be a non-empty list of positives".into(),
            );
        }
        for (key, v) in [
            ("local_epochs", &g.local_epochs),
            ("clients_per_group", &g.clients_per_group),
            ("batch_size", &g.batch_size),
        ] {
            if v.as_ref().is_some_and(|v| v.is_empty() || v.contains(&0)) {
                return err(
                    key,
                    "grid values must be a non-empty list of positives".into(),
                );
            }
        }
        Ok(())
    }

    /// Base hyperparameters from `[federation]`.
    pub fn hyperparams(&self) -> FederationHyperparams {
        let f = &self.federation;
        FederationHyperparams {
            rounds: f.rounds,
            clients_per_group: f.clients_per_group,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            learning_rate: f.learning_rate,
            aggregation: f.aggregation,
            seed: self.seed,
        }
    }

    /// Cartesian product of the grid axes; missing axes use `[federation]` values.
    ///
    /// Point `i` trains with seed `seed + i`.
    pub fn expand_grid(&self) -> Vec<GridPoint> {
        let f = &self.federation;
        let g = &self.grid;
        let lrs = g
            .learning_rate
            .clone()
            .unwrap_or_else(|| vec![f.learning_rate]);
        let eps = g
            .local_epochs
            .clone()
            .unwrap_or_else(|| vec![f.local_epochs]);
        let ks = g
            .clients_per_group
            .clone()
            .unwrap_or_else(|| vec![f.clients_per_group]);
        let bs = g.batch_size.clone().unwrap_or_else(|| vec![f.batch_size]);
        let mut points = Vec::with_capacity(lrs.len() * eps.len() * ks.len() * bs.len());
        for &learning_rate in &lrs {
            for &local_epochs in &eps {
                for &clients_per_group in &ks {
                    for &batch_size in &bs {
                        let index = points.len();
                        points.push(GridPoint {
                            index,
                            learning_rate,
                            local_epochs,
                            clients_per_group,
                            batch_size,
                            seed: self.seed.wrapping_add(index as u64),
                        });
                    }
                }
            }
        }
        points
    }

    /// Hyperparameters of one grid point.
    pub fn hyperparams_at(&self, p: &GridPoint) -> FederationHyperparams {
        FederationHyperparams {
            rounds: self.federation.rounds,
            clients_per_group: p.clients_per_group,
            local_epochs: p.local_epochs,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            aggregation: self.federation.aggregation,
            seed: p.seed,
        }
    }

    /// Effective tags of a scenario.
    pub fn scenario_tags(&self, kind: ScenarioKind) -> Vec<LayerGroup> {
        use LayerGroup::*;
        if let Some(t) = self.partition.overrides.get(&kind) {
            return t.clone();
        }
        let base = &self.partition.tags;
        let map = |f: fn(LayerGroup) -> LayerGroup| -> Vec<LayerGroup> {
            base.iter()
                .map(|&t| if t == Pretrained { t } else { f(t) })
                .collect()
        };
        match kind {
            ScenarioKind::DistributedMultiTaskFl => base.clone(),
            ScenarioKind::DistributedSeparateFl => map(|t| match t {
                Personal => Personal,
                _ => TaskSpecific,
            }),
            ScenarioKind::DistributedSeparate => map(|_| Personal),
            ScenarioKind::CentralizedSeparate | ScenarioKind::CentralizedJoint => map(|_| Common),
        }
    }
}

/// Line of the first `key = ...` assignment, inline tables included (0 when absent).
fn line_of(text: &str, key: &str) -> usize {
    let is_ident = |c: char| c.is_ascii_alphanumeric() || c == '_' || c == '-';
    for (i, line) in text.lines().enumerate() {
        let code = line.split('#').next().unwrap_or("");
        for (at, _) in code.match_indices(key) {
            let before_ok = code[..at].chars().next_back().is_none_or(|c| !is_ident(c));
            let rest = &code[at + key.len()..];
            let after_ok = rest.chars().next().is_some_and(|c| !is_ident(c));
            if before_ok && after_ok && rest.trim_start().starts_with('=') {
                return i + 1;
            }
        }
    }
    0
}

/// Reads and validates a TOML experiment file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml_str(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
seed = 3
scenarios = ["distributed_multi_task_fl"]

[dataset]
source = "synthetic"

[dataset.synthetic]
n_samples = 400
latent_dim = 3
feature_dim = 6
tasks = 2
rule = { kind = "linear" }

[clients]
layout = "uniform"
count = 4
tasks = 2

[model]
hidden = [8, 4]

[partition]
tags = ["common", "common", "task"]

[federation]
rounds = 2
clients_per_group = 2
local_epochs = 1
batch_size = 16
learning_rate = 0.1
"#;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_parses() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.scenarios, vec![ScenarioKind::DistributedMultiTaskFl]);
        assert_eq!(cfg.dataset.train_fraction, 0.8);
        assert_eq!(cfg.expand_grid().len(), 1);
        assert_eq!(cfg.expand_grid()[0].seed, 3);
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = MINIMAL.replace("learning_rate = 0.1", "learning_rate = 0.1\nmomentum = 0.9");
        match parse(&text) {
            Err(Error::Parse { line, detail, .. }) => {
                assert!(detail.contains("momentum"), "{detail}");
                let expected = text
                    .lines()
                    .position(|l| l.starts_with("momentum"))
                    .unwrap()
                    + 1;
                assert_eq!(line, expected);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn centralized_joint_rejects_personal_tags() {
        let text = MINIMAL.replace(
            "tags = [\"common\", \"common\", \"task\"]",
            "tags = [\"common\", \"common\", \"task\"]\noverrides = { centralized_joint = [\"common\", \"common\", \"personal\"] }",
        );
        match parse(&text) {
            Err(Error::Parse { detail, line, .. }) => {
                assert!(detail.contains("centralized_joint"), "{detail}");
                assert!(line > 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_expands_to_cartesian_product() {
        let text =
            format!("{MINIMAL}\n[grid]\nlearning_rate = [0.3, 0.1, 0.03]\nlocal_epochs = [1, 2]\n");
        let cfg = parse(&text).unwrap();
        let pts = cfg.expand_grid();
        assert_eq!(pts.len(), 3 * 2);
        assert_eq!(
            pts.iter().map(|p| p.seed).collect::<Vec<_>>(),
            (3..9).collect::<Vec<_>>()
        );
    }

    #[test]
    fn scenario_tags_are_derived() {
        use LayerGroup::*;
        let mut cfg = parse(MINIMAL).unwrap();
        cfg.partition.tags = vec![Pretrained, Common, TaskSpecific];
        assert_eq!(
            cfg.scenario_tags(ScenarioKind::DistributedSeparateFl),
            vec![Pretrained, TaskSpecific, TaskSpecific]
        );
        assert_eq!(
            cfg.scenario_tags(ScenarioKind::DistributedSeparate),
            vec![Pretrained, Personal, Personal]
        );
        assert_eq!(
            cfg.scenario_tags(ScenarioKind::CentralizedJoint),
            vec![Pretrained, Common, Common]
        );
    }

    #[test]
    fn bad_tag_order_rejected() {
        let text = MINIMAL.replace(
            "tags = [\"common\", \"common\", \"task\"]",
            "tags = [\"task\", \"common\", \"task\"]",
        );
        assert!(matches!(parse(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_section_rejected() {
        let text = MINIMAL.replace("source = \"synthetic\"", "source = \"har\"");
        assert!(matches!(parse(&text), Err(Error::Parse { .. })));
    }
}
