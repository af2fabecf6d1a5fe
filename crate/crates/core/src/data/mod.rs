//! Datasets, synthetic generation, frozen embeddings and client sharding.

mod dataset;
mod embeddings;
mod shard;
mod synthetic;
mod tabular;

pub use dataset::{LabelColumn, TabularDataset};
pub use embeddings::{load_frozen_embeddings, FrozenEmbeddings};
pub use shard::{partition_by_subject, partition_uniform, Shard, Split};
pub use synthetic::{gen_synthetic_multitask, SyntheticConfig, TaskRule};
pub use tabular::{
    load_har, load_har_pooled, load_tabular, Delimiter, HarSplit, LabelSpec, TabularSchema,
    HAR_CLASSES, HAR_FEATURES,
};
