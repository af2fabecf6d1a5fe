//! Multi-task binary classification data driven by a shared latent factor.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{LabelColumn, TabularDataset};
use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskRule {
    /// `y = [w_t · z > 0]`
    Linear,
    /// `y = [v_t · tanh(U z) > 0]` with `U` shared by all tasks.
    Nonlinear { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub tasks: usize,
    pub rule: TaskRule,
    #[serde(default)]
    pub label_noise: f64,
    /// Std of i.i.d. Gaussian noise added to every feature before standardizing.
    #[serde(default)]
    pub feature_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.latent_dim == 0 || self.feature_dim == 0 || self.tasks == 0 {
            return Err(Error::Config(
                "synthetic sizes (samples, latent, features, tasks) must be positive".into(),
            ));
        }
        if let TaskRule::Nonlinear { hidden: 0 } = self.rule {
            return Err(Error::Config("nonlinear rule needs hidden > 0".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label noise {} outside [0, 0.5)",
                self.label_noise
            )));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::Config("feature noise must be non-negative".into()));
        }
        Ok(())
    }
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor2 {
    let data = StandardNormal.sample_iter(rng).take(rows * cols).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}

/// Generates features `x = A z (+ noise)`, standardized, with one binary label per task.
pub fn gen_synthetic_multitask(cfg: &SyntheticConfig) -> Result<TabularDataset> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mixing = gaussian_matrix(cfg.feature_dim, cfg.latent_dim, &mut rng);
    let rules: Vec<(Option<Tensor2>, Tensor2)> = match cfg.rule {
        TaskRule::Linear => (0..cfg.tasks)
            .map(|_| (None, gaussian_matrix(1, cfg.latent_dim, &mut rng)))
            .collect(),
        TaskRule::Nonlinear { hidden } => {
            let shared = gaussian_matrix(hidden, cfg.latent_dim, &mut rng);
            (0..cfg.tasks)
                .map(|_| (Some(shared.clone()), gaussian_matrix(1, hidden, &mut rng)))
                .collect()
        }
    };

    let latent = gaussian_matrix(cfg.n_samples, cfg.latent_dim, &mut rng);
    let mut features = latent.matmul_transposed(&mixing);
    if cfg.feature_noise > 0.0 {
        for v in features.data_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.feature_noise * e;
        }
    }

    let mut labels = Vec::with_capacity(cfg.tasks);
    for (t, (shared, head)) in rules.iter().enumerate() {
        let score = match shared {
            None => latent.matmul_transposed(head),
            Some(u) => {
                let mut h = latent.matmul_transposed(u);
                h.data_mut().iter_mut().for_each(|v| *v = v.tanh());
                h.matmul_transposed(head)
            }
        };
        let values = score
            .data()
            .iter()
            .map(|s| {
                let y = usize::from(*s > 0.0);
                if cfg.label_noise > 0.0 && rng.gen::<f64>() < cfg.label_noise {
                    1 - y
                } else {
                    y
                }
            })
            .collect();
        labels.push(LabelColumn {
            name: format!("task{}", t + 1),
            arity: 2,
            values,
        });
    }
    let mut ds = TabularDataset::new(features, labels, None)?;
    ds.standardize();
    Ok(ds)
}
