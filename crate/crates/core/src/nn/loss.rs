use serde::{Deserialize, Serialize};

use super::layer::Activation;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossEntropy,
    CategoricalCrossEntropy,
    MeanSquaredError,
}

impl LossKind {
    /// The natural loss for an output activation.
    pub fn for_output(activation: Activation) -> LossKind {
        match activation {
            Activation::Sigmoid => LossKind::BinaryCrossEntropy,
            Activation::Softmax => LossKind::CategoricalCrossEntropy,
            Activation::Relu | Activation::Identity => LossKind::MeanSquaredError,
        }
    }

    pub fn check_compatible(self, output: Activation) -> Result<()> {
        match (self, output) {
            (LossKind::BinaryCrossEntropy, a) if a != Activation::Sigmoid => Err(Error::Config(
                format!("binary cross-entropy requires a sigmoid output, found {a:?}"),
            )),
            (LossKind::CategoricalCrossEntropy, a) if a != Activation::Softmax => {
                Err(Error::Config(format!(
                    "categorical cross-entropy requires a softmax output, found {a:?}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Batch-mean loss.
    ///
    /// BCE and MSE average over output columns as well; CCE sums over classes.
    pub fn value(self, output: &Tensor2, targets: &Tensor2) -> Result<f64> {
        if output.shape() != targets.shape() {
            return Err(Error::shape(
                0,
                format!(
                    "targets are {:?} but outputs are {:?}",
                    targets.shape(),
                    output.shape()
                ),
            ));
        }
        let n = output.rows().max(1) as f64;
        let k = output.cols().max(1) as f64;
        let pairs = output.data().iter().zip(targets.data());
        let total: f64 = match self {
            LossKind::MeanSquaredError => pairs.map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / k,
            LossKind::BinaryCrossEntropy => {
                pairs
                    .map(|(p, t)| {
                        let p = p.clamp(CLAMP, 1.0 - CLAMP);
                        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                    })
                    .sum::<f64>()
                    / k
            }
            LossKind::CategoricalCrossEntropy => pairs
                .map(|(p, t)| -(t * p.clamp(CLAMP, 1.0 - CLAMP).ln()))
                .sum(),
        };
        Ok(total / n)
    }
}
