use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::nn::{predict, DenseLayer, LossKind, Tensor2};

/// Correct count, sample count and summed loss for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Score {
    pub correct: usize,
    pub total: usize,
    pub loss_sum: f64,
}

impl Score {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn mean_loss(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.loss_sum / self.total as f64
        }
    }

    pub fn merge(&mut self, other: &Score) {
        self.correct += other.correct;
        self.total += other.total;
        self.loss_sum += other.loss_sum;
    }
}

/// Whether a prediction row matches its target row.
///
/// Single-column outputs are binary: class 1 at `p >= 0.5`. Wider outputs use argmax.
pub fn is_correct(prediction: &[f64], target: &[f64]) -> bool {
    if prediction.len() == 1 {
        (prediction[0] >= 0.5) == (target[0] >= 0.5)
    } else {
        argmax(prediction) == argmax(target)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Scores precomputed outputs against targets.
pub fn score_outputs(outputs: &Tensor2, targets: &Tensor2, loss: LossKind) -> Result<Score> {
    if outputs.shape() != targets.shape() {
        return Err(Error::Evaluation(format!(
            "outputs {:?} do not match targets {:?}",
            outputs.shape(),
            targets.shape()
        )));
    }
    let correct = (0..outputs.rows())
        .filter(|&r| is_correct(outputs.row(r), targets.row(r)))
        .count();
    let total = outputs.rows();
    let loss_sum = if total == 0 {
        0.0
    } else {
        loss.value(outputs, targets)? * total as f64
    };
    Ok(Score {
        correct,
        total,
        loss_sum,
    })
}

/// Test accuracy and mean loss of a model on a held-out split.
pub fn evaluate(layers: &[DenseLayer], split: &Split, loss: LossKind) -> Result<(f64, f64)> {
    if split.is_empty() {
        return Err(Error::Evaluation("test split is empty".into()));
    }
    let s = score_outputs(&predict(layers, &split.features)?, &split.targets, loss)?;
    Ok((s.accuracy(), s.mean_loss()))
}
