use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::layer::{Activation, ArchitectureSpec, DenseLayer};
use super::tensor::Tensor2;
use crate::error::Result;
use crate::seed::rng_from_seed;

/// Seeded initialization: He-normal for ReLU layers, Glorot-uniform otherwise, zero biases.
pub fn init_weights(spec: &ArchitectureSpec, seed: u64) -> Result<Vec<DenseLayer>> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    Ok(spec
        .fans()
        .zip(&spec.layers)
        .map(|((fan_in, fan_out), l)| init_layer(fan_in, fan_out, l.activation, &mut rng))
        .collect())
}

fn init_layer<R: Rng>(
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    rng: &mut R,
) -> DenseLayer {
    let n = fan_in * fan_out;
    let data: Vec<f64> = match activation {
        Activation::Relu => {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            normal.sample_iter(&mut *rng).take(n).collect()
        }
        _ => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Uniform::new_inclusive(-limit, limit)
                .sample_iter(&mut *rng)
                .take(n)
                .collect()
        }
    };
    DenseLayer {
        weights: Tensor2::from_vec(fan_out, fan_in, data).expect("sized above"),
        bias: vec![0.0; fan_out],
        activation,
    }
}
