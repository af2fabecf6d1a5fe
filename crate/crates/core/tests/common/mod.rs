#![allow(dead_code)]

use mtfl_core::data::{
    gen_synthetic_multitask, partition_uniform, Shard, SyntheticConfig, TaskRule,
};
use mtfl_core::nn::{backward, forward, sgd_step, Activation, DenseLayer, LossKind, Tensor2};
use mtfl_core::seed::{derive, rng_from_seed, stream, SimRng};
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;

/// Scalar-loop forward pass and loss, written without the library's tensor code.
pub mod oracle {
    use super::*;

    fn act(a: Activation, z: &[f64]) -> Vec<f64> {
        match a {
            Activation::Identity => z.to_vec(),
            Activation::Relu => z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Activation::Sigmoid => z.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
            Activation::Softmax => {
                let m = z.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            }
        }
    }

    /// Pre-activations of every layer for one input row.
    pub fn pre_activations(layers: &[DenseLayer], x: &[f64]) -> Vec<Vec<f64>> {
        let mut h = x.to_vec();
        let mut out = Vec::new();
        for l in layers {
            let (rows, cols) = l.weights.shape();
            let mut z = vec![0.0; rows];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut s = l.bias[j];
                for (i, hi) in h.iter().enumerate().take(cols) {
                    s += l.weights.get(j, i) * hi;
                }
                *zj = s;
            }
            h = act(l.activation, &z);
            out.push(z);
        }
        out
    }

    pub fn predict_row(layers: &[DenseLayer], x: &[f64]) -> Vec<f64> {
        let z = pre_activations(layers, x);
        act(layers.last().unwrap().activation, z.last().unwrap())
    }

    /// Batch-mean loss; BCE and MSE also average over output columns.
    pub fn loss(layers: &[DenseLayer], x: &Tensor2, y: &Tensor2, kind: LossKind) -> f64 {
        let mut total = 0.0;
        for r in 0..x.rows() {
            let p = predict_row(layers, x.row(r));
            let t = y.row(r);
            let k = p.len() as f64;
            let clamp = |v: f64| v.clamp(1e-12, 1.0 - 1e-12);
            total += match kind {
                LossKind::MeanSquaredError => {
                    p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / k
                }
                LossKind::BinaryCrossEntropy => {
                    p.iter()
                        .zip(t)
                        .map(|(&a, &b)| -(b * clamp(a).ln() + (1.0 - b) * (1.0 - clamp(a)).ln()))
                        .sum::<f64>()
                        / k
                }
                LossKind::CategoricalCrossEntropy => p
                    .iter()
                    .zip(t)
                    .map(|(&a, &b)| -b * clamp(a).ln())
                    .sum::<f64>(),
            };
        }
        total / x.rows() as f64
    }

    /// Central differences of [`loss`], flattened as weights then bias per layer.
    pub fn central_differences(
        layers: &[DenseLayer],
        x: &Tensor2,
        y: &Tensor2,
        kind: LossKind,
        eps: f64,
    ) -> Vec<f64> {
        let mut net = layers.to_vec();
        let mut out = Vec::new();
        for l in 0..net.len() {
            for i in 0..net[l].weights.data().len() {
                let orig = net[l].weights.data()[i];
                net[l].weights.data_mut()[i] = orig + eps;
                let up = loss(&net, x, y, kind);
                net[l].weights.data_mut()[i] = orig - eps;
                let down = loss(&net, x, y, kind);
                net[l].weights.data_mut()[i] = orig;
                out.push((up - down) / (2.0 * eps));
            }
            for i in 0..net[l].bias.len() {
                let orig = net[l].bias[i];
                net[l].bias[i] = orig + eps;
                let up = loss(&net, x, y, kind);
                net[l].bias[i] = orig - eps;
                let down = loss(&net, x, y, kind);
                net[l].bias[i] = orig;
                out.push((up - down) / (2.0 * eps));
            }
        }
        out
    }

    /// Smallest |pre-activation| over the hidden ReLU units, across the batch.
    pub fn min_relu_margin(layers: &[DenseLayer], x: &Tensor2) -> f64 {
        let mut m = f64::INFINITY;
        for r in 0..x.rows() {
            for (l, z) in layers.iter().zip(pre_activations(layers, x.row(r))) {
                if l.activation == Activation::Relu {
                    m = z.iter().fold(m, |acc, v| acc.min(v.abs()));
                }
            }
        }
        m
    }
}

/// A random dense network with the given widths and activations.
pub fn random_net<R: Rng>(
    rng: &mut R,
    input: usize,
    spec: &[(usize, Activation)],
) -> Vec<DenseLayer> {
    let mut fan_in = input;
    spec.iter()
        .map(|&(w, a)| {
            let weights: Vec<f64> = (0..w * fan_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias = (0..w).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let layer =
                DenseLayer::new(Tensor2::from_vec(w, fan_in, weights).unwrap(), bias, a).unwrap();
            fan_in = w;
            layer
        })
        .collect()
}

pub fn random_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Targets valid for the loss: one-hot rows for CCE, 0/1 for BCE, reals for MSE.
pub fn random_targets<R: Rng>(rng: &mut R, rows: usize, cols: usize, kind: LossKind) -> Tensor2 {
    let mut t = Tensor2::zeros(rows, cols);
    for r in 0..rows {
        match kind {
            LossKind::CategoricalCrossEntropy => t.set(r, rng.gen_range(0..cols), 1.0),
            LossKind::BinaryCrossEntropy => {
                for c in 0..cols {
                    t.set(r, c, f64::from(rng.gen_bool(0.5) as u8));
                }
            }
            LossKind::MeanSquaredError => {
                for c in 0..cols {
                    t.set(r, c, rng.gen_range(-1.0..1.0));
                }
            }
        }
    }
    t
}

pub fn synthetic(
    n: usize,
    tasks: usize,
    rule: TaskRule,
    noise: f64,
    seed: u64,
) -> mtfl_core::data::TabularDataset {
    gen_synthetic_multitask(&SyntheticConfig {
        n_samples: n,
        latent_dim: 4,
        feature_dim: 8,
        tasks,
        rule,
        label_noise: noise,
        feature_noise: 0.0,
        seed,
    })
    .unwrap()
}

pub fn synthetic_shards(clients: usize, tasks: usize, per_client: usize, seed: u64) -> Vec<Shard> {
    let ds = synthetic(
        clients * per_client,
        tasks,
        TaskRule::Nonlinear { hidden: 6 },
        0.05,
        seed,
    );
    partition_uniform(&ds, clients, tasks, seed + 1, 0.8).unwrap()
}

/// Flat copy of every parameter, weights then bias per layer.
pub fn flat(layers: &[DenseLayer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.data().iter().chain(&l.bias).copied())
        .collect()
}

fn unflatten(template: &[DenseLayer], values: &[f64]) -> Vec<DenseLayer> {
    let mut out = template.to_vec();
    let mut i = 0;
    for l in &mut out {
        for v in l.weights.data_mut() {
            *v = values[i];
            i += 1;
        }
        for v in &mut l.bias {
            *v = values[i];
            i += 1;
        }
    }
    out
}

/// Shuffled mini-batch SGD for `epochs` passes, as a client would run it.
#[allow(clippy::too_many_arguments)]
pub fn local_sgd(
    layers: &mut [DenseLayer],
    x: &Tensor2,
    y: &Tensor2,
    rng: &mut SimRng,
    epochs: usize,
    batch: usize,
    eta: f64,
    loss: LossKind,
) {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let xb = x.select_rows(chunk);
            let yb = y.select_rows(chunk);
            let (_, cache) = forward(layers, &xb).unwrap();
            let g = backward(layers, &cache, &yb, loss).unwrap();
            sgd_step(layers, &g.layers, eta).unwrap();
        }
    }
}

pub struct FedAvgSpec {
    pub rounds: usize,
    pub k: usize,
    pub epochs: usize,
    pub batch: usize,
    pub eta: f64,
    pub seed: u64,
}

/// Textbook FedAvg on flat parameter vectors: sample `k` clients, train
/// locally, average the deltas weighted by sample count, step the global model.
///
/// The weighted average is evaluated as `Δ_1 + Σ_m (N_m/N)(Δ_m − Δ_1)` over
/// clients in ascending id order. Returns the global parameters after each round.
pub fn reference_fedavg(
    init: &[DenseLayer],
    shards: &[Shard],
    spec: &FedAvgSpec,
    loss: LossKind,
) -> Vec<Vec<f64>> {
    let mut ids: Vec<usize> = shards.iter().map(|s| s.client_id).collect();
    ids.sort_unstable();
    let mut rngs: Vec<SimRng> = ids
        .iter()
        .map(|&id| rng_from_seed(derive(spec.seed, stream::CLIENT, id as u64)))
        .collect();
    let mut sampler = rng_from_seed(derive(spec.seed, stream::SAMPLER, 0));
    let mut global = flat(init);
    let mut history = Vec::new();
    for _ in 0..spec.rounds {
        let mut chosen: Vec<usize> = index::sample(&mut sampler, ids.len(), spec.k).into_vec();
        chosen.sort_unstable();
        let mut deltas = Vec::new();
        let mut counts = Vec::new();
        for &pos in &chosen {
            let shard = shards.iter().find(|s| s.client_id == ids[pos]).unwrap();
            let mut local = unflatten(init, &global);
            local_sgd(
                &mut local,
                &shard.train.features,
                &shard.train.targets,
                &mut rngs[pos],
                spec.epochs,
                spec.batch,
                spec.eta,
                loss,
            );
            let after = flat(&local);
            deltas.push(
                global
                    .iter()
                    .zip(&after)
                    .map(|(b, a)| b - a)
                    .collect::<Vec<f64>>(),
            );
            counts.push(shard.train.len());
        }
        let total: usize = counts.iter().sum();
        let mut avg = deltas[0].clone();
        for (d, &n) in deltas.iter().zip(&counts).skip(1) {
            let w = n as f64 / total as f64;
            for ((a, v), base) in avg.iter_mut().zip(d).zip(&deltas[0]) {
                *a += w * (v - base);
            }
        }
        for (g, a) in global.iter_mut().zip(&avg) {
            *g -= a;
        }
        history.push(global.clone());
    }
    history
}
