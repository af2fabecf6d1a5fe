use serde::{Deserialize, Serialize};

use super::layer::{forward, predict, Activation, DenseLayer, ForwardCache};
use super::loss::LossKind;
use super::tensor::{axpy, dot, Tensor2};
use crate::error::{Error, Result};

/// Gradient (or update) for one dense layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Tensor2::zeros(layer.output_width(), layer.input_width()),
            bias: vec![0.0; layer.output_width()],
        }
    }

    /// `before - after`, the descent delta between two versions of a layer.
    pub fn delta(before: &DenseLayer, after: &DenseLayer) -> Self {
        let weights = before
            .weights
            .data()
            .iter()
            .zip(after.weights.data())
            .map(|(b, a)| b - a)
            .collect();
        let bias = before
            .bias
            .iter()
            .zip(&after.bias)
            .map(|(b, a)| b - a)
            .collect();
        Self {
            weights: Tensor2::from_vec(before.weights.rows(), before.weights.cols(), weights)
                .expect("shape preserved"),
            bias,
        }
    }

    pub fn same_shape(&self, other: &LayerGrad) -> bool {
        self.weights.shape() == other.weights.shape() && self.bias.len() == other.bias.len()
    }

    pub fn matches(&self, layer: &DenseLayer) -> bool {
        self.weights.shape() == layer.weights.shape() && self.bias.len() == layer.bias.len()
    }

    /// Iterates weights then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.data().iter().chain(&self.bias).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= factor);
        self.bias.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &LayerGrad) {
        axpy(alpha, other.weights.data(), self.weights.data_mut());
        axpy(alpha, &other.bias, &mut self.bias);
    }
}

/// Per-layer gradients mirroring a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(layers: &[DenseLayer]) -> Self {
        Self {
            layers: layers.iter().map(LayerGrad::zeros_like).collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(LayerGrad::values)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LayerGrad::is_finite)
    }
}

/// Loss gradient with respect to the output layer's pre-activations.
fn output_delta(
    activation: Activation,
    loss: LossKind,
    z: &Tensor2,
    a: &Tensor2,
    targets: &Tensor2,
) -> Tensor2 {
    let n = a.rows() as f64;
    let k = a.cols() as f64;
    let mut delta = Tensor2::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        let p = a.row(r);
        let t = targets.row(r);
        let d = delta.row_mut(r);
        match loss {
            LossKind::CategoricalCrossEntropy => {
                // d/dz_j of -sum_i t_i ln p_i = p_j * sum(t) - t_j
                let mass: f64 = t.iter().sum();
                for j in 0..d.len() {
                    d[j] = (p[j] * mass - t[j]) / n;
                }
            }
            LossKind::BinaryCrossEntropy => {
                for j in 0..d.len() {
                    d[j] = (p[j] - t[j]) / (n * k);
                }
            }
            LossKind::MeanSquaredError => {
                for j in 0..d.len() {
                    d[j] = 2.0 * (p[j] - t[j]) / (n * k);
                }
                let zr = z.row(r);
                match activation {
                    Activation::Identity => {}
                    Activation::Relu => {
                        for j in 0..d.len() {
                            if zr[j] <= 0.0 {
                                d[j] = 0.0;
                            }
                        }
                    }
                    Activation::Sigmoid => {
                        for j in 0..d.len() {
                            d[j] *= p[j] * (1.0 - p[j]);
                        }
                    }
                    Activation::Softmax => {
                        let gp = dot(d, p);
                        for j in 0..d.len() {
                            d[j] = p[j] * (d[j] - gp);
                        }
                    }
                }
            }
        }
    }
    delta
}

/// Backpropagation with batch-mean reduction.
pub fn backward(
    layers: &[DenseLayer],
    cache: &ForwardCache,
    targets: &Tensor2,
    loss: LossKind,
) -> Result<GradientSet> {
    backward_from(layers, cache, targets, loss, 0)
}

/// Like [`backward`], but stops propagating below layer `first`.
///
/// Layers before `first` receive zero gradients; used to skip frozen prefixes.
pub fn backward_from(
    layers: &[DenseLayer],
    cache: &ForwardCache,
    targets: &Tensor2,
    loss: LossKind,
    first: usize,
) -> Result<GradientSet> {
    let last = layers
        .last()
        .ok_or_else(|| Error::Config("cannot backpropagate through an empty network".into()))?;
    loss.check_compatible(last.activation)?;
    if cache.pre_activations.len() != layers.len() {
        return Err(Error::shape(
            layers.len().min(cache.pre_activations.len()),
            "cache was produced by a different network",
        ));
    }
    let output = cache.output();
    if output.shape() != targets.shape() {
        return Err(Error::shape(
            layers.len() - 1,
            format!(
                "targets are {:?} but outputs are {:?}",
                targets.shape(),
                output.shape()
            ),
        ));
    }

    let mut grads = GradientSet::zeros_like(layers);
    let l_out = layers.len() - 1;
    let mut delta = output_delta(
        last.activation,
        loss,
        &cache.pre_activations[l_out],
        output,
        targets,
    );

    for l in (first..layers.len()).rev() {
        let input = &cache.activations[l];
        let g = &mut grads.layers[l];
        for r in 0..delta.rows() {
            let d = delta.row(r);
            let x = input.row(r);
            for (j, &dj) in d.iter().enumerate() {
                if dj != 0.0 {
                    axpy(dj, x, g.weights.row_mut(j));
                }
                g.bias[j] += dj;
            }
        }
        if l == first {
            break;
        }
        // propagate to the previous layer's pre-activations
        let w = &layers[l].weights;
        let prev_z = &cache.pre_activations[l - 1];
        let prev_a = &cache.activations[l];
        let prev_act = layers[l - 1].activation;
        let mut next = Tensor2::zeros(delta.rows(), w.cols());
        for r in 0..delta.rows() {
            let d = delta.row(r);
            let nr = next.row_mut(r);
            for (j, &dj) in d.iter().enumerate() {
                if dj != 0.0 {
                    axpy(dj, w.row(j), nr);
                }
            }
            match prev_act {
                Activation::Identity => {}
                Activation::Relu => {
                    for (v, z) in nr.iter_mut().zip(prev_z.row(r)) {
                        if *z <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                Activation::Sigmoid => {
                    for (v, a) in nr.iter_mut().zip(prev_a.row(r)) {
                        *v *= a * (1.0 - a);
                    }
                }
                Activation::Softmax => {
                    return Err(Error::shape(
                        l - 1,
                        "softmax only permitted on the final layer",
                    ))
                }
            }
        }
        delta = next;
    }
    Ok(grads)
}

/// Central finite-difference estimate of the loss gradient for every parameter.
pub fn finite_diff_grad(
    layers: &[DenseLayer],
    batch: &Tensor2,
    targets: &Tensor2,
    loss: LossKind,
    epsilon: f64,
) -> Result<GradientSet> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {epsilon}"
        )));
    }
    forward(layers, batch)?;
    let eval = |net: &[DenseLayer]| -> Result<f64> { loss.value(&predict(net, batch)?, targets) };

    let mut net = layers.to_vec();
    let mut grads = GradientSet::zeros_like(layers);
    for l in 0..net.len() {
        for i in 0..net[l].weights.data().len() {
            let orig = net[l].weights.data()[i];
            net[l].weights.data_mut()[i] = orig + epsilon;
            let up = eval(&net)?;
            net[l].weights.data_mut()[i] = orig - epsilon;
            let down = eval(&net)?;
            net[l].weights.data_mut()[i] = orig;
            grads.layers[l].weights.data_mut()[i] = (up - down) / (2.0 * epsilon);
        }
        for i in 0..net[l].bias.len() {
            let orig = net[l].bias[i];
            net[l].bias[i] = orig + epsilon;
            let up = eval(&net)?;
            net[l].bias[i] = orig - epsilon;
            let down = eval(&net)?;
            net[l].bias[i] = orig;
            grads.layers[l].bias[i] = (up - down) / (2.0 * epsilon);
        }
    }
    Ok(grads)
}

/// `param -= eta * grad` for each layer.
pub fn sgd_step(params: &mut [DenseLayer], grads: &[LayerGrad], eta: f64) -> Result<()> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Config(format!(
            "learning rate must be a non-negative finite number, got {eta}"
        )));
    }
    if params.len() != grads.len() {
        return Err(Error::shape(
            params.len().min(grads.len()),
            format!(
                "{} gradient entries for {} layers",
                grads.len(),
                params.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if !g.matches(p) {
            return Err(Error::shape(i, "gradient shape differs from parameters"));
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        axpy(-eta, g.weights.data(), p.weights.data_mut());
        axpy(-eta, &g.bias, &mut p.bias);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_layer(w: f64, b: f64, act: Activation) -> DenseLayer {
        DenseLayer::new(Tensor2::from_vec(1, 1, vec![w]).unwrap(), vec![b], act).unwrap()
    }

    #[test]
    fn zero_error_gives_zero_gradients() {
        let layer = DenseLayer::new(
            Tensor2::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap(),
            vec![0.1, -0.3],
            Activation::Identity,
        )
        .unwrap();
        let x = Tensor2::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let (y, cache) = forward(std::slice::from_ref(&layer), &x).unwrap();
        let g = backward(&[layer], &cache, &y, LossKind::MeanSquaredError).unwrap();
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn sigmoid_bce_gradient_at_origin() {
        let layer = scalar_layer(0.0, 0.0, Activation::Sigmoid);
        let x = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let y = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let (_, cache) = forward(std::slice::from_ref(&layer), &x).unwrap();
        let g = backward(&[layer], &cache, &y, LossKind::BinaryCrossEntropy).unwrap();
        // dL/dz = sigmoid(0) - 1; bias gradient equals it directly
        assert_eq!(g.layers[0].bias[0], -0.5);
        assert_eq!(g.layers[0].weights.get(0, 0), -0.5);
    }

    #[test]
    fn incompatible_loss_is_config_error() {
        let layer = scalar_layer(1.0, 0.0, Activation::Identity);
        let x = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let (y, cache) = forward(std::slice::from_ref(&layer), &x).unwrap();
        let err = backward(&[layer], &cache, &y, LossKind::CategoricalCrossEntropy);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn finite_diff_matches_hand_derivative() {
        // L(w) = (w*x - t)^2 with x = 3, t = 2 → dL/dw = 2x(wx - t)
        let w = 0.7;
        let layer = scalar_layer(w, 0.0, Activation::Identity);
        let x = Tensor2::from_vec(1, 1, vec![3.0]).unwrap();
        let t = Tensor2::from_vec(1, 1, vec![2.0]).unwrap();
        let g = finite_diff_grad(&[layer], &x, &t, LossKind::MeanSquaredError, 1e-5).unwrap();
        let analytic = 2.0 * 3.0 * (w * 3.0 - 2.0);
        assert!((g.layers[0].weights.get(0, 0) - analytic).abs() < 1e-8);
        assert!((g.layers[0].bias[0] - 2.0 * (w * 3.0 - 2.0)).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_rejects_zero_epsilon() {
        let layer = scalar_layer(1.0, 0.0, Activation::Identity);
        let x = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        assert!(matches!(
            finite_diff_grad(&[layer], &x, &x, LossKind::MeanSquaredError, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dead_relu_network_has_flat_downstream_gradients() {
        // first layer maps everything to a negative pre-activation
        let l1 = DenseLayer::new(
            Tensor2::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            vec![-5.0, -5.0],
            Activation::Relu,
        )
        .unwrap();
        let l2 = DenseLayer::new(
            Tensor2::from_rows(&[vec![0.3, -0.7]]).unwrap(),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap();
        let x = Tensor2::from_rows(&[vec![1.0, 0.5], vec![-0.2, 0.1]]).unwrap();
        let t = Tensor2::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let net = [l1, l2];
        let g = finite_diff_grad(&net, &x, &t, LossKind::MeanSquaredError, 1e-5).unwrap();
        assert!(g.layers[0].values().all(|v| v == 0.0));
        assert!(g.layers[1].weights.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = [scalar_layer(1.0, 1.0, Activation::Identity)];
        let g = LayerGrad {
            weights: Tensor2::from_vec(1, 1, vec![0.5]).unwrap(),
            bias: vec![0.0],
        };
        sgd_step(&mut p, std::slice::from_ref(&g), 0.1).unwrap();
        assert_eq!(p[0].weights.get(0, 0), 0.95);
        assert_eq!(p[0].bias[0], 1.0);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut p = [DenseLayer::zeros(2, 1, Activation::Identity)];
        let g = LayerGrad::zeros_like(&DenseLayer::zeros(3, 1, Activation::Identity));
        assert!(matches!(
            sgd_step(&mut p, &[g], 0.1),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn least_squares_converges_to_slope_two() {
        // y = 2x, slope-only model; closed-form minimizer w* = 2 and the
        // iteration contracts by 1 - 0.2 * mean(x^2) = 0.625 per step
        let xs = [0.5, 1.0, 1.5, 2.0];
        let x = Tensor2::from_vec(4, 1, xs.to_vec()).unwrap();
        let y = Tensor2::from_vec(4, 1, xs.iter().map(|v| 2.0 * v).collect()).unwrap();
        let mut net = [DenseLayer::zeros(1, 1, Activation::Identity)];
        for _ in 0..50 {
            let (_, cache) = forward(&net, &x).unwrap();
            let mut g = backward(&net, &cache, &y, LossKind::MeanSquaredError).unwrap();
            g.layers[0].bias[0] = 0.0;
            sgd_step(&mut net, &g.layers, 0.1).unwrap();
        }
        assert!((net[0].weights.get(0, 0) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = [scalar_layer(0.3, -0.4, Activation::Identity)];
        let before = p.clone();
        let g = LayerGrad::zeros_like(&p[0]);
        sgd_step(&mut p, &[g], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn delta_is_before_minus_after() {
        let a = scalar_layer(1.0, 2.0, Activation::Identity);
        let b = scalar_layer(0.25, 3.0, Activation::Identity);
        let d = LayerGrad::delta(&a, &b);
        assert_eq!(d.weights.get(0, 0), 0.75);
        assert_eq!(d.bias[0], -1.0);
    }
}
