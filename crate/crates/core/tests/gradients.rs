mod common;

use common::{oracle, random_net, random_targets, random_tensor};
use mtfl_core::nn::{backward, finite_diff_grad, forward, Activation, LossKind};
use mtfl_core::seed::rng_from_seed;
use proptest::prelude::*;

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn hidden_activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Relu),
        Just(Activation::Sigmoid),
        Just(Activation::Identity)
    ]
}

fn head() -> impl Strategy<Value = (Activation, LossKind)> {
    prop_oneof![
        Just((Activation::Sigmoid, LossKind::BinaryCrossEntropy)),
        Just((Activation::Softmax, LossKind::CategoricalCrossEntropy)),
        Just((Activation::Identity, LossKind::MeanSquaredError)),
        Just((Activation::Sigmoid, LossKind::MeanSquaredError)),
        Just((Activation::Softmax, LossKind::MeanSquaredError)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backprop_matches_central_differences(
        seed in any::<u64>(),
        input in 1usize..=8,
        hidden in prop::collection::vec((1usize..=16, hidden_activation()), 0..=3),
        (out_act, loss) in head(),
        out_width in 1usize..=6,
        rows in 1usize..=8,
    ) {
        let out_width = if out_act == Activation::Softmax { out_width.max(2) } else { out_width };
        let mut spec = hidden.clone();
        spec.push((out_width, out_act));
        let mut rng = rng_from_seed(seed);
        let net = random_net(&mut rng, input, &spec);
        let x = random_tensor(&mut rng, rows, input);
        // finite differences are meaningless across a ReLU kink
        prop_assume!(oracle::min_relu_margin(&net, &x) > 1e-3);
        let y = random_targets(&mut rng, rows, out_width, loss);

        let (_, cache) = forward(&net, &x).unwrap();
        let bp: Vec<f64> = backward(&net, &cache, &y, loss).unwrap().values().collect();
        let fd = oracle::central_differences(&net, &x, &y, loss, 1e-5);
        prop_assert!(max_rel_err(&bp, &fd) <= 1e-4, "max rel err {}", max_rel_err(&bp, &fd));

        let lib_fd: Vec<f64> = finite_diff_grad(&net, &x, &y, loss, 1e-5).unwrap().values().collect();
        prop_assert!(max_rel_err(&bp, &lib_fd) <= 1e-4);
    }

    #[test]
    fn losses_are_non_negative(
        seed in any::<u64>(),
        (out_act, loss) in head(),
        rows in 1usize..=8,
    ) {
        let mut rng = rng_from_seed(seed);
        let net = random_net(&mut rng, 3, &[(4, Activation::Relu), (3, out_act)]);
        let x = random_tensor(&mut rng, rows, 3);
        let y = random_targets(&mut rng, rows, 3, loss);
        let (out, _) = forward(&net, &x).unwrap();
        prop_assert!(loss.value(&out, &y).unwrap() >= 0.0);
    }

    #[test]
    fn output_ranges(seed in any::<u64>(), rows in 1usize..=8, width in 2usize..=6) {
        let mut rng = rng_from_seed(seed);
        let x = random_tensor(&mut rng, rows, 4);
        let soft = random_net(&mut rng, 4, &[(5, Activation::Relu), (width, Activation::Softmax)]);
        let (p, _) = forward(&soft, &x).unwrap();
        for r in 0..rows {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let sig = random_net(&mut rng, 4, &[(width, Activation::Sigmoid)]);
        let (s, _) = forward(&sig, &x).unwrap();
        prop_assert!(s.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}

#[test]
fn oracle_forward_agrees_with_library() {
    let mut rng = rng_from_seed(42);
    let net = random_net(
        &mut rng,
        5,
        &[
            (7, Activation::Relu),
            (4, Activation::Sigmoid),
            (3, Activation::Softmax),
        ],
    );
    let x = random_tensor(&mut rng, 6, 5);
    let (out, _) = forward(&net, &x).unwrap();
    for r in 0..6 {
        for (a, b) in out.row(r).iter().zip(oracle::predict_row(&net, x.row(r))) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
