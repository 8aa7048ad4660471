mod common;

use approx::assert_relative_eq;
use common::{oracle_forward, random_labels, random_small_network, random_tensor, rng};
use llg_core::nn::{cross_entropy_loss, Network};
use llg_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

/// Fraction of parameters whose analytic gradient matches central differences.
fn finite_difference_agreement(net: &Network, batch: &Tensor, labels: &[usize]) -> f64 {
    let (_, grads, _) = net.loss_and_gradients(batch, labels).unwrap();
    let analytic: Vec<f64> = grads.values().copied().collect();
    assert_eq!(analytic.len(), net.param_count());
    let h = 1e-4;
    let mut probe = net.clone();
    let mut ok = 0;
    for (i, &a) in analytic.iter().enumerate() {
        let w = net.param(i);
        probe.set_param(i, w + h);
        let up = probe.loss(batch, labels).unwrap();
        probe.set_param(i, w - h);
        let down = probe.loss(batch, labels).unwrap();
        probe.set_param(i, w);
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel <= 1e-3 {
            ok += 1;
        }
    }
    ok as f64 / analytic.len() as f64
}

#[test]
fn backward_matches_finite_differences_on_random_networks() {
    let mut r = rng(11);
    for _ in 0..20 {
        let (net, shape) = random_small_network(&mut r);
        let b = r.random_range(1..=4);
        let batch = random_tensor(vec![b, shape.iter().product()], &mut r);
        let labels = random_labels(net.n_classes(), b, &mut r);
        let agreement = finite_difference_agreement(&net, &batch, &labels);
        assert!(agreement >= 0.99, "only {agreement} of parameters agree");
    }
}

#[test]
fn stock_cnn_backward_matches_finite_differences() {
    let net = Network::small_cnn([1, 6, 6], 3, 5).unwrap();
    let mut r = rng(2);
    let batch = random_tensor(vec![2, 36], &mut r);
    assert!(finite_difference_agreement(&net, &batch, &[0, 2]) >= 0.99);
}

#[test]
fn forward_matches_straight_loop_oracle() {
    let mut r = rng(3);
    for _ in 0..30 {
        let (net, shape) = random_small_network(&mut r);
        let batch = random_tensor(vec![3, shape.iter().product()], &mut r);
        let (logits, cache) = net.forward(&batch).unwrap();
        for s in 0..3 {
            let expected = oracle_forward(&net, batch.row(s));
            for (a, e) in logits.row(s).iter().zip(&expected) {
                assert_relative_eq!(*a, *e, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
        assert_eq!(cache.logits(), &logits);
    }
}

#[test]
fn stock_cnn_forward_matches_oracle() {
    let net = Network::small_cnn([1, 8, 8], 10, 9).unwrap();
    let batch = random_tensor(vec![2, 64], &mut rng(4));
    let (logits, cache) = net.forward(&batch).unwrap();
    assert_eq!(cache.penultimate().shape(), &[2, 128]);
    for s in 0..2 {
        let expected = oracle_forward(&net, batch.row(s));
        for (a, e) in logits.row(s).iter().zip(&expected) {
            assert_relative_eq!(*a, *e, epsilon = 1e-12);
        }
    }
}

#[test]
fn last_layer_gradient_is_outer_product_sum() {
    // dW = sum_b (dlogits_b)^T a_b with dlogits = (softmax - onehot)/B.
    let net = Network::mlp(5, 4, 3, llg_core::nn::Activation::Sigmoid, 8).unwrap();
    let batch = random_tensor(vec![4, 5], &mut rng(6));
    let labels = [0, 2, 2, 1];
    let (out, grads, cache) = net.loss_and_gradients(&batch, &labels).unwrap();
    let a = cache.penultimate();
    let logits = cache.logits();
    let w = grads.last_layer_weights();
    for i in 0..3 {
        for k in 0..4 {
            let mut expected = 0.0;
            for (b, &label) in labels.iter().enumerate() {
                let row = logits.row(b);
                let max = row.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let p = (row[i] - max).exp() / z;
                let y = if label == i { 1.0 } else { 0.0 };
                expected += (p - y) / 4.0 * a.row(b)[k];
            }
            assert_relative_eq!(w.data()[i * 4 + k], expected, epsilon = 1e-14);
        }
    }
    let recomputed = cross_entropy_loss(logits, &labels).unwrap();
    assert_eq!(recomputed.loss, out.loss);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn initialization_is_a_pure_function_of_the_seed(seed in any::<u64>()) {
        let a = Network::build(llg_core::nn::ModelKind::Mlp, 16, 4, seed).unwrap();
        let b = Network::build(llg_core::nn::ModelKind::Mlp, 16, 4, seed).unwrap();
        prop_assert!((0..a.param_count()).all(|i| a.param(i).to_bits() == b.param(i).to_bits()));
    }

    #[test]
    fn weights_respect_the_fan_in_bound(seed in any::<u64>(), d in 1usize..40, h in 1usize..20) {
        let net = Network::mlp(d, h, 3, llg_core::nn::Activation::Relu, seed).unwrap();
        let first = d * h + h;
        for i in 0..net.param_count() {
            let fan_in = if i < first { d } else { h };
            prop_assert!(net.param(i).abs() <= 1.0 / (fan_in as f64).sqrt());
        }
    }

    #[test]
    fn gradients_are_finite_for_large_inputs(seed in any::<u64>(), scale in 1.0f64..1e3) {
        let net = Network::mlp(6, 5, 4, llg_core::nn::Activation::Sigmoid, seed).unwrap();
        let mut batch = random_tensor(vec![3, 6], &mut rng(seed));
        batch.scale(scale);
        let (loss, grads, _) = net.loss_and_gradients(&batch, &[0, 1, 3]).unwrap();
        prop_assert!(loss.loss.is_finite());
        prop_assert!(grads.all_finite());
    }
}
