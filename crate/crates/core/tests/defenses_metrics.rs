mod common;

use common::rng;
use llg_core::defenses::{dp_clip_and_noise, CompressionState, ThresholdScope};
use llg_core::metrics::{attack_success_rate, hellinger};
use llg_core::nn::{Activation, Gradients, Network};
use llg_core::LabelMultiset;
use proptest::prelude::*;
use rand::Rng;

fn template() -> Gradients {
    Network::mlp(6, 5, 4, Activation::Sigmoid, 0)
        .unwrap()
        .zero_gradients()
}

/// Gradient whose entries are multiples of 1/64 in [-8, 8]: sums of a few
/// dozen of them are exact in f64.
fn dyadic(rng: &mut impl Rng) -> Gradients {
    let mut g = template();
    g.values_mut()
        .for_each(|v| *v = rng.random_range(-512i32..=512) as f64 / 64.0);
    g
}

#[test]
fn compression_conserves_mass_exactly_over_rounds() {
    let mut r = rng(1);
    for scope in [ThresholdScope::Global, ThresholdScope::PerTensor] {
        let mut state = CompressionState::new(&template(), 0.6, scope).unwrap();
        let mut fed = template();
        let mut emitted = template();
        for _ in 0..50 {
            let g = dyadic(&mut r);
            fed.add_scaled(1.0, &g).unwrap();
            let out = state.compress(&g).unwrap();
            emitted.add_scaled(1.0, &out).unwrap();
            // Everything fed in is either emitted or still in the residual.
            for ((f, e), res) in fed
                .values()
                .zip(emitted.values())
                .zip(state.residual().values())
            {
                assert_eq!(*f, e + res);
            }
        }
    }
}

proptest! {
    #[test]
    fn compression_emits_at_most_the_kept_fraction(seed in any::<u64>(), theta in 0.0f64..0.99) {
        let mut r = rng(seed);
        let mut state = CompressionState::new(&template(), theta, ThresholdScope::Global).unwrap();
        let n = template().len();
        for _ in 0..3 {
            let mut g = template();
            g.values_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
            let out = state.compress(&g).unwrap();
            let kept = out.values().filter(|v| **v != 0.0).count();
            prop_assert!(kept <= ((1.0 - theta) * n as f64).ceil() as usize);
        }
    }

    #[test]
    fn clipping_never_increases_the_norm(seed in any::<u64>(), beta in 0.01f64..10.0, scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let mut g = template();
        g.values_mut().for_each(|v| *v = r.random_range(-1.0..1.0) * scale);
        let before = g.l2_norm();
        dp_clip_and_noise(&mut g, beta, 0.0, &mut r).unwrap();
        prop_assert!(g.l2_norm() <= before * (1.0 + 1e-12));
        prop_assert!(g.l2_norm() <= beta * (1.0 + 1e-12));
    }

    #[test]
    fn asr_is_symmetric_and_bounded(a in prop::collection::vec(0usize..6, 5), seed in any::<u64>()) {
        let total: usize = a.iter().sum::<usize>().max(1);
        let x = LabelMultiset::from_counts(if a.iter().sum::<usize>() == 0 { vec![1, 0, 0, 0, 0] } else { a.clone() });
        let mut r = rng(seed);
        let y = llg_core::attack::random_guess(5, total, &mut r);
        let s = attack_success_rate(&x, &y).unwrap();
        prop_assert_eq!(s, attack_success_rate(&y, &x).unwrap());
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(attack_success_rate(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn hellinger_is_a_metric(
        a in prop::collection::vec(0usize..6, 4),
        b in prop::collection::vec(0usize..6, 4),
        c in prop::collection::vec(0usize..6, 4),
    ) {
        prop_assume!(a.iter().sum::<usize>() > 0 && b.iter().sum::<usize>() > 0 && c.iter().sum::<usize>() > 0);
        let (x, y, z) = (LabelMultiset::from_counts(a), LabelMultiset::from_counts(b), LabelMultiset::from_counts(c));
        let dxy = hellinger(&x, &y).unwrap();
        prop_assert!(hellinger(&x, &x).unwrap().abs() < 1e-12);
        prop_assert!((dxy - hellinger(&y, &x).unwrap()).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&dxy));
        prop_assert!(dxy <= hellinger(&x, &z).unwrap() + hellinger(&z, &y).unwrap() + 1e-12);
    }
}

#[test]
fn asr_and_hellinger_rank_guesses_alike() {
    // A guess that moves more labels away from the truth scores worse on both.
    let truth = LabelMultiset::from_counts(vec![4, 2, 1, 1, 0]);
    let close = LabelMultiset::from_counts(vec![4, 2, 1, 0, 1]);
    let far = LabelMultiset::from_counts(vec![1, 1, 2, 2, 2]);
    assert!(
        attack_success_rate(&close, &truth).unwrap() > attack_success_rate(&far, &truth).unwrap()
    );
    assert!(hellinger(&close, &truth).unwrap() < hellinger(&far, &truth).unwrap());
}
