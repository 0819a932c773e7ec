use proptest::prelude::*;

use tree_recon::analytic::{
    iterate_g, iterate_reconstruction_map, poisson_tail_above, poisson_tail_below, threshold_bounds, DecayMap, ThresholdParams,
};
use tree_recon::bp::PosteriorEngine;
use tree_recon::coupling::sample_coupled;
use tree_recon::rng::{trial_rng, Purpose};
use tree_recon::runner::agreement_sweep;
use tree_recon::{frozen_root, root_posterior, sample_broadcast, Channel, Colour, RootChoice, TreeSpec};

fn tree_strategy() -> impl Strategy<Value = TreeSpec> {
    prop_oneof![
        (1u32..=3, 1u32..=3).prop_map(|(d, n)| TreeSpec::regular(d, n).unwrap()),
        (0.5f64..3.0, 1u32..=3).prop_map(|(m, n)| TreeSpec::gw_poisson(m, n).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_equivariance(k in 2usize..=5, tree in tree_strategy(), seed: u64, shift in 1u32..5) {
        let ch = Channel::colouring(k).unwrap();
        let cfg = sample_broadcast(&ch, tree, RootChoice::Uniform, seed).unwrap();
        let shift = shift % k as u32;
        let perm = |c: Colour| Colour((c.0 + shift) % k as u32);
        let mut moved = cfg.clone();
        moved.leaves.iter_mut().for_each(|c| *c = perm(*c));
        let a = root_posterior(&ch, &cfg).unwrap();
        let b = root_posterior(&ch, &moved).unwrap();
        for i in 0..k {
            prop_assert!((a.probs()[i] - b.probs()[(i + shift as usize) % k]).abs() < 1e-12);
        }
    }

    #[test]
    fn bp_matches_enumeration(k in 2usize..=4, tree in tree_strategy(), seed: u64) {
        let s = agreement_sweep(&Channel::colouring(k).unwrap(), tree, 0, 6, seed).unwrap();
        prop_assert!(s.passes(), "{:?}", s);
    }

    #[test]
    fn child_beliefs_reproduce_root(k in 2usize..=5, tree in tree_strategy(), seed: u64) {
        let ch = Channel::colouring(k).unwrap();
        let cfg = sample_broadcast(&ch, tree, RootChoice::Fixed(Colour(0)), seed).unwrap();
        let (root, children) = PosteriorEngine::new().posterior_with_children(&ch, &cfg).unwrap();
        // f(i) proportional to prod_j (1 - Y_ij)
        let w: Vec<f64> = (0..k).map(|i| children.iter().map(|y| 1.0 - y.probs()[i]).product()).collect();
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-200);
        for i in 0..k {
            prop_assert!((root.probs()[i] - w[i] / total).abs() < 1e-10);
        }
    }

    #[test]
    fn poisson_tails_complement(mean in 1e-3f64..1e5, frac in 0.0f64..2.0) {
        let t = (mean * frac).floor() as u64;
        let below = poisson_tail_below(mean, t).unwrap();
        let at_least = if t == 0 { 1.0 } else { poisson_tail_above(mean, t - 1).unwrap() };
        prop_assert!((below + at_least - 1.0).abs() < 1e-12, "{} {}", below, at_least);
    }

    #[test]
    fn threshold_bounds_ordered(k in 3u64..2_000_000) {
        let b = threshold_bounds(k).unwrap();
        prop_assert!(b.lower < b.upper);
        prop_assert!((b.upper - b.lower - k as f64 * std::f64::consts::LN_2).abs() < 1e-6 * b.upper);
    }

    #[test]
    fn decay_trace_monotone(k in 3u64..100_000, beta in -0.5f64..1.5, offset in -0.5f64..0.5) {
        let params = ThresholdParams::new(k, beta).unwrap();
        let delta = (k as f64 * (params.d + offset)).max(0.0).floor() as u64;
        let run = iterate_g(k, beta, delta, 10_000, 1e-12).unwrap();
        let g1 = DecayMap { params, p: run.tail }.eval(1.0);
        // g is increasing, so the trace moves monotonically in the direction of its first step
        if g1 < 1.0 {
            prop_assert!(run.trace.values.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(run.monotone);
        } else {
            prop_assert!(run.trace.values.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn freezing_trace_monotone(k in 3u64..100_000, beta in 0.5f64..2.0, offset in -0.5f64..0.5) {
        let params = ThresholdParams::new(k, beta).unwrap();
        let delta = (k as f64 * (params.d + offset)).ceil() as u64;
        let run = iterate_reconstruction_map(k, beta, delta, 10_000, 1e-12).unwrap();
        prop_assert!(run.monotone);
        prop_assert!(run.trace.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn coupling_dominance(k in 2usize..=8, delta in 0u32..60, d in 0.05f64..20.0, seed: u64) {
        let c = sample_coupled(k, delta, d, seed).unwrap();
        let total: u32 = c.poisson.iter().sum();
        prop_assert!(c.dominated);
        prop_assert_eq!(c.multinomial.iter().sum::<u32>(), delta);
        if total >= delta {
            prop_assert!(c.multinomial.iter().zip(&c.poisson).all(|(b, p)| b <= p));
        }
        if total <= delta {
            prop_assert!(c.multinomial.iter().zip(&c.poisson).all(|(b, p)| b >= p));
        }
    }
}

#[test]
fn frozen_iff_posterior_is_a_point_mass() {
    let mut engine = PosteriorEngine::new();
    let mut frozen = 0;
    for t in 0..10_000u64 {
        let k = 2 + (t % 4) as usize;
        let tree = match t % 3 {
            0 => TreeSpec::regular(1 + (t % 5) as u32, 1 + (t % 3) as u32).unwrap(),
            1 => TreeSpec::regular(2 * k as u32, 2).unwrap(),
            _ => TreeSpec::gw_poisson(1.0 + (t % 7) as f64, 2).unwrap(),
        };
        let ch = Channel::colouring(k).unwrap();
        let b = tree_recon::broadcast::Broadcaster::new(&ch, tree).unwrap();
        let cfg = b.sample(RootChoice::Uniform, &mut trial_rng(3, Purpose::Configs, t)).unwrap();
        let max = root_posterior(&ch, &cfg).unwrap().probs().iter().copied().fold(0.0, f64::max);
        let f = frozen_root(&ch, &cfg).unwrap();
        assert_eq!(f, engine.frozen(&ch, &cfg).unwrap());
        assert_eq!(f, max >= 1.0 - 1e-9, "trial {t}: max {max}");
        frozen += f as u32;
    }
    assert!(frozen > 1000 && frozen < 9000, "{frozen}");
}

#[test]
fn scalar_inequality_below_one_minus_ln2() {
    // x < exp(x - beta) / 2 for every x when beta < 1 - ln 2
    let edge = 1.0 - std::f64::consts::LN_2;
    for beta in [edge - 1e-3, edge - 0.05, 0.0, -1.0] {
        let mut x = -20.0;
        while x <= 20.0 {
            assert!(x < 0.5 * (x - beta).exp(), "beta={beta} x={x}");
            x += 1e-4;
        }
    }
    // and it fails somewhere just above the edge
    let beta = edge + 1e-3;
    let x = std::f64::consts::LN_2 + beta;
    assert!(x >= 0.5 * (x - beta).exp());
}
