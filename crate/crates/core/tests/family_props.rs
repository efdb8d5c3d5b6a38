mod common;

use common::*;
use efvae::numeric::log_sum_exp;
use efvae::spaces::{weighted_dot, DataDistribution, FiniteSpace};
use efvae::{AdamConfig, AdamState, ExponentialFamily, Mlp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finite_family() -> impl Strategy<Value = ExponentialFamily> {
    prop_oneof![
        (1usize..=4).prop_map(ExponentialFamily::bernoulli),
        (1usize..=4).prop_map(ExponentialFamily::spins),
        (2usize..=6).prop_map(ExponentialFamily::categorical),
        ((2usize..=4), (0u64..=5)).prop_map(|(k, l)| ExponentialFamily::multinomial(k, l)),
    ]
}

fn family_and_eta() -> impl Strategy<Value = (ExponentialFamily, Vec<f64>)> {
    finite_family().prop_flat_map(|f| {
        let d = f.stat_dim();
        (Just(f), prop::collection::vec(-3.0f64..3.0, d))
    })
}

/// Composite Simpson rule for `∫ exp(η₁x + η₂x²) dx` on a window of ±14
/// standard deviations around the mode.
fn gaussian_quadrature(eta1: f64, eta2: f64) -> f64 {
    let var = -1.0 / (2.0 * eta2);
    let mode = eta1 * var;
    let half = 14.0 * var.sqrt();
    let n = 20_000;
    let h = 2.0 * half / n as f64;
    let shift = eta1 * mode + eta2 * mode * mode;
    let f = |x: f64| (eta1 * x + eta2 * x * x - shift).exp();
    let mut s = f(mode - half) + f(mode + half);
    for i in 1..n {
        let x = mode - half + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    (s * h / 3.0).ln() + shift
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn finite_families_normalize((family, eta) in family_and_eta()) {
        let total: f64 = family
            .enumerate_support()
            .unwrap()
            .iter()
            .map(|p| family.log_density(&eta, p).unwrap().exp())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_partition_matches_enumeration((family, eta) in family_and_eta()) {
        let terms: Vec<f64> = family
            .enumerate_support()
            .unwrap()
            .iter()
            .map(|p| {
                let t = family.sufficient_stats(p).unwrap();
                family.log_base_measure(p).unwrap() + t.iter().zip(&eta).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        prop_assert!((log_sum_exp(&terms) - family.log_partition(&eta).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn mean_stats_is_partition_gradient((family, eta) in family_and_eta()) {
        let fd = central_diff(&eta, 1e-6, |e| family.log_partition(e).unwrap());
        let mean = family.mean_stats(&eta).unwrap();
        for (a, b) in mean.iter().zip(&fd) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn stats_are_injective_on_finite_supports(family in finite_family()) {
        let pts = family.enumerate_support().unwrap();
        let stats: Vec<Vec<u64>> = pts
            .iter()
            .map(|p| family.sufficient_stats(p).unwrap().iter().map(|v| v.to_bits()).collect())
            .collect();
        let unique: std::collections::HashSet<_> = stats.iter().collect();
        prop_assert_eq!(unique.len(), pts.len());
    }

    #[test]
    fn weighted_norm_and_cauchy_schwarz(
        masses in prop::collection::vec(0.0f64..1.0, 1..12),
        seed in any::<u64>(),
    ) {
        prop_assume!(masses.iter().sum::<f64>() > 1e-3);
        let space = FiniteSpace::categorical(masses.len());
        let pd = DataDistribution::from_masses(space, masses.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_vec(&mut rng, masses.len(), 5.0);
        let v = random_vec(&mut rng, masses.len(), 5.0);
        let uu = weighted_dot(&u, &u, &pd).unwrap();
        let vv = weighted_dot(&v, &v, &pd).unwrap();
        let uv = weighted_dot(&u, &v, &pd).unwrap();
        prop_assert!(uu >= 0.0);
        prop_assert!(uv * uv <= uu * vv + 1e-12);
        prop_assert_eq!(uv, weighted_dot(&v, &u, &pd).unwrap());
        // zero exactly when u vanishes on the support
        let masked: Vec<f64> = u.iter().zip(pd.weights()).map(|(a, w)| if *w > 0.0 { 0.0 } else { *a }).collect();
        prop_assert_eq!(weighted_dot(&masked, &masked, &pd).unwrap(), 0.0);
    }

    #[test]
    fn params_round_trip(seed in any::<u64>(), depth in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..6)).collect();
        let mut net = Mlp::random(&dims, &mut rng).unwrap();
        let p = random_vec(&mut rng, net.num_params(), 2.0);
        net.set_params(&p).unwrap();
        prop_assert_eq!(net.params(), p);
    }

    #[test]
    fn bias_free_relu_net_is_positively_homogeneous(seed in any::<u64>(), c in 0.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::random(&[3, 6, 4, 2], &mut rng).unwrap();
        for layer in net.layers_mut() {
            layer.bias_mut().iter_mut().for_each(|b| *b = 0.0);
        }
        let x = random_vec(&mut rng, 3, 2.0);
        let cx: Vec<f64> = x.iter().map(|v| v * c).collect();
        let y = net.forward(&x).unwrap();
        let cy = net.forward(&cx).unwrap();
        for (a, b) in y.iter().zip(&cy) {
            prop_assert!((a * c - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn adam_counter_and_descent(g in prop::collection::vec(-5.0f64..5.0, 1..6)) {
        let mut state = AdamState::new(g.len(), AdamConfig::default());
        let mut p = vec![0.0; g.len()];
        for step in 1..=5u64 {
            state.step(&mut p, &g).unwrap();
            prop_assert_eq!(state.steps(), step);
        }
        for (pi, gi) in p.iter().zip(&g) {
            if gi.abs() > 1e-6 {
                prop_assert!(pi.signum() == -gi.signum());
            }
        }
    }
}

#[test]
fn gaussian_partition_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let fam = ExponentialFamily::gaussian(1);
    for _ in 0..20 {
        let eta1 = rng.random_range(-3.0..3.0);
        let eta2 = -rng.random_range(0.05..3.0);
        let closed = fam.log_partition(&[eta1, eta2]).unwrap();
        let quad = gaussian_quadrature(eta1, eta2);
        assert!((closed - quad).abs() < 1e-6, "{closed} vs {quad}");
    }
}

#[test]
fn grad_params_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut checked = 0;
    while checked < 50 {
        let depth = rng.random_range(1..4);
        let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..6)).collect();
        let mut net = random_net(&mut rng, &dims, 1.0);
        let x = random_vec(&mut rng, dims[0], 2.0);
        let up = random_vec(&mut rng, *dims.last().unwrap(), 2.0);
        if net.forward_trace(&x).unwrap().min_hidden_margin() < 1e-4 {
            continue;
        }
        let g = net.grad_params(&x, &up).unwrap();
        let base = net.params();
        let fd = central_diff(&base, 1e-5, |p| {
            net.set_params(p).unwrap();
            net.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
        });
        assert_close_rel(&g, &fd, 1e-5, "network gradient");
        checked += 1;
    }
}
