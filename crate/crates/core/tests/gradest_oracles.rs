mod common;

use common::*;
use efvae::consistency::{linear_gaussian_pair, make_consistent_pair};
use efvae::gradest::{
    arm_gradient, arm_sample, bernoulli_expectation_gradient, exact_elbo_gradient,
    exact_kl_gap_gradient, exact_loglik_gradient, reparam_gradient, set_vae_params, vae_params,
};
use efvae::spaces::{DataDistribution, FiniteSpace};
use efvae::vae::EfVae;
use efvae::{BitEncoding, ExponentialFamily};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KINK_MARGIN: f64 = 1e-4;

fn fd_of(vae: &EfVae, pd: &DataDistribution, f: impl Fn(&EfVae, &DataDistribution) -> f64) -> Vec<f64> {
    let base = vae_params(vae);
    let mut probe = vae.clone();
    central_diff(&base, 1e-5, |p| {
        set_vae_params(&mut probe, p).unwrap();
        f(&probe, pd)
    })
}

#[test]
fn exact_elbo_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 50 {
        let obs = random_finite_family(&mut rng);
        let lat = random_finite_family(&mut rng);
        let hidden = rng.random_range(0..2);
        let (vae, xs) = random_vae(&mut rng, obs, lat, hidden);
        if min_margin(&vae, &xs) < KINK_MARGIN {
            continue;
        }
        let pd = random_pd(&mut rng, xs);
        let g = exact_elbo_gradient(&vae, &pd).unwrap().concat();
        let fd = fd_of(&vae, &pd, |v, pd| v.elbo_exact(pd).unwrap());
        assert_close_rel(&g, &fd, 1e-5, "elbo gradient");
        checked += 1;
    }
}

#[test]
fn gradient_decomposition_and_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut checked = 0;
    while checked < 20 {
        let obs = random_finite_family(&mut rng);
        let lat = random_finite_family(&mut rng);
        let (vae, xs) = random_vae(&mut rng, obs, lat, 1);
        if min_margin(&vae, &xs) < KINK_MARGIN {
            continue;
        }
        let pd = random_pd(&mut rng, xs);
        let e = exact_elbo_gradient(&vae, &pd).unwrap().concat();
        let l = exact_loglik_gradient(&vae, &pd).unwrap().concat();
        let k = exact_kl_gap_gradient(&vae, &pd).unwrap().concat();
        for i in 0..e.len() {
            assert!((e[i] - (l[i] - k[i])).abs() < 1e-8, "coordinate {i}");
        }
        let fd_l = fd_of(&vae, &pd, |v, pd| v.loglik_exact(pd).unwrap());
        assert_close_rel(&l, &fd_l, 1e-5, "loglik gradient");
        let fd_k = fd_of(&vae, &pd, |v, pd| v.kl_gap(pd).unwrap());
        assert_close_rel(&k, &fd_k, 1e-5, "kl gradient");
        checked += 1;
    }
}

#[test]
fn decoder_ignoring_z_has_loglik_theta_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut vae, xs) = random_vae(&mut rng, ExponentialFamily::bernoulli(3), ExponentialFamily::bernoulli(2), 0);
    let layer = &mut vae.decoder.net.layers_mut()[0];
    for i in 0..layer.outputs() {
        for j in 0..layer.inputs() {
            layer.set_weight(i, j, 0.0);
        }
    }
    let pd = random_pd(&mut rng, xs);
    let e = exact_elbo_gradient(&vae, &pd).unwrap();
    let l = exact_loglik_gradient(&vae, &pd).unwrap();
    // with zero weights the decoder is the bias alone; weight entries would
    // reintroduce z and are not parameters of a z-free decoder
    let nw = e.theta.len() - 3;
    for (a, b) in e.theta[nw..].iter().zip(&l.theta[nw..]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn gradient_vanishes_at_consistent_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let w = random_matrix(&mut rng, 3, 2, 1.0);
    let vae = make_consistent_pair(
        &w,
        &random_vec(&mut rng, 3, 1.0),
        &random_vec(&mut rng, 2, 1.0),
        ExponentialFamily::bernoulli(3),
        ExponentialFamily::bernoulli(2),
        FiniteSpace::binary(2, BitEncoding::ZeroOne).unwrap(),
    )
    .unwrap();
    // data equal to the model's own marginal: the likelihood is at its
    // global maximum and the posterior gap at its minimum
    let xs = FiniteSpace::binary(3, BitEncoding::ZeroOne).unwrap();
    let masses: Vec<f64> = xs.iter().map(|x| vae.log_marginal(x).unwrap().exp()).collect();
    let pd = DataDistribution::from_masses(xs, masses).unwrap();
    assert!(exact_elbo_gradient(&vae, &pd).unwrap().norm() < 1e-6);
}

#[test]
fn arm_single_bit_matches_sigmoid_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let n = 100_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let g = arm_sample(&[0.0], &mut |z: &[f64]| z[0], &mut rng)[0];
        sum += g;
        sq += g * g;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - 0.25).abs() <= 3.0 * se, "{mean} ± {se}");
}

/// Mean and standard error per coordinate over `n` single ARM draws.
pub fn arm_moments<R: Rng>(logits: &[f64], table: &[f64], n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let m = logits.len();
    let mut objective = |z: &[f64]| {
        let idx = z.iter().fold(0usize, |acc, b| 2 * acc + *b as usize);
        table[idx]
    };
    let mut sum = vec![0.0; m];
    let mut sq = vec![0.0; m];
    for _ in 0..n {
        let g = arm_sample(logits, &mut objective, rng);
        for j in 0..m {
            sum[j] += g[j];
            sq[j] += g[j] * g[j];
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let se = (0..m)
        .map(|j| ((sq[j] / n as f64 - mean[j] * mean[j]) / n as f64).sqrt())
        .collect();
    (mean, se)
}

#[test]
fn arm_unbiased_on_random_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let logits = random_vec(&mut rng, 3, 1.5);
    let table = random_vec(&mut rng, 8, 2.0);
    let exact = bernoulli_expectation_gradient(&logits, |z| {
        table[z.iter().fold(0usize, |acc, b| 2 * acc + *b as usize)]
    })
    .unwrap();
    let (mean, se) = arm_moments(&logits, &table, 1_000_000, &mut rng);
    for j in 0..3 {
        assert!((mean[j] - exact[j]).abs() <= 3.0 * se[j], "bit {j}: {} vs {}", mean[j], exact[j]);
    }
    assert!(arm_gradient(&logits, |_| 0.0, &mut rng, 0).is_err());
}

#[test]
fn enumeration_oracle_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let logits = random_vec(&mut rng, 3, 1.0);
    let table = random_vec(&mut rng, 8, 1.0);
    let obj = |z: &[f64]| table[z.iter().fold(0usize, |acc, b| 2 * acc + *b as usize)];
    let expectation = |l: &[f64]| -> f64 {
        let fam = ExponentialFamily::bernoulli(3);
        FiniteSpace::binary(3, BitEncoding::ZeroOne)
            .unwrap()
            .iter()
            .map(|z| fam.log_density(l, z).unwrap().exp() * obj(z))
            .sum()
    };
    let fd = central_diff(&logits, 1e-6, expectation);
    let exact = bernoulli_expectation_gradient(&logits, obj).unwrap();
    assert_close_rel(&exact, &fd, 1e-7, "enumeration gradient");
}

/// Closed-form ELBO of a 1D linear Gaussian model with separate encoder
/// weight: decoder `N(s_d²(w z + a), s_d²)`, encoder natural parameters
/// `(w_e x + b, c)`.
fn closed_form_elbo(x: f64, p: &[f64], c: f64, sigma_d: f64) -> f64 {
    let (w, a, we, b) = (p[0], p[1], p[2], p[3]);
    let s2d = sigma_d * sigma_d;
    let var = -1.0 / (2.0 * c);
    let mean = (we * x + b) * var;
    let resid = x - s2d * (w * mean + a);
    let recon = -0.5 * (2.0 * std::f64::consts::PI * s2d).ln()
        - (resid * resid + s2d * s2d * w * w * var) / (2.0 * s2d);
    recon - 0.5 * (var + mean * mean - 1.0 - var.ln())
}

fn one_d_model(p: &[f64], c: f64, sigma_d: f64) -> EfVae {
    let mut vae = linear_gaussian_pair(&DMatrix::from_element(1, 1, p[0]), &[p[1]], &[p[3]], &[c], sigma_d).unwrap();
    vae.encoder.net.layers_mut()[0].set_weight(0, 0, p[2]);
    vae
}

#[test]
fn reparam_matches_closed_form_gradient() {
    let params = [0.9, -0.4, 0.6, 0.3];
    let (c, sd, x) = (-0.7, 0.8, 1.1);
    let vae = one_d_model(&params, c, sd);
    let fd = central_diff(&params, 1e-6, |p| closed_form_elbo(x, p, c, sd));
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    // 100 batches of 100 draws: k = 10⁴ in total
    let batches: Vec<Vec<f64>> = (0..100)
        .map(|_| reparam_gradient(&vae, &[x], &mut rng, 100).unwrap().concat())
        .collect();
    for j in 0..4 {
        let vals: Vec<f64> = batches.iter().map(|b| b[j]).collect();
        let mean = vals.iter().sum::<f64>() / 100.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0;
        let se = (var / 100.0).sqrt();
        assert!((mean - fd[j]).abs() <= 3.0 * se.max(1e-12), "param {j}: {mean} vs {} (se {se})", fd[j]);
    }
}

#[test]
fn reparam_with_decoder_ignoring_z_is_kl_gradient() {
    let params = [0.0, 0.5, 0.7, -0.2];
    let (c, sd, x) = (-1.3, 1.1, -0.6);
    let vae = one_d_model(&params, c, sd);
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let g = reparam_gradient(&vae, &[x], &mut rng, 7).unwrap();
    // φ = (w_e, b); only the KL term depends on it
    let neg_kl = |p: &[f64]| {
        let var = -1.0 / (2.0 * c);
        let mean = (p[0] * x + p[1]) * var;
        -0.5 * (var + mean * mean - 1.0 - var.ln())
    };
    let fd = central_diff(&params[2..], 1e-6, neg_kl);
    assert_close_rel(&g.phi, &fd, 1e-7, "kl gradient");
}

#[test]
fn reparam_variance_vanishes_with_noise() {
    let spread = |c: f64| {
        let vae = one_d_model(&[0.9, -0.4, 0.6, 0.3], c, 0.8);
        let vals: Vec<f64> = (0..20)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                reparam_gradient(&vae, &[1.1], &mut rng, 1).unwrap().theta[0]
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / 20.0;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0
    };
    // σ_e = 1e-6 corresponds to c = −1/(2·1e-12)
    let wide = spread(-0.5);
    let narrow = spread(-0.5e12);
    assert!(narrow < 1e-9 * wide.max(1e-300) || narrow < 1e-20, "{narrow} vs {wide}");
}
