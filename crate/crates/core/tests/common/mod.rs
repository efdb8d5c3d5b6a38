#![allow(dead_code)]

use efvae::consistency::make_consistent_pair;
use efvae::numeric::log_sum_exp;
use efvae::spaces::{DataDistribution, FiniteSpace};
use efvae::vae::{Conditional, EfVae, InputMode, Latent};
use efvae::{ExponentialFamily, Mlp};
use nalgebra::DMatrix;
use rand::Rng;

/// Finite families with at most 16 support points.
pub fn random_finite_family<R: Rng>(rng: &mut R) -> ExponentialFamily {
    match rng.random_range(0..5) {
        0 => ExponentialFamily::bernoulli(rng.random_range(1..=3)),
        1 => ExponentialFamily::spins(rng.random_range(1..=3)),
        2 => ExponentialFamily::categorical(rng.random_range(2..=5)),
        3 => ExponentialFamily::multinomial(3, rng.random_range(1..=3)),
        _ => ExponentialFamily::bernoulli(4),
    }
}

pub fn support(family: &ExponentialFamily) -> FiniteSpace {
    FiniteSpace::new(family.enumerate_support().unwrap()).unwrap()
}

/// A random MLP whose parameters are uniform in `[-scale, scale]`.
pub fn random_net<R: Rng>(rng: &mut R, dims: &[usize], scale: f64) -> Mlp {
    let mut net = Mlp::random(dims, rng).unwrap();
    let p: Vec<f64> = (0..net.num_params())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    net.set_params(&p).unwrap();
    net
}

pub fn random_log_prior<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut lp: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lse = log_sum_exp(&lp);
    lp.iter_mut().for_each(|v| *v -= lse);
    lp
}

/// Random finite VAE with statistics inputs and `hidden` extra layers of
/// width 5. Returns the model and the observation space.
pub fn random_vae<R: Rng>(
    rng: &mut R,
    obs: ExponentialFamily,
    lat: ExponentialFamily,
    hidden: usize,
) -> (EfVae, FiniteSpace) {
    let (n, m) = (obs.stat_dim(), lat.stat_dim());
    let mut ddims = vec![m];
    let mut edims = vec![n];
    for _ in 0..hidden {
        ddims.push(5);
        edims.push(5);
    }
    ddims.push(n);
    edims.push(m);
    let space = support(&lat);
    let vae = EfVae::new(
        Latent::Finite {
            log_prior: random_log_prior(rng, space.len()),
            space,
        },
        Conditional::new(obs.clone(), random_net(rng, &ddims, 1.5), InputMode::Stats),
        Conditional::new(lat, random_net(rng, &edims, 1.5), InputMode::Stats),
    )
    .unwrap();
    (vae, support(&obs))
}

pub fn random_pd<R: Rng>(rng: &mut R, space: FiniteSpace) -> DataDistribution {
    let masses: Vec<f64> = (0..space.len()).map(|_| rng.random_range(0.2..1.0)).collect();
    DataDistribution::from_masses(space, masses).unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Random consistent pair over the given families.
pub fn random_consistent<R: Rng>(
    rng: &mut R,
    obs: ExponentialFamily,
    lat: ExponentialFamily,
    scale: f64,
) -> (EfVae, FiniteSpace) {
    let (n, m) = (obs.stat_dim(), lat.stat_dim());
    let w = random_matrix(rng, n, m, scale);
    let u = random_vec(rng, n, scale);
    let v = random_vec(rng, m, scale);
    let space = support(&lat);
    let vae = make_consistent_pair(&w, &u, &v, obs.clone(), lat, space).unwrap();
    (vae, support(&obs))
}

/// Log-density by explicit enumeration of the support: the normalizer is
/// summed term by term rather than taken from the closed form.
pub fn enumerated_log_density(family: &ExponentialFamily, eta: &[f64], point: &[f64]) -> f64 {
    let term = |p: &[f64]| {
        let t = family.sufficient_stats(p).unwrap();
        family.log_base_measure(p).unwrap() + t.iter().zip(eta).map(|(a, b)| a * b).sum::<f64>()
    };
    let all: Vec<f64> = family
        .enumerate_support()
        .unwrap()
        .iter()
        .map(|p| term(p))
        .collect();
    term(point) - log_sum_exp(&all)
}

/// Smallest ReLU pre-activation margin of the networks of a VAE over the
/// given inputs.
pub fn min_margin(vae: &EfVae, xs: &FiniteSpace) -> f64 {
    let mut margin = f64::INFINITY;
    for x in xs.iter() {
        let t = vae.encoder.net.forward_trace(&vae.encoder_input(x).unwrap()).unwrap();
        margin = margin.min(t.min_hidden_margin());
    }
    if let Some(zs) = vae.latent_space() {
        for z in zs.iter() {
            let t = vae.decoder.net.forward_trace(&vae.decoder_input(z).unwrap()).unwrap();
            margin = margin.min(t.min_hidden_margin());
        }
    }
    margin
}

/// Central finite difference of `f` at `params` along every coordinate.
pub fn central_diff(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            p[i] = params[i] + h;
            let up = f(&p);
            p[i] = params[i] - h;
            let down = f(&p);
            p[i] = params[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| ≤ tol · max(1, |a|, |b|)` for every coordinate.
pub fn assert_close_rel(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let scale = 1f64.max(x.abs()).max(y.abs());
        assert!(
            (x - y).abs() <= tol * scale,
            "{what}[{i}]: {x} vs {y}"
        );
    }
}
