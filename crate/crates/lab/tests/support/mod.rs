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

pub fn random_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// A network with parameters uniform in `[-scale, scale]`.
pub fn random_net<R: Rng>(rng: &mut R, dims: &[usize], scale: f64) -> Mlp {
    let mut net = Mlp::random(dims, rng).unwrap();
    let p = random_vec(rng, net.num_params(), scale);
    net.set_params(&p).unwrap();
    net
}

pub fn random_log_prior<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let lp = random_vec(rng, len, 1.0);
    let lse = log_sum_exp(&lp);
    lp.iter().map(|v| v - lse).collect()
}

/// Random finite VAE on statistics inputs with `hidden` extra layers of
/// width 5; returns the model and its observation space.
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
    let vae = make_consistent_pair(&w, &u, &v, obs.clone(), lat.clone(), support(&lat)).unwrap();
    (vae, support(&obs))
}

/// Smallest ReLU pre-activation magnitude over the encoder inputs `xs` and
/// all latent points.
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

/// Largest `|a − b| / max(1, |a|, |b|)` over coordinates.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}
