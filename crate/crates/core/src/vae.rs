//! Exponential-family VAEs: a prior over latents, a decoder `p(x|z)` and an
//! encoder `q(z|x)`, each an exponential family whose natural parameter is
//! produced by a small network.
//!
//! On finite latent spaces every quantity here (posterior, marginal
//! likelihood, ELBO and the posterior KL gap) is computed exactly by
//! enumeration with log-sum-exp.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::efcore::ExponentialFamily;
use crate::error::{check_len, Error, Result};
use crate::nets::{AffineMap, Mlp};
use crate::numeric::{kl_from_logs, log_normalize, log_sum_exp};
use crate::spaces::{DataDistribution, FiniteSpace};

/// What a network consumes from the conditioning point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// The raw point.
    Raw,
    /// Sufficient statistics of the point under its own family.
    Stats,
    /// One-hot ordinal of the point within a finite space.
    OneHot,
    /// `x / Σx`, for count vectors.
    Frequencies,
}

/// A conditional exponential family `p(y | c)` with natural parameter
/// `concat(net(input(c)), fixed_tail)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conditional {
    pub family: ExponentialFamily,
    pub net: Mlp,
    pub input: InputMode,
    #[serde(default)]
    pub fixed_tail: Vec<f64>,
}

impl Conditional {
    pub fn new(family: ExponentialFamily, net: Mlp, input: InputMode) -> Self {
        Conditional {
            family,
            net,
            input,
            fixed_tail: Vec::new(),
        }
    }

    pub fn with_tail(mut self, tail: Vec<f64>) -> Self {
        self.fixed_tail = tail;
        self
    }

    /// Number of natural-parameter coordinates produced by the network.
    pub fn learned_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Natural parameters from a prepared network input.
    pub fn natural_params(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut eta = self.net.forward(input)?;
        eta.extend_from_slice(&self.fixed_tail);
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(eta)
    }

    /// Family specialized to a particular modeled point; only the
    /// multinomial length depends on it.
    pub fn family_for(&self, point: &[f64]) -> ExponentialFamily {
        adapt_family(&self.family, point)
    }
}

pub(crate) fn adapt_family(family: &ExponentialFamily, point: &[f64]) -> ExponentialFamily {
    match *family {
        ExponentialFamily::MultinomialGivenLength { categories, .. } => {
            ExponentialFamily::MultinomialGivenLength {
                categories,
                length: point.iter().sum::<f64>().max(0.0) as u64,
            }
        }
        ref f => f.clone(),
    }
}

/// Builds the network input for `point` from its family and (for one-hot
/// inputs) the finite space it belongs to.
pub fn prepare_input(
    mode: InputMode,
    point: &[f64],
    family: &ExponentialFamily,
    space: Option<&FiniteSpace>,
) -> Result<Vec<f64>> {
    match mode {
        InputMode::Raw => Ok(point.to_vec()),
        InputMode::Stats => adapt_family(family, point).sufficient_stats(point),
        InputMode::OneHot => {
            let space = space.ok_or_else(|| {
                Error::InvalidArgument("one-hot input needs a finite conditioning space".into())
            })?;
            let i = space.index_of(point).ok_or_else(|| Error::OutsideSupport {
                family: "one-hot space".into(),
                point: point.to_vec(),
            })?;
            let mut v = vec![0.0; space.len()];
            v[i] = 1.0;
            Ok(v)
        }
        InputMode::Frequencies => {
            let total: f64 = point.iter().sum();
            if !(total > 0.0) {
                return Err(Error::InvalidArgument(
                    "frequency input needs a positive total count".into(),
                ));
            }
            Ok(point.iter().map(|c| c / total).collect())
        }
    }
}

fn input_dim(
    mode: InputMode,
    family: &ExponentialFamily,
    space: Option<&FiniteSpace>,
) -> Option<usize> {
    match mode {
        InputMode::Raw | InputMode::Frequencies => Some(family.point_dim()),
        InputMode::Stats => Some(family.stat_dim()),
        InputMode::OneHot => space.map(FiniteSpace::len),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Latent {
    /// Enumerated latent space with log-prior per point.
    Finite {
        space: FiniteSpace,
        log_prior: Vec<f64>,
    },
    /// `N(0, I)` prior over `ℝ^dim`.
    StandardNormal { dim: usize },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EfVaeRepr {
    latent: Latent,
    decoder: Conditional,
    encoder: Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EfVaeRepr", into = "EfVaeRepr")]
pub struct EfVae {
    latent: Latent,
    pub decoder: Conditional,
    pub encoder: Conditional,
}

impl TryFrom<EfVaeRepr> for EfVae {
    type Error = Error;
    fn try_from(r: EfVaeRepr) -> Result<Self> {
        EfVae::new(r.latent, r.decoder, r.encoder)
    }
}

impl From<EfVae> for EfVaeRepr {
    fn from(v: EfVae) -> Self {
        EfVaeRepr {
            latent: v.latent,
            decoder: v.decoder,
            encoder: v.encoder,
        }
    }
}

/// Log-likelihood table `log p(x|z)` for one observation together with the
/// encoder's log-probabilities over the same latent enumeration.
#[derive(Debug, Clone)]
pub struct PointTables {
    pub log_lik: Vec<f64>,
    pub log_q: Vec<f64>,
}

impl EfVae {
    pub fn new(latent: Latent, decoder: Conditional, encoder: Conditional) -> Result<Self> {
        let vae = EfVae {
            latent,
            decoder,
            encoder,
        };
        vae.validate()?;
        Ok(vae)
    }

    fn validate(&self) -> Result<()> {
        check_len(
            "decoder natural parameters",
            self.decoder.family.stat_dim(),
            self.decoder.net.output_dim() + self.decoder.fixed_tail.len(),
        )?;
        check_len(
            "encoder natural parameters",
            self.encoder.family.stat_dim(),
            self.encoder.net.output_dim() + self.encoder.fixed_tail.len(),
        )?;
        match &self.latent {
            Latent::Finite { space, log_prior } => {
                check_len("log prior", space.len(), log_prior.len())?;
                if space.is_empty() {
                    return Err(Error::EmptySupport("latent space"));
                }
                let total = log_sum_exp(log_prior);
                if total.abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "prior log-probabilities normalize to exp({total}), expected 1"
                    )));
                }
                for z in space.iter() {
                    self.encoder.family.check_point(z)?;
                }
            }
            Latent::StandardNormal { dim } => {
                if self.encoder.family != ExponentialFamily::gaussian(*dim) {
                    return Err(Error::InvalidArgument(
                        "a standard-normal latent needs a diagonal Gaussian encoder".into(),
                    ));
                }
            }
        }
        let latent_space = self.latent_space();
        if let Some(d) = input_dim(self.decoder.input, &self.encoder.family, latent_space) {
            check_len("decoder input", d, self.decoder.net.input_dim())?;
        }
        if self.encoder.input == InputMode::OneHot {
            return Err(Error::InvalidArgument(
                "one-hot encoder input is not supported".into(),
            ));
        }
        if let Some(d) = input_dim(self.encoder.input, &self.decoder.family, None) {
            check_len("encoder input", d, self.encoder.net.input_dim())?;
        }
        Ok(())
    }

    /// Uniform prior over a finite latent space.
    pub fn uniform_prior(space: &FiniteSpace) -> Vec<f64> {
        vec![-(space.len() as f64).ln(); space.len()]
    }

    pub fn latent(&self) -> &Latent {
        &self.latent
    }

    pub fn latent_space(&self) -> Option<&FiniteSpace> {
        match &self.latent {
            Latent::Finite { space, .. } => Some(space),
            Latent::StandardNormal { .. } => None,
        }
    }

    fn finite(&self) -> Result<(&FiniteSpace, &[f64])> {
        match &self.latent {
            Latent::Finite { space, log_prior } => Ok((space, log_prior)),
            Latent::StandardNormal { .. } => Err(Error::InvalidArgument(
                "operation requires a finite latent space".into(),
            )),
        }
    }

    pub fn log_prior(&self) -> Result<&[f64]> {
        Ok(self.finite()?.1)
    }

    /// Replaces the prior of a finite latent space.
    pub fn set_log_prior(&mut self, log_prior: Vec<f64>) -> Result<()> {
        match &mut self.latent {
            Latent::Finite { space, log_prior: lp } => {
                check_len("log prior", space.len(), log_prior.len())?;
                *lp = log_prior;
                Ok(())
            }
            Latent::StandardNormal { .. } => Err(Error::InvalidArgument(
                "standard-normal prior is fixed".into(),
            )),
        }
    }

    pub fn decoder_input(&self, z: &[f64]) -> Result<Vec<f64>> {
        prepare_input(
            self.decoder.input,
            z,
            &self.encoder.family,
            self.latent_space(),
        )
    }

    pub fn encoder_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        prepare_input(self.encoder.input, x, &self.decoder.family, None)
    }

    /// `f(z)`.
    pub fn decoder_params(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.natural_params(&self.decoder_input(z)?)
    }

    /// `g(x)`.
    pub fn encoder_params(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.natural_params(&self.encoder_input(x)?)
    }

    /// `log p(x|z)`.
    pub fn log_likelihood(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        let eta = self.decoder_params(z)?;
        self.decoder.family_for(x).log_density(&eta, x)
    }

    /// `log q(z|x)`.
    pub fn log_encoder(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        let eta = self.encoder_params(x)?;
        self.encoder.family.log_density(&eta, z)
    }

    /// Decoder natural parameters for every latent point, in enumeration
    /// order.
    pub fn decoder_table(&self) -> Result<Vec<Vec<f64>>> {
        let (space, _) = self.finite()?;
        space.iter().map(|z| self.decoder_params(z)).collect()
    }

    /// `log p(x|z)` and `log q(z|x)` over the latent enumeration, reusing a
    /// precomputed decoder table.
    pub fn point_tables(&self, x: &[f64], decoder_table: &[Vec<f64>]) -> Result<PointTables> {
        let (space, _) = self.finite()?;
        let fam = self.decoder.family_for(x);
        let log_lik = decoder_table
            .iter()
            .map(|eta| fam.log_density(eta, x))
            .collect::<Result<Vec<_>>>()?;
        let g = self.encoder_params(x)?;
        let log_q = space
            .iter()
            .map(|z| self.encoder.family.log_density(&g, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(PointTables { log_lik, log_q })
    }

    /// Log-probabilities `log q(z|x)` over the latent enumeration.
    pub fn encoder_log_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (space, _) = self.finite()?;
        let g = self.encoder_params(x)?;
        space
            .iter()
            .map(|z| self.encoder.family.log_density(&g, z))
            .collect()
    }

    /// `log p(x, z)` over the latent enumeration.
    pub fn log_joint_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let table = self.decoder_table()?;
        let (_, prior) = self.finite()?;
        let fam = self.decoder.family_for(x);
        table
            .iter()
            .zip(prior)
            .map(|(eta, lp)| Ok(fam.log_density(eta, x)? + lp))
            .collect()
    }

    /// Exact `log p(z|x)` by Bayes' rule over the enumerated latent space.
    pub fn exact_posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut row = self.log_joint_row(x)?;
        let lse = log_normalize(&mut row);
        if !lse.is_finite() {
            return Err(Error::NonFinite("marginal likelihood"));
        }
        Ok(row)
    }

    /// `log p(x) = log Σ_z p(z) p(x|z)`.
    pub fn log_marginal(&self, x: &[f64]) -> Result<f64> {
        Ok(log_sum_exp(&self.log_joint_row(x)?))
    }

    /// Exact per-point quantities `(log p(x), ELBO(x), KL(q‖p(·|x)))`.
    pub fn point_bounds(&self, x: &[f64], decoder_table: &[Vec<f64>]) -> Result<PointBounds> {
        let (_, prior) = self.finite()?;
        let t = self.point_tables(x, decoder_table)?;
        let joint: Vec<f64> = t.log_lik.iter().zip(prior).map(|(a, b)| a + b).collect();
        let log_marginal = log_sum_exp(&joint);
        if !log_marginal.is_finite() {
            return Err(Error::NonFinite("marginal likelihood"));
        }
        let mut elbo = 0.0;
        let mut kl = 0.0;
        for (lq, lj) in t.log_q.iter().zip(&joint) {
            if *lq == f64::NEG_INFINITY {
                continue;
            }
            let q = lq.exp();
            if q == 0.0 {
                continue;
            }
            if *lj == f64::NEG_INFINITY {
                elbo = f64::NEG_INFINITY;
                kl = f64::INFINITY;
                break;
            }
            elbo += q * (lj - lq);
            kl += q * (lq - (lj - log_marginal));
        }
        Ok(PointBounds {
            log_marginal,
            elbo,
            kl: kl.max(0.0),
        })
    }

    /// `E_{p_d} log p(x)`.
    pub fn loglik_exact(&self, pd: &DataDistribution) -> Result<f64> {
        self.expect(pd, |b| b.log_marginal)
    }

    /// `E_{p_d}[E_q log p(x|z) − KL(q(z|x) ‖ p(z))]`, with the inner
    /// expectation computed exactly. A decoder that assigns zero probability
    /// where the encoder has mass yields `-inf`.
    pub fn elbo_exact(&self, pd: &DataDistribution) -> Result<f64> {
        self.expect(pd, |b| b.elbo)
    }

    /// `E_{p_d} KL(q(z|x) ‖ p(z|x))`.
    pub fn kl_gap(&self, pd: &DataDistribution) -> Result<f64> {
        self.expect(pd, |b| b.kl)
    }

    /// All three expectations in one pass.
    pub fn bounds(&self, pd: &DataDistribution) -> Result<PointBounds> {
        if pd.is_empty() {
            return Err(Error::EmptySupport("data distribution"));
        }
        let table = self.decoder_table()?;
        let mut acc = PointBounds {
            log_marginal: 0.0,
            elbo: 0.0,
            kl: 0.0,
        };
        for (x, w) in pd.iter() {
            if w == 0.0 {
                continue;
            }
            let b = self.point_bounds(x, &table)?;
            acc.log_marginal += w * b.log_marginal;
            acc.elbo += w * b.elbo;
            acc.kl += w * b.kl;
        }
        Ok(acc)
    }

    fn expect(&self, pd: &DataDistribution, pick: impl Fn(&PointBounds) -> f64) -> Result<f64> {
        let b = self.bounds(pd)?;
        Ok(pick(&b))
    }

    /// Monte Carlo ELBO for a standard-normal latent with a diagonal
    /// Gaussian encoder. Draws are reparameterized, `z = μ + σ ε`; the KL to
    /// the prior is closed form.
    pub fn elbo_gaussian_latent<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        rng: &mut R,
        n_samples: usize,
    ) -> Result<McEstimate> {
        let dim = match self.latent {
            Latent::StandardNormal { dim } => dim,
            Latent::Finite { .. } => {
                return Err(Error::InvalidArgument(
                    "Monte Carlo ELBO needs a Gaussian latent".into(),
                ))
            }
        };
        if n_samples == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let (mean, var) = ExponentialFamily::gaussian_to_moments(&self.encoder_params(x)?)?;
        let kl = gaussian_kl_to_standard(&mean, &var);
        let fam = self.decoder.family_for(x);
        let mut values = Vec::with_capacity(n_samples);
        let mut z = vec![0.0; dim];
        for _ in 0..n_samples {
            for i in 0..dim {
                let eps: f64 = rng.sample(StandardNormal);
                z[i] = mean[i] + var[i].sqrt() * eps;
            }
            let eta = self.decoder_params(&z)?;
            values.push(fam.log_density(&eta, x)?);
        }
        let est = McEstimate::from_samples(&values);
        Ok(McEstimate {
            mean: est.mean - kl,
            std_err: est.std_err,
            samples: n_samples,
        })
    }
}

/// Exact per-point or expected quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointBounds {
    pub log_marginal: f64,
    pub elbo: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        McEstimate {
            mean,
            std_err: (var / n).sqrt(),
            samples: values.len(),
        }
    }
}

/// `KL(N(mean, diag(var)) ‖ N(0, I))`.
pub fn gaussian_kl_to_standard(mean: &[f64], var: &[f64]) -> f64 {
    mean.iter()
        .zip(var)
        .map(|(m, v)| 0.5 * (m * m + v - 1.0 - v.ln()))
        .sum()
}

/// KL between two log-probability vectors over the same enumeration.
pub fn kl_logs(log_p: &[f64], log_q: &[f64]) -> f64 {
    kl_from_logs(log_p, log_q)
}

/// Ground truth of the toy mixture: four isotropic Gaussians in the plane
/// with a uniform prior, each component labelled by a 2-bit code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyGroundTruth {
    /// `centers[k]` is the mean of the component whose code is the binary
    /// expansion of `k` (`k = 2 b₁ + b₂`).
    pub centers: [[f64; 2]; 4],
    pub sigma: f64,
}

impl ToyGroundTruth {
    pub fn new(centers: [[f64; 2]; 4], sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        for i in 0..4 {
            for j in 0..i {
                if centers[i] == centers[j] {
                    return Err(Error::InvalidArgument(format!(
                        "centers {j} and {i} coincide"
                    )));
                }
            }
        }
        Ok(ToyGroundTruth { centers, sigma })
    }

    /// Corners of `[-1, 1]²`, σ = 1. Codes 00 → (−1,−1), 01 → (−1,1),
    /// 10 → (1,1), 11 → (1,−1): the second bit flips with the first, so the
    /// centers are not affine in the code and the true posterior does not
    /// factorize over bits.
    pub fn preset() -> Self {
        ToyGroundTruth {
            centers: [[-1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [1.0, -1.0]],
            sigma: 1.0,
        }
    }

    /// 2-bit code of component `k`.
    pub fn code(k: usize) -> [f64; 2] {
        [((k >> 1) & 1) as f64, (k & 1) as f64]
    }

    /// The latent space of codes in lexicographic order, which coincides with
    /// component order.
    pub fn code_space() -> FiniteSpace {
        FiniteSpace::binary(2, crate::efcore::BitEncoding::ZeroOne).expect("2 bits")
    }

    pub fn log_component_density(&self, k: usize, x: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        let c = self.centers[k];
        let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        -d2 / (2.0 * s2) - (2.0 * std::f64::consts::PI * s2).ln()
    }

    /// `log p*(x, z)` for the four components.
    pub fn log_joint(&self, x: &[f64]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.log_component_density(k, x) - 4f64.ln();
        }
        out
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.log_joint(x))
    }

    pub fn log_posterior(&self, x: &[f64]) -> [f64; 4] {
        let mut j = self.log_joint(x);
        log_normalize(&mut j);
        j
    }

    /// Draws `(component, x)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, [f64; 2]) {
        let k = rng.random_range(0..4);
        let c = self.centers[k];
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        (k, [c[0] + self.sigma * e0, c[1] + self.sigma * e1])
    }

    /// The ground-truth decoder as a Gaussian conditional on the one-hot
    /// component index: natural parameters `(μ(z)/σ², −1/(2σ²))`.
    pub fn decoder(&self) -> Conditional {
        let s2 = self.sigma * self.sigma;
        let mut layer = AffineMap::zeros(2, 4);
        for k in 0..4 {
            layer.set_weight(0, k, self.centers[k][0] / s2);
            layer.set_weight(1, k, self.centers[k][1] / s2);
        }
        Conditional::new(
            ExponentialFamily::gaussian(2),
            Mlp::single(layer),
            InputMode::OneHot,
        )
        .with_tail(vec![-0.5 / s2; 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efcore::BitEncoding;

    fn two_state_vae(decoder_bias: [f64; 2]) -> EfVae {
        let latent = FiniteSpace::categorical(2);
        let obs = ExponentialFamily::categorical(2);
        // decoder logits depend on z through a one-hot input
        let mut dec = AffineMap::zeros(2, 2);
        dec.set_weight(0, 0, decoder_bias[0]);
        dec.set_weight(0, 1, decoder_bias[1]);
        let decoder = Conditional::new(obs, Mlp::single(dec), InputMode::OneHot);
        let encoder = Conditional::new(
            ExponentialFamily::categorical(2),
            Mlp::single(AffineMap::zeros(2, 1)),
            InputMode::Raw,
        );
        EfVae::new(
            Latent::Finite {
                log_prior: EfVae::uniform_prior(&latent),
                space: latent,
            },
            decoder,
            encoder,
        )
        .unwrap()
    }

    #[test]
    fn posterior_by_hand() {
        // log p(x=0|z) = log 0.9 for z = 0 and log 0.1 for z = 1
        let a = (0.9f64 / 0.1).ln();
        let vae = two_state_vae([a, -a]);
        let post = vae.exact_posterior(&[0.0]).unwrap();
        assert!((post[0].exp() - 0.9).abs() < 1e-12);
        assert!((post[1].exp() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn collapsed_decoder_posterior_is_prior() {
        let vae = two_state_vae([0.3, 0.3]);
        for x in [[0.0], [1.0]] {
            let post = vae.exact_posterior(&x).unwrap();
            for (p, lp) in post.iter().zip(vae.log_prior().unwrap()) {
                assert!((p - lp).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn collapsed_decoder_loglik_is_negative_entropy() {
        // decoder ignores z and equals p_d = (σ(0.3), 1 − σ(0.3))
        let vae = two_state_vae([0.3, 0.3]);
        let p0 = crate::numeric::sigmoid(0.3);
        let pd = DataDistribution::new(FiniteSpace::categorical(2), vec![p0, 1.0 - p0]).unwrap();
        let neg_entropy = p0 * p0.ln() + (1.0 - p0) * (1.0 - p0).ln();
        assert!((vae.loglik_exact(&pd).unwrap() - neg_entropy).abs() < 1e-12);
        // encoder uniform = prior: ELBO equals loglik
        assert!((vae.elbo_exact(&pd).unwrap() - neg_entropy).abs() < 1e-12);
        assert!(vae.kl_gap(&pd).unwrap().abs() < 1e-15);
    }

    #[test]
    fn prior_encoder_against_informative_decoder_has_positive_gap() {
        let vae = two_state_vae([2.0, -2.0]);
        let pd = DataDistribution::uniform(FiniteSpace::categorical(2)).unwrap();
        assert!(vae.kl_gap(&pd).unwrap() > 1e-3);
    }

    #[test]
    fn zero_likelihood_gives_negative_infinite_elbo() {
        // prior is zero on a state the encoder covers
        let mut vae = two_state_vae([0.0, 0.0]);
        vae.set_log_prior(vec![0.0, f64::NEG_INFINITY]).unwrap();
        let pd = DataDistribution::uniform(FiniteSpace::categorical(2)).unwrap();
        assert_eq!(vae.elbo_exact(&pd).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn invalid_construction_rejected() {
        let latent = FiniteSpace::binary(2, BitEncoding::ZeroOne).unwrap();
        let decoder = Conditional::new(
            ExponentialFamily::bernoulli(3),
            Mlp::single(AffineMap::zeros(3, 2)),
            InputMode::Raw,
        );
        let encoder = Conditional::new(
            ExponentialFamily::bernoulli(2),
            Mlp::single(AffineMap::zeros(2, 3)),
            InputMode::Raw,
        );
        // prior not normalized
        let bad = EfVae::new(
            Latent::Finite {
                space: latent.clone(),
                log_prior: vec![0.0; 4],
            },
            decoder.clone(),
            encoder.clone(),
        );
        assert!(bad.is_err());
        // encoder output size wrong
        let bad_enc = Conditional::new(
            ExponentialFamily::bernoulli(2),
            Mlp::single(AffineMap::zeros(3, 3)),
            InputMode::Raw,
        );
        assert!(EfVae::new(
            Latent::Finite {
                log_prior: EfVae::uniform_prior(&latent),
                space: latent.clone(),
            },
            decoder.clone(),
            bad_enc,
        )
        .is_err());
        let ok = EfVae::new(
            Latent::Finite {
                log_prior: EfVae::uniform_prior(&latent),
                space: latent,
            },
            decoder,
            encoder,
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn toy_preset_is_valid_and_decoder_matches_density() {
        let gt = ToyGroundTruth::preset();
        assert!(ToyGroundTruth::new(gt.centers, gt.sigma).is_ok());
        assert!(ToyGroundTruth::new([[0.0, 0.0]; 4], 1.0).is_err());
        let dec = gt.decoder();
        let space = FiniteSpace::categorical(4);
        let x = [0.3, -0.7];
        for k in 0..4 {
            let input = prepare_input(
                InputMode::OneHot,
                &[k as f64],
                &ExponentialFamily::categorical(4),
                Some(&space),
            )
            .unwrap();
            let eta = dec.natural_params(&input).unwrap();
            let v = dec.family.log_density(&eta, &x).unwrap();
            assert!((v - gt.log_component_density(k, &x)).abs() < 1e-12);
        }
        let post: f64 = gt.log_posterior(&x).iter().map(|l| l.exp()).sum();
        assert!((post - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kl_zero_at_standard() {
        assert_eq!(gaussian_kl_to_standard(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert!(gaussian_kl_to_standard(&[0.5], &[2.0]) > 0.0);
    }
}
