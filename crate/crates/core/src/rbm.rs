//! Restricted Boltzmann machines with exact inference over the hidden layer.
//!
//! `p(x, z) = h(x) exp(xᵀWz + uᵀx + vᵀz) / c` with binary hidden units
//! `z ∈ {0,1}^m`. The visible layer is either a binary vector or a
//! multinomial count vector of fixed length `L` (one partition per length).
//! Everything is computed by enumerating the hidden layer, so `m` is capped.
//!
//! [`GaussianHarmonium`] is the continuous-visible analogue used as the
//! RBM-like baseline on two-dimensional data: Gaussian observations whose
//! mean is affine in the bits, with the matching marginal on the bits.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::consistency::make_consistent_pair;
use crate::efcore::{BitEncoding, ExponentialFamily};
use crate::error::{check_len, Error, Result};
use crate::nets::{AdamConfig, AdamState};
use crate::numeric::{ln_factorial, log_normalize, log_sum_exp, sigmoid, softmax, softplus};
use crate::spaces::{DataDistribution, FiniteSpace, MAX_BINARY_BITS};
use crate::vae::EfVae;

/// Visible layer type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RbmVariant {
    /// `x ∈ {0,1}^n`.
    BernoulliBernoulli,
    /// `x` a count vector over `n` categories; the model is conditioned on
    /// the document length `Σx`.
    MultinomialBernoulli,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RbmRepr {
    variant: RbmVariant,
    weights: Vec<Vec<f64>>,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
}

/// An RBM with `n` visible and `m` hidden units; `w` is `n × m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RbmRepr", into = "RbmRepr")]
pub struct Rbm {
    pub w: DMatrix<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub variant: RbmVariant,
}

impl TryFrom<RbmRepr> for Rbm {
    type Error = Error;
    fn try_from(r: RbmRepr) -> Result<Self> {
        let n = r.weights.len();
        let m = r.hidden_bias.len();
        for row in &r.weights {
            check_len("rbm weight row", m, row.len())?;
        }
        let w = DMatrix::from_fn(n, m, |i, j| r.weights[i][j]);
        Rbm::new(w, DVector::from_vec(r.visible_bias), DVector::from_vec(r.hidden_bias), r.variant)
    }
}

impl From<Rbm> for RbmRepr {
    fn from(r: Rbm) -> Self {
        RbmRepr {
            variant: r.variant,
            weights: r.w.row_iter().map(|row| row.iter().copied().collect()).collect(),
            visible_bias: r.u.iter().copied().collect(),
            hidden_bias: r.v.iter().copied().collect(),
        }
    }
}

/// Gradient of the mean log-likelihood with respect to `(W, u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGrad {
    pub w: DMatrix<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl RbmGrad {
    /// Flattened in the same order as [`Rbm::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.w.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        out.extend(self.u.iter());
        out.extend(self.v.iter());
        out
    }
}

fn document_length(x: &[f64]) -> u64 {
    x.iter().sum::<f64>().round() as u64
}

impl Rbm {
    pub fn new(w: DMatrix<f64>, u: DVector<f64>, v: DVector<f64>, variant: RbmVariant) -> Result<Self> {
        let (n, m) = w.shape();
        check_len("rbm visible bias", n, u.len())?;
        check_len("rbm hidden bias", m, v.len())?;
        if m > MAX_BINARY_BITS {
            return Err(Error::Capacity {
                what: "rbm hidden units",
                value: m,
                limit: MAX_BINARY_BITS,
            });
        }
        if w.iter().chain(u.iter()).chain(v.iter()).any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("rbm parameters"));
        }
        Ok(Rbm { w, u, v, variant })
    }

    pub fn zeros(n: usize, m: usize, variant: RbmVariant) -> Result<Self> {
        Rbm::new(DMatrix::zeros(n, m), DVector::zeros(n), DVector::zeros(m), variant)
    }

    /// Weights drawn from `N(0, scale²)`, zero biases.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, variant: RbmVariant, scale: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let w = DMatrix::from_fn(n, m, |_, _| normal.sample(rng));
        Rbm::new(w, DVector::zeros(n), DVector::zeros(m), variant)
    }

    pub fn visible(&self) -> usize {
        self.w.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w.ncols()
    }

    /// `W` row-major, then `u`, then `v`.
    pub fn params(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.w.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        out.extend(self.u.iter());
        out.extend(self.v.iter());
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let (n, m) = self.w.shape();
        check_len("rbm parameters", n * m + n + m, params.len())?;
        self.w = DMatrix::from_row_slice(n, m, &params[..n * m]);
        self.u = DVector::from_column_slice(&params[n * m..n * m + n]);
        self.v = DVector::from_column_slice(&params[n * m + n..]);
        Ok(())
    }

    fn hidden_space(&self) -> Result<FiniteSpace> {
        FiniteSpace::binary(self.hidden(), BitEncoding::ZeroOne)
    }

    fn check_visible(&self, x: &[f64]) -> Result<()> {
        check_len("rbm visible point", self.visible(), x.len())?;
        let fam = match self.variant {
            RbmVariant::BernoulliBernoulli => ExponentialFamily::bernoulli(self.visible()),
            RbmVariant::MultinomialBernoulli => {
                ExponentialFamily::multinomial(self.visible(), document_length(x))
            }
        };
        fam.check_point(x)
    }

    fn log_base(&self, x: &[f64]) -> f64 {
        match self.variant {
            RbmVariant::BernoulliBernoulli => 0.0,
            RbmVariant::MultinomialBernoulli => {
                ln_factorial(x.iter().sum()) - x.iter().map(|c| ln_factorial(*c)).sum::<f64>()
            }
        }
    }

    /// Visible natural parameter given z: `Wz + u`.
    fn visible_eta(&self, z: &[f64]) -> DVector<f64> {
        &self.w * DVector::from_column_slice(z) + &self.u
    }

    /// Log-partition of the visible layer given `Wz + u`.
    fn visible_log_partition(&self, eta: &DVector<f64>, length: u64) -> f64 {
        match self.variant {
            RbmVariant::BernoulliBernoulli => eta.iter().map(|e| softplus(*e)).sum(),
            RbmVariant::MultinomialBernoulli => length as f64 * log_sum_exp(eta.as_slice()),
        }
    }

    /// `E[x | z]` for the visible layer.
    fn visible_mean(&self, eta: &DVector<f64>, length: u64) -> DVector<f64> {
        match self.variant {
            RbmVariant::BernoulliBernoulli => eta.map(sigmoid),
            RbmVariant::MultinomialBernoulli => {
                DVector::from_vec(softmax(eta.as_slice())) * length as f64
            }
        }
    }

    /// Unnormalized log hidden marginal `vᵀz + A(Wz + u)` for every z, and
    /// the corresponding log-partition.
    fn hidden_marginal(&self, length: u64) -> Result<(FiniteSpace, Vec<f64>, f64)> {
        let space = self.hidden_space()?;
        let mut logs: Vec<f64> = space
            .iter()
            .map(|z| {
                let eta = self.visible_eta(z);
                crate::numeric::dot(self.v.as_slice(), z) + self.visible_log_partition(&eta, length)
            })
            .collect();
        let lse = log_normalize(&mut logs);
        if !lse.is_finite() {
            return Err(Error::NonFinite("rbm partition"));
        }
        Ok((space, logs, lse))
    }

    /// `log c`, the log-partition; for the multinomial variant it is taken
    /// over documents of the given length.
    pub fn log_partition(&self, length: u64) -> Result<f64> {
        Ok(self.hidden_marginal(length)?.2)
    }

    /// `log Σ_z h(x) exp(xᵀWz + uᵀx + vᵀz)`: the hidden sum factorizes
    /// into `uᵀx + Σ_j softplus((Wᵀx)_j + v_j)`.
    pub fn log_unnormalized(&self, x: &[f64]) -> Result<f64> {
        self.check_visible(x)?;
        let xv = DVector::from_column_slice(x);
        let hid = self.w.transpose() * &xv + &self.v;
        Ok(self.log_base(x) + self.u.dot(&xv) + hid.iter().map(|a| softplus(*a)).sum::<f64>())
    }

    /// `log p(x)`.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_unnormalized(x)? - self.log_partition(document_length(x))?)
    }

    /// `P(z_j = 1 | x) = σ((Wᵀx + v)_j)`.
    pub fn posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_visible(x)?;
        let hid = self.w.transpose() * DVector::from_column_slice(x) + &self.v;
        Ok(hid.iter().map(|a| sigmoid(*a)).collect())
    }

    fn lengths(&self, pd: &DataDistribution) -> BTreeMap<u64, f64> {
        let mut out = BTreeMap::new();
        let fixed = matches!(self.variant, RbmVariant::BernoulliBernoulli);
        for (x, w) in pd.iter() {
            let l = if fixed { 0 } else { document_length(x) };
            *out.entry(l).or_insert(0.0) += w;
        }
        out
    }

    /// Exact gradient of `E_{p_d} log p(x)`.
    pub fn loglik_gradient(&self, pd: &DataDistribution) -> Result<RbmGrad> {
        check_len("rbm data dimension", self.visible(), pd.space.dim())?;
        let (n, m) = self.w.shape();
        let mut gw = DMatrix::zeros(n, m);
        let mut gu = DVector::zeros(n);
        let mut gv = DVector::zeros(m);
        for (x, w) in pd.iter() {
            if w == 0.0 {
                continue;
            }
            let r = DVector::from_vec(self.posterior(x)?);
            let xv = DVector::from_column_slice(x);
            gw += &xv * r.transpose() * w;
            gu += &xv * w;
            gv += r * w;
        }
        for (length, mass) in self.lengths(pd) {
            let (space, logs, _) = self.hidden_marginal(length)?;
            for (z, lp) in space.iter().zip(&logs) {
                let p = lp.exp() * mass;
                if p == 0.0 {
                    continue;
                }
                let zv = DVector::from_column_slice(z);
                let mean = self.visible_mean(&self.visible_eta(z), length);
                gw -= &mean * zv.transpose() * p;
                gu -= mean * p;
                gv -= zv * p;
            }
        }
        Ok(RbmGrad { w: gw, u: gu, v: gv })
    }

    /// The consistent-pair VAE with the same joint: Bernoulli (or
    /// multinomial of the given length) decoder, factorized Bernoulli
    /// encoder and the RBM's hidden marginal as prior.
    pub fn to_vae(&self, length: u64) -> Result<EfVae> {
        let obs = match self.variant {
            RbmVariant::BernoulliBernoulli => ExponentialFamily::bernoulli(self.visible()),
            RbmVariant::MultinomialBernoulli => ExponentialFamily::multinomial(self.visible(), length),
        };
        make_consistent_pair(
            &self.w,
            self.u.as_slice(),
            self.v.as_slice(),
            obs,
            ExponentialFamily::bernoulli(self.hidden()),
            self.hidden_space()?,
        )
    }
}

/// `E_{p_d} log p(x)`, exact.
pub fn rbm_loglik_exact(rbm: &Rbm, pd: &DataDistribution) -> Result<f64> {
    check_len("rbm data dimension", rbm.visible(), pd.space.dim())?;
    let mut partitions = BTreeMap::new();
    let mut total = 0.0;
    for (x, w) in pd.iter() {
        if w == 0.0 {
            continue;
        }
        let l = document_length(x);
        let lz = match partitions.get(&l) {
            Some(v) => *v,
            None => {
                let v = rbm.log_partition(l)?;
                partitions.insert(l, v);
                v
            }
        };
        total += w * (rbm.log_unnormalized(x)? - lz);
    }
    Ok(total)
}

/// Factorized posterior `σ(Wᵀx + v)`.
pub fn rbm_posterior(rbm: &Rbm, x: &[f64]) -> Result<Vec<f64>> {
    rbm.posterior(x)
}

/// Options for [`rbm_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbmFitOptions {
    pub steps: usize,
    pub adam: AdamConfig,
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
}

impl Default for RbmFitOptions {
    fn default() -> Self {
        RbmFitOptions {
            steps: 2000,
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            init_scale: 0.1,
        }
    }
}

/// Fitted model and per-step mean log-likelihood (before each update, plus
/// the final value).
#[derive(Debug, Clone)]
pub struct RbmFit {
    pub rbm: Rbm,
    pub trajectory: Vec<f64>,
    /// Set when a non-finite log-likelihood or gradient stopped training;
    /// `rbm` is then the last finite model.
    pub diverged: bool,
}

/// Full-batch Adam ascent on the exact log-likelihood.
pub fn rbm_fit<R: Rng + ?Sized>(
    data: &DataDistribution,
    hidden: usize,
    variant: RbmVariant,
    opts: &RbmFitOptions,
    rng: &mut R,
) -> Result<RbmFit> {
    let mut rbm = Rbm::random(data.space.dim(), hidden, variant, opts.init_scale, rng)?;
    let mut adam = AdamState::new(rbm.params().len(), opts.adam);
    let mut trajectory = Vec::with_capacity(opts.steps + 1);
    for _ in 0..opts.steps {
        let ll = rbm_loglik_exact(&rbm, data);
        let grad = rbm.loglik_gradient(data);
        let (ll, grad) = match (ll, grad) {
            (Ok(ll), Ok(g)) if ll.is_finite() => (ll, g),
            _ => return Ok(RbmFit { rbm, trajectory, diverged: true }),
        };
        trajectory.push(ll);
        let neg: Vec<f64> = grad.flatten().iter().map(|g| -g).collect();
        let mut params = rbm.params();
        if adam.step(&mut params, &neg).is_err() || params.iter().any(|p| !p.is_finite()) {
            return Ok(RbmFit { rbm, trajectory, diverged: true });
        }
        rbm.set_params(&params)?;
    }
    let ll = rbm_loglik_exact(&rbm, data)?;
    let diverged = !ll.is_finite();
    trajectory.push(ll);
    Ok(RbmFit { rbm, trajectory, diverged })
}

/// Gaussian observations with bit-dependent mean and the matching bit
/// marginal:
/// `p(z) ∝ exp(vᵀz + ‖μ_z‖²/(2s²))`, `p(x|z) = N(μ_z, s² I)`,
/// `μ_z = Mz + c`, `z ∈ {0,1}^m`. The posterior is factorized:
/// `P(z_j = 1 | x) = σ(v_j + M_jᵀx / s²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHarmonium {
    /// `d × m`.
    pub m: DMatrix<f64>,
    pub c: DVector<f64>,
    pub v: DVector<f64>,
    pub log_sigma: f64,
}

impl GaussianHarmonium {
    pub fn new(m: DMatrix<f64>, c: DVector<f64>, v: DVector<f64>, log_sigma: f64) -> Result<Self> {
        check_len("harmonium offset", m.nrows(), c.len())?;
        check_len("harmonium bit bias", m.ncols(), v.len())?;
        if m.ncols() > MAX_BINARY_BITS {
            return Err(Error::Capacity {
                what: "harmonium bits",
                value: m.ncols(),
                limit: MAX_BINARY_BITS,
            });
        }
        if !log_sigma.is_finite() {
            return Err(Error::NonFinite("harmonium log σ"));
        }
        Ok(GaussianHarmonium { m, c, v, log_sigma })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn bits(&self) -> usize {
        self.m.ncols()
    }

    fn var(&self) -> f64 {
        (2.0 * self.log_sigma).exp()
    }

    /// `M` row-major, `c`, `v`, `log s`.
    pub fn params(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        out.extend(self.c.iter());
        out.extend(self.v.iter());
        out.push(self.log_sigma);
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let (d, m) = self.m.shape();
        check_len("harmonium parameters", d * m + d + m + 1, p.len())?;
        self.m = DMatrix::from_row_slice(d, m, &p[..d * m]);
        self.c = DVector::from_column_slice(&p[d * m..d * m + d]);
        self.v = DVector::from_column_slice(&p[d * m + d..d * m + d + m]);
        self.log_sigma = p[d * m + d + m];
        Ok(())
    }

    pub fn code_space(&self) -> Result<FiniteSpace> {
        FiniteSpace::binary(self.bits(), BitEncoding::ZeroOne)
    }

    fn mean(&self, z: &[f64]) -> DVector<f64> {
        &self.m * DVector::from_column_slice(z) + &self.c
    }

    /// Normalized `log p(z)` over the code space.
    pub fn log_prior(&self) -> Result<Vec<f64>> {
        let s2 = self.var();
        let mut logs: Vec<f64> = self
            .code_space()?
            .iter()
            .map(|z| crate::numeric::dot(self.v.as_slice(), z) + self.mean(z).norm_squared() / (2.0 * s2))
            .collect();
        log_normalize(&mut logs);
        Ok(logs)
    }

    /// `log p(x, z)` for every code z.
    pub fn log_joint_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("harmonium point", self.dim(), x.len())?;
        let s2 = self.var();
        let d = self.dim() as f64;
        let xv = DVector::from_column_slice(x);
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI * s2).ln() - xv.norm_squared() / (2.0 * s2);
        let prior = self.log_prior()?;
        Ok(self
            .code_space()?
            .iter()
            .zip(&prior)
            .map(|(z, lp)| {
                let mu = self.mean(z);
                lp + norm + (xv.dot(&mu) - 0.5 * mu.norm_squared()) / s2
            })
            .collect())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok(log_sum_exp(&self.log_joint_row(x)?))
    }

    /// `P(z_j = 1 | x)`.
    pub fn posterior_bits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("harmonium point", self.dim(), x.len())?;
        let a = self.m.transpose() * DVector::from_column_slice(x) / self.var() + &self.v;
        Ok(a.iter().map(|t| sigmoid(*t)).collect())
    }

    /// Normalized `log p(z | x)` over the code space, by enumeration.
    pub fn log_posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut row = self.log_joint_row(x)?;
        log_normalize(&mut row);
        Ok(row)
    }

    /// Mean log-density over samples and its gradient in [`Self::params`]
    /// order.
    pub fn loglik_and_gradient(&self, samples: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        if samples.is_empty() {
            return Err(Error::EmptySupport("harmonium samples"));
        }
        let (d, m) = self.m.shape();
        let s2 = self.var();
        let space = self.code_space()?;
        let prior: Vec<f64> = self.log_prior()?.iter().map(|l| l.exp()).collect();
        let means: Vec<DVector<f64>> = space.iter().map(|z| self.mean(z)).collect();
        let inv_n = 1.0 / samples.len() as f64;
        // accumulate ∂/∂μ_z, ∂/∂v and ∂/∂s² of the mean log-density
        let mut g_mu: Vec<DVector<f64>> = vec![DVector::zeros(d); space.len()];
        let mut g_v = DVector::zeros(m);
        let mut g_s2 = 0.0;
        let mut total = 0.0;
        for x in samples {
            let xv = DVector::from_column_slice(x);
            let mut row = self.log_joint_row(x)?;
            total += log_normalize(&mut row);
            g_s2 += inv_n * (xv.norm_squared() / (2.0 * s2 * s2) - d as f64 / (2.0 * s2));
            for (k, z) in space.iter().enumerate() {
                let r = row[k].exp() * inv_n;
                g_mu[k] += &xv * (r / s2);
                g_v += DVector::from_column_slice(z) * r;
                g_s2 -= r * xv.dot(&means[k]) / (s2 * s2);
            }
        }
        for (k, z) in space.iter().enumerate() {
            // the normalizer of p(z) contributes the prior-weighted terms
            g_mu[k] -= &means[k] * (prior[k] / s2);
            g_v -= DVector::from_column_slice(z) * prior[k];
            g_s2 += prior[k] * means[k].norm_squared() / (2.0 * s2 * s2);
        }
        let mut g_m = DMatrix::zeros(d, m);
        let mut g_c = DVector::zeros(d);
        for (k, z) in space.iter().enumerate() {
            g_m += &g_mu[k] * DVector::from_column_slice(z).transpose();
            g_c += &g_mu[k];
        }
        let mut grad: Vec<f64> = g_m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        grad.extend(g_c.iter());
        grad.extend(g_v.iter());
        grad.push(2.0 * s2 * g_s2);
        Ok((total * inv_n, grad))
    }

    /// Full-batch Adam ascent on the mean log-density. Returns the
    /// trajectory of mean log-densities.
    pub fn fit(&mut self, samples: &[Vec<f64>], steps: usize, adam: AdamConfig) -> Result<Vec<f64>> {
        let mut state = AdamState::new(self.params().len(), adam);
        let mut traj = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (ll, g) = self.loglik_and_gradient(samples)?;
            if !ll.is_finite() {
                return Err(Error::NonFinite("harmonium log-likelihood"));
            }
            traj.push(ll);
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut p = self.params();
            state.step(&mut p, &neg)?;
            self.set_params(&p)?;
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_factorize() {
        let rbm = Rbm::new(
            DMatrix::zeros(2, 3),
            DVector::from_vec(vec![0.5, -1.0]),
            DVector::from_vec(vec![0.3, 0.0, -2.0]),
            RbmVariant::BernoulliBernoulli,
        )
        .unwrap();
        let x = [1.0, 0.0];
        let expect = 0.5 - softplus(0.5) - softplus(-1.0);
        assert!((rbm.log_prob(&x).unwrap() - expect).abs() < 1e-12);
        let post = rbm.posterior(&x).unwrap();
        assert!((post[0] - sigmoid(0.3)).abs() < 1e-15);
        assert!((post[2] - sigmoid(-2.0)).abs() < 1e-15);
    }

    #[test]
    fn one_by_one_table() {
        let rbm = Rbm::new(
            DMatrix::from_element(1, 1, 1.5),
            DVector::from_vec(vec![-0.4]),
            DVector::from_vec(vec![0.7]),
            RbmVariant::BernoulliBernoulli,
        )
        .unwrap();
        let e = |x: f64, z: f64| 1.5 * x * z - 0.4 * x + 0.7 * z;
        let logz = log_sum_exp(&[e(0., 0.), e(0., 1.), e(1., 0.), e(1., 1.)]);
        let p1 = log_sum_exp(&[e(1., 0.), e(1., 1.)]) - logz;
        assert!((rbm.log_prob(&[1.0]).unwrap() - p1).abs() < 1e-12);
    }

    #[test]
    fn capacity_and_serde() {
        assert!(matches!(
            Rbm::zeros(1, 21, RbmVariant::BernoulliBernoulli),
            Err(Error::Capacity { .. })
        ));
        let rbm = Rbm::random(3, 2, RbmVariant::MultinomialBernoulli, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let json = serde_json::to_string(&rbm).unwrap();
        let back: Rbm = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rbm);
    }

    #[test]
    fn harmonium_posterior_matches_enumeration() {
        let h = GaussianHarmonium::new(
            DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.3, 2.0]),
            DVector::from_vec(vec![0.1, -0.2]),
            DVector::from_vec(vec![0.4, -0.6]),
            (0.7f64).ln(),
        )
        .unwrap();
        let x = [0.3, -1.2];
        let bits = h.posterior_bits(&x).unwrap();
        let post = h.log_posterior(&x).unwrap();
        for (k, z) in h.code_space().unwrap().iter().enumerate() {
            let f: f64 = z
                .iter()
                .zip(&bits)
                .map(|(zj, p)| if *zj == 1.0 { p.ln() } else { (1.0 - p).ln() })
                .sum();
            assert!((f - post[k]).abs() < 1e-12);
        }
    }
}
