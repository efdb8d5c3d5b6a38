//! Exponential-family primitives.
//!
//! Every family is written as `p(y | η) = h(y) exp(⟨t(y), η⟩ − A(η))` with a
//! fixed sufficient-statistic map `t`. Support points are passed around as
//! `&[f64]` in their raw coordinates:
//!
//! | family                   | raw point                 | statistics            |
//! |--------------------------|---------------------------|-----------------------|
//! | `BernoulliVector`        | bit vector (0/1 or ±1)    | the bits              |
//! | `Categorical`            | `[index]`                 | one-hot               |
//! | `MultinomialGivenLength` | count vector, sum = length| the counts            |
//! | `DiagonalGaussian`       | real vector               | `(y, y²)` coordinate-wise |
//!
//! The Gaussian base measure is the Lebesgue measure; the `π` constant is
//! folded into the log-partition.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric::{
    ln_factorial, log_softmax, log_sum_exp, log_two_cosh, sigmoid, softmax, softplus,
};

/// Value set of a binary coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitEncoding {
    ZeroOne,
    PlusMinusOne,
}

impl BitEncoding {
    pub fn low(self) -> f64 {
        match self {
            BitEncoding::ZeroOne => 0.0,
            BitEncoding::PlusMinusOne => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExponentialFamily {
    BernoulliVector { bits: usize, encoding: BitEncoding },
    Categorical { categories: usize },
    MultinomialGivenLength { categories: usize, length: u64 },
    DiagonalGaussian { dim: usize },
}

/// A natural-parameter vector validated against a family.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams(Vec<f64>);

impl NaturalParams {
    pub fn new(family: &ExponentialFamily, values: Vec<f64>) -> Result<Self> {
        family.check_params(&values)?;
        Ok(NaturalParams(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for NaturalParams {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl ExponentialFamily {
    pub fn bernoulli(bits: usize) -> Self {
        ExponentialFamily::BernoulliVector {
            bits,
            encoding: BitEncoding::ZeroOne,
        }
    }

    pub fn spins(bits: usize) -> Self {
        ExponentialFamily::BernoulliVector {
            bits,
            encoding: BitEncoding::PlusMinusOne,
        }
    }

    pub fn categorical(categories: usize) -> Self {
        ExponentialFamily::Categorical { categories }
    }

    pub fn multinomial(categories: usize, length: u64) -> Self {
        ExponentialFamily::MultinomialGivenLength { categories, length }
    }

    pub fn gaussian(dim: usize) -> Self {
        ExponentialFamily::DiagonalGaussian { dim }
    }

    pub fn name(&self) -> String {
        match self {
            ExponentialFamily::BernoulliVector { bits, encoding } => {
                format!("BernoulliVector({bits}, {encoding:?})")
            }
            ExponentialFamily::Categorical { categories } => format!("Categorical({categories})"),
            ExponentialFamily::MultinomialGivenLength { categories, length } => {
                format!("MultinomialGivenLength({categories}, l={length})")
            }
            ExponentialFamily::DiagonalGaussian { dim } => format!("DiagonalGaussian({dim})"),
        }
    }

    /// Dimension of the sufficient-statistic vector (and of the natural
    /// parameter).
    pub fn stat_dim(&self) -> usize {
        match *self {
            ExponentialFamily::BernoulliVector { bits, .. } => bits,
            ExponentialFamily::Categorical { categories } => categories,
            ExponentialFamily::MultinomialGivenLength { categories, .. } => categories,
            ExponentialFamily::DiagonalGaussian { dim } => 2 * dim,
        }
    }

    /// Length of a raw support point.
    pub fn point_dim(&self) -> usize {
        match *self {
            ExponentialFamily::BernoulliVector { bits, .. } => bits,
            ExponentialFamily::Categorical { .. } => 1,
            ExponentialFamily::MultinomialGivenLength { categories, .. } => categories,
            ExponentialFamily::DiagonalGaussian { dim } => dim,
        }
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self, ExponentialFamily::DiagonalGaussian { .. })
    }

    fn outside(&self, point: &[f64]) -> Error {
        Error::OutsideSupport {
            family: self.name(),
            point: point.to_vec(),
        }
    }

    pub fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.point_dim() {
            return Err(self.outside(point));
        }
        let ok = match *self {
            ExponentialFamily::BernoulliVector { encoding, .. } => point
                .iter()
                .all(|&b| b == encoding.low() || b == 1.0),
            ExponentialFamily::Categorical { categories } => {
                let k = point[0];
                k >= 0.0 && k.fract() == 0.0 && (k as usize) < categories
            }
            ExponentialFamily::MultinomialGivenLength { length, .. } => {
                point.iter().all(|&c| c >= 0.0 && c.fract() == 0.0)
                    && point.iter().sum::<f64>() == length as f64
            }
            ExponentialFamily::DiagonalGaussian { .. } => point.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(self.outside(point))
        }
    }

    pub fn sufficient_stats(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_point(point)?;
        Ok(match *self {
            ExponentialFamily::BernoulliVector { .. }
            | ExponentialFamily::MultinomialGivenLength { .. } => point.to_vec(),
            ExponentialFamily::Categorical { categories } => {
                let mut s = vec![0.0; categories];
                s[point[0] as usize] = 1.0;
                s
            }
            ExponentialFamily::DiagonalGaussian { .. } => point
                .iter()
                .copied()
                .chain(point.iter().map(|v| v * v))
                .collect(),
        })
    }

    /// `log h(point)`.
    pub fn log_base_measure(&self, point: &[f64]) -> Result<f64> {
        self.check_point(point)?;
        Ok(match *self {
            ExponentialFamily::MultinomialGivenLength { length, .. } => {
                ln_factorial(length as f64) - point.iter().map(|&c| ln_factorial(c)).sum::<f64>()
            }
            _ => 0.0,
        })
    }

    pub fn check_params(&self, eta: &[f64]) -> Result<()> {
        check_len("natural parameters", self.stat_dim(), eta.len())?;
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("natural parameters"));
        }
        if let ExponentialFamily::DiagonalGaussian { dim } = *self {
            if let Some(i) = (0..dim).find(|&i| eta[dim + i] >= 0.0) {
                return Err(Error::NonIntegrable(format!(
                    "quadratic coefficient {} = {} must be negative",
                    i,
                    eta[dim + i]
                )));
            }
        }
        Ok(())
    }

    /// `A(η)`, the log of the normalizer of `h(y) exp⟨t(y), η⟩`.
    pub fn log_partition(&self, eta: &[f64]) -> Result<f64> {
        self.check_params(eta)?;
        Ok(match *self {
            ExponentialFamily::BernoulliVector { encoding, .. } => match encoding {
                BitEncoding::ZeroOne => eta.iter().map(|&e| softplus(e)).sum(),
                BitEncoding::PlusMinusOne => eta.iter().map(|&e| log_two_cosh(e)).sum(),
            },
            ExponentialFamily::Categorical { .. } => log_sum_exp(eta),
            ExponentialFamily::MultinomialGivenLength { length, .. } => {
                length as f64 * log_sum_exp(eta)
            }
            ExponentialFamily::DiagonalGaussian { dim } => (0..dim)
                .map(|i| {
                    let (lin, quad) = (eta[i], eta[dim + i]);
                    -lin * lin / (4.0 * quad) + 0.5 * (std::f64::consts::PI / -quad).ln()
                })
                .sum(),
        })
    }

    /// Mean of the sufficient statistics, `∇A(η)`.
    pub fn mean_stats(&self, eta: &[f64]) -> Result<Vec<f64>> {
        self.check_params(eta)?;
        Ok(match *self {
            ExponentialFamily::BernoulliVector { encoding, .. } => match encoding {
                BitEncoding::ZeroOne => eta.iter().map(|&e| sigmoid(e)).collect(),
                BitEncoding::PlusMinusOne => eta.iter().map(|&e| e.tanh()).collect(),
            },
            ExponentialFamily::Categorical { .. } => softmax(eta),
            ExponentialFamily::MultinomialGivenLength { length, .. } => softmax(eta)
                .into_iter()
                .map(|p| p * length as f64)
                .collect(),
            ExponentialFamily::DiagonalGaussian { dim } => {
                let mut out = vec![0.0; 2 * dim];
                for i in 0..dim {
                    let var = -0.5 / eta[dim + i];
                    let mean = eta[i] * var;
                    out[i] = mean;
                    out[dim + i] = var + mean * mean;
                }
                out
            }
        })
    }

    /// `log h(y) + ⟨t(y), η⟩ − A(η)`.
    pub fn log_density(&self, eta: &[f64], point: &[f64]) -> Result<f64> {
        let a = self.log_partition(eta)?;
        let log_h = self.log_base_measure(point)?;
        let inner = match *self {
            ExponentialFamily::Categorical { .. } => eta[point[0] as usize],
            ExponentialFamily::DiagonalGaussian { dim } => (0..dim)
                .map(|i| eta[i] * point[i] + eta[dim + i] * point[i] * point[i])
                .sum(),
            _ => eta.iter().zip(point).map(|(e, y)| e * y).sum(),
        };
        Ok(log_h + inner - a)
    }

    /// Draws one support point.
    pub fn sample<R: Rng + ?Sized>(&self, eta: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_params(eta)?;
        Ok(match *self {
            ExponentialFamily::BernoulliVector { encoding, .. } => eta
                .iter()
                .map(|&e| {
                    let p1 = match encoding {
                        BitEncoding::ZeroOne => sigmoid(e),
                        BitEncoding::PlusMinusOne => sigmoid(2.0 * e),
                    };
                    if rng.random::<f64>() < p1 {
                        1.0
                    } else {
                        encoding.low()
                    }
                })
                .collect(),
            ExponentialFamily::Categorical { .. } => {
                vec![sample_index(&log_softmax(eta), rng) as f64]
            }
            ExponentialFamily::MultinomialGivenLength { categories, length } => {
                let logp = log_softmax(eta);
                let mut counts = vec![0.0; categories];
                for _ in 0..length {
                    counts[sample_index(&logp, rng)] += 1.0;
                }
                counts
            }
            ExponentialFamily::DiagonalGaussian { dim } => (0..dim)
                .map(|i| {
                    let var = -0.5 / eta[dim + i];
                    let eps: f64 = rng.sample(StandardNormal);
                    eta[i] * var + var.sqrt() * eps
                })
                .collect(),
        })
    }

    /// Natural parameters of `N(mean, diag(var))`.
    pub fn gaussian_from_moments(mean: &[f64], var: &[f64]) -> Result<NaturalParams> {
        check_len("gaussian variance", mean.len(), var.len())?;
        if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonIntegrable(format!("variance {v} must be positive")));
        }
        let values = mean
            .iter()
            .zip(var)
            .map(|(m, v)| m / v)
            .chain(var.iter().map(|v| -0.5 / v))
            .collect();
        NaturalParams::new(&ExponentialFamily::gaussian(mean.len()), values)
    }

    /// Inverse of [`gaussian_from_moments`](Self::gaussian_from_moments).
    pub fn gaussian_to_moments(eta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if eta.len() % 2 != 0 {
            return Err(Error::InvalidArgument(
                "gaussian natural parameters must have even length".into(),
            ));
        }
        let dim = eta.len() / 2;
        ExponentialFamily::gaussian(dim).check_params(eta)?;
        let var: Vec<f64> = eta[dim..].iter().map(|q| -0.5 / q).collect();
        let mean = eta[..dim].iter().zip(&var).map(|(l, v)| l * v).collect();
        Ok((mean, var))
    }

    /// All support points for finite families, in lexicographic order.
    /// Multinomial supports are enumerated as compositions of `length`.
    pub fn enumerate_support(&self) -> Result<Vec<Vec<f64>>> {
        const LIMIT: usize = 1 << 20;
        match *self {
            ExponentialFamily::BernoulliVector { bits, encoding } => {
                Ok(crate::spaces::FiniteSpace::binary(bits, encoding)?.into_points())
            }
            ExponentialFamily::Categorical { categories } => {
                Ok((0..categories).map(|k| vec![k as f64]).collect())
            }
            ExponentialFamily::MultinomialGivenLength { categories, length } => {
                let mut out = Vec::new();
                let mut current = vec![0.0; categories];
                compositions(categories, length, 0, &mut current, &mut out, LIMIT)?;
                Ok(out)
            }
            ExponentialFamily::DiagonalGaussian { .. } => {
                Err(Error::InvalidArgument("continuous support cannot be enumerated".into()))
            }
        }
    }
}

fn compositions(
    k: usize,
    remaining: u64,
    pos: usize,
    current: &mut Vec<f64>,
    out: &mut Vec<Vec<f64>>,
    limit: usize,
) -> Result<()> {
    if pos + 1 == k {
        current[pos] = remaining as f64;
        if out.len() >= limit {
            return Err(Error::Capacity {
                what: "multinomial support size",
                value: out.len() + 1,
                limit,
            });
        }
        out.push(current.clone());
        return Ok(());
    }
    for c in 0..=remaining {
        current[pos] = c as f64;
        compositions(k, remaining - c, pos + 1, current, out, limit)?;
    }
    Ok(())
}

/// Inverse-CDF draw from normalized log-probabilities.
pub fn sample_index<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs
        .iter()
        .rposition(|lp| *lp > f64::NEG_INFINITY)
        .unwrap_or(0)
}
