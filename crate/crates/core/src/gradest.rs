//! Gradient estimators for ELBO training.
//!
//! All gradients here are of the quantity to *maximize* (ELBO, log-likelihood)
//! or, for [`exact_kl_gap_gradient`], of the gap itself. Callers that feed
//! Adam negate them.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::efcore::ExponentialFamily;
use crate::error::{check_len, Error, Result};
use crate::numeric::sigmoid;
use crate::spaces::DataDistribution;
use crate::vae::{EfVae, InputMode, Latent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorTag {
    Exact,
    Reparam { samples: usize },
    Arm { samples: usize },
}

/// Gradient with respect to the decoder parameters θ and encoder
/// parameters φ (each in network flattening order).
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub tag: EstimatorTag,
}

impl GradEstimate {
    /// `θ` followed by `φ`, the order used by [`vae_params`].
    pub fn concat(&self) -> Vec<f64> {
        self.theta.iter().chain(&self.phi).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.theta
            .iter()
            .chain(&self.phi)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Decoder parameters followed by encoder parameters.
pub fn vae_params(vae: &EfVae) -> Vec<f64> {
    let mut p = vae.decoder.net.params();
    p.extend(vae.encoder.net.params());
    p
}

pub fn set_vae_params(vae: &mut EfVae, params: &[f64]) -> Result<()> {
    let nd = vae.decoder.net.num_params();
    check_len(
        "vae parameters",
        nd + vae.encoder.net.num_params(),
        params.len(),
    )?;
    vae.decoder.net.set_params(&params[..nd])?;
    vae.encoder.net.set_params(&params[nd..])
}

/// Which exact objective to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Objective {
    Elbo,
    LogLik,
    KlGap,
}

/// Exact gradient of `elbo_exact` over a finite latent space.
///
/// Decoder path: `Σ_x p_d(x) Σ_z q(z|x) ∂θ log p(x|z)`, with
/// `∂η log p(x|z) = t(x) − ∇A(η)`. Encoder path: the score-function form
/// `Σ_z q(z|x) (ψ(z) − E_q ψ)(log p(x,z) − log q(z|x))`, evaluated exactly.
pub fn exact_elbo_gradient(vae: &EfVae, pd: &DataDistribution) -> Result<GradEstimate> {
    exact_gradient(vae, pd, Objective::Elbo)
}

/// Exact gradient of `loglik_exact`; φ-gradient is identically zero.
pub fn exact_loglik_gradient(vae: &EfVae, pd: &DataDistribution) -> Result<GradEstimate> {
    exact_gradient(vae, pd, Objective::LogLik)
}

/// Exact gradient of `kl_gap`, computed from the KL expression directly
/// rather than as a difference of the other two.
pub fn exact_kl_gap_gradient(vae: &EfVae, pd: &DataDistribution) -> Result<GradEstimate> {
    exact_gradient(vae, pd, Objective::KlGap)
}

fn exact_gradient(vae: &EfVae, pd: &DataDistribution, objective: Objective) -> Result<GradEstimate> {
    let (space, log_prior) = match vae.latent() {
        Latent::Finite { space, log_prior } => (space, log_prior),
        Latent::StandardNormal { .. } => {
            return Err(Error::InvalidArgument(
                "exact gradient needs a finite latent space".into(),
            ))
        }
    };
    let nz = space.len();
    let dec_learned = vae.decoder.learned_dim();
    let enc_learned = vae.encoder.learned_dim();
    let enc_family = &vae.encoder.family;

    let dec_traces = space
        .iter()
        .map(|z| vae.decoder.net.forward_trace(&vae.decoder_input(z)?))
        .collect::<Result<Vec<_>>>()?;
    let dec_eta: Vec<Vec<f64>> = dec_traces
        .iter()
        .map(|t| {
            let mut eta = t.output().to_vec();
            eta.extend_from_slice(&vae.decoder.fixed_tail);
            eta
        })
        .collect();
    let psi = space
        .iter()
        .map(|z| enc_family.sufficient_stats(z))
        .collect::<Result<Vec<_>>>()?;

    let mut dec_upstream = vec![vec![0.0; dec_learned]; nz];
    let mut phi = vec![0.0; vae.encoder.net.num_params()];

    for (x, w) in pd.iter() {
        if w == 0.0 {
            continue;
        }
        let fam = vae.decoder.family_for(x);
        let tx = fam.sufficient_stats(x)?;
        let log_lik = dec_eta
            .iter()
            .map(|eta| fam.log_density(eta, x))
            .collect::<Result<Vec<_>>>()?;
        let joint: Vec<f64> = log_lik.iter().zip(log_prior).map(|(a, b)| a + b).collect();
        let log_px = crate::numeric::log_sum_exp(&joint);
        if !log_px.is_finite() {
            return Err(Error::NonFinite("marginal likelihood"));
        }
        let post: Vec<f64> = joint.iter().map(|j| (j - log_px).exp()).collect();

        let enc_trace = if objective == Objective::LogLik {
            None
        } else {
            Some(vae.encoder.net.forward_trace(&vae.encoder_input(x)?)?)
        };
        let log_q = match &enc_trace {
            Some(t) => {
                let mut g = t.output().to_vec();
                g.extend_from_slice(&vae.encoder.fixed_tail);
                space
                    .iter()
                    .map(|z| enc_family.log_density(&g, z))
                    .collect::<Result<Vec<_>>>()?
            }
            None => Vec::new(),
        };

        // decoder path
        for k in 0..nz {
            let weight = match objective {
                Objective::Elbo => log_q[k].exp(),
                Objective::LogLik => post[k],
                Objective::KlGap => post[k] - log_q[k].exp(),
            };
            if weight == 0.0 {
                continue;
            }
            let mean = fam.mean_stats(&dec_eta[k])?;
            for (i, up) in dec_upstream[k].iter_mut().enumerate() {
                *up += w * weight * (tx[i] - mean[i]);
            }
        }

        // encoder path
        if let Some(trace) = enc_trace {
            let q: Vec<f64> = log_q.iter().map(|l| l.exp()).collect();
            let m = psi[0].len();
            let mut mean_psi = vec![0.0; m];
            for (qk, s) in q.iter().zip(&psi) {
                for (a, b) in mean_psi.iter_mut().zip(s) {
                    *a += qk * b;
                }
            }
            let mut up = vec![0.0; enc_learned];
            for k in 0..nz {
                if q[k] == 0.0 {
                    continue;
                }
                let signal = match objective {
                    Objective::Elbo => joint[k] - log_q[k],
                    Objective::KlGap => log_q[k] - (joint[k] - log_px),
                    Objective::LogLik => unreachable!(),
                };
                if !signal.is_finite() {
                    return Err(Error::NonFinite("encoder score signal"));
                }
                for (i, u) in up.iter_mut().enumerate() {
                    *u += w * q[k] * (psi[k][i] - mean_psi[i]) * signal;
                }
            }
            vae.encoder.net.backward(&trace, &up, &mut phi)?;
        }
    }

    let mut theta = vec![0.0; vae.decoder.net.num_params()];
    for (trace, up) in dec_traces.iter().zip(&dec_upstream) {
        vae.decoder.net.backward(trace, up, &mut theta)?;
    }
    if theta.iter().chain(&phi).any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("exact gradient"));
    }
    Ok(GradEstimate {
        theta,
        phi,
        tag: EstimatorTag::Exact,
    })
}

/// The two antithetic ARM configurations for uniforms `u`:
/// `(1[u > σ(−φ)], 1[u < σ(φ)])`.
pub fn arm_pair(logits: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let first = logits
        .iter()
        .zip(u)
        .map(|(l, u)| if *u > sigmoid(-l) { 1.0 } else { 0.0 })
        .collect();
    let second = logits
        .iter()
        .zip(u)
        .map(|(l, u)| if *u < sigmoid(*l) { 1.0 } else { 0.0 })
        .collect();
    (first, second)
}

/// One ARM estimate of `∇_φ E_{z ~ Bern(σ(φ))}[objective(z)]`:
/// `(objective(z₁) − objective(z₂)) (u − ½)` per coordinate.
pub fn arm_sample<R, F>(logits: &[f64], objective: &mut F, rng: &mut R) -> Vec<f64>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    let u: Vec<f64> = logits.iter().map(|_| rng.random::<f64>()).collect();
    let (z1, z2) = arm_pair(logits, &u);
    let diff = if z1 == z2 {
        0.0
    } else {
        objective(&z1) - objective(&z2)
    };
    u.iter().map(|ui| diff * (ui - 0.5)).collect()
}

/// Average of `k` independent ARM estimates.
pub fn arm_gradient<R, F>(logits: &[f64], mut objective: F, rng: &mut R, k: usize) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    if k == 0 {
        return Err(Error::InvalidArgument("ARM needs at least one sample".into()));
    }
    let mut acc = vec![0.0; logits.len()];
    for _ in 0..k {
        for (a, g) in acc.iter_mut().zip(arm_sample(logits, &mut objective, rng)) {
            *a += g;
        }
    }
    for a in &mut acc {
        *a /= k as f64;
    }
    Ok(acc)
}

/// Exact `∇_φ E_{z ~ Bern(σ(φ))}[objective(z)]` by enumerating all `2^m`
/// configurations.
pub fn bernoulli_expectation_gradient<F>(logits: &[f64], mut objective: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let m = logits.len();
    let space = crate::spaces::FiniteSpace::binary(m, crate::efcore::BitEncoding::ZeroOne)?;
    let fam = ExponentialFamily::bernoulli(m);
    let mean = fam.mean_stats(logits)?;
    let mut grad = vec![0.0; m];
    for z in space.iter() {
        let p = fam.log_density(logits, z)?.exp();
        let f = objective(z);
        for j in 0..m {
            grad[j] += p * (z[j] - mean[j]) * f;
        }
    }
    Ok(grad)
}

/// Pathwise gradient of the single-point ELBO for a standard-normal latent
/// and diagonal Gaussian encoder, averaged over `k` draws `z = μ + σ ε`. The
/// KL-to-prior part is differentiated in closed form.
pub fn reparam_gradient<R: Rng + ?Sized>(
    vae: &EfVae,
    x: &[f64],
    rng: &mut R,
    k: usize,
) -> Result<GradEstimate> {
    let dim = match vae.latent() {
        Latent::StandardNormal { dim } => *dim,
        Latent::Finite { .. } => {
            return Err(Error::InvalidArgument(
                "reparameterized gradient needs a Gaussian latent".into(),
            ))
        }
    };
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let enc_trace = vae.encoder.net.forward_trace(&vae.encoder_input(x)?)?;
    let mut eta = enc_trace.output().to_vec();
    eta.extend_from_slice(&vae.encoder.fixed_tail);
    let (mean, var) = ExponentialFamily::gaussian_to_moments(&eta)?;
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();

    let fam = vae.decoder.family_for(x);
    let tx = fam.sufficient_stats(x)?;
    let dec_learned = vae.decoder.learned_dim();
    let mut theta = vec![0.0; vae.decoder.net.num_params()];
    let mut d_mean = vec![0.0; dim];
    let mut d_sd = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut eps = vec![0.0; dim];
    let mut scratch = vec![0.0; vae.decoder.net.num_params()];
    for _ in 0..k {
        for i in 0..dim {
            eps[i] = rng.sample(StandardNormal);
            z[i] = mean[i] + sd[i] * eps[i];
        }
        let trace = vae.decoder.net.forward_trace(&vae.decoder_input(&z)?)?;
        let mut dec_eta = trace.output().to_vec();
        dec_eta.extend_from_slice(&vae.decoder.fixed_tail);
        let mu = fam.mean_stats(&dec_eta)?;
        let up: Vec<f64> = (0..dec_learned).map(|i| (tx[i] - mu[i]) / k as f64).collect();
        scratch.iter_mut().for_each(|s| *s = 0.0);
        let d_in = vae.decoder.net.backward(&trace, &up, &mut scratch)?;
        for (t, s) in theta.iter_mut().zip(&scratch) {
            *t += s;
        }
        let dz: Vec<f64> = match vae.decoder.input {
            InputMode::Raw => d_in,
            InputMode::Stats => (0..dim).map(|i| d_in[i] + 2.0 * z[i] * d_in[dim + i]).collect(),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "decoder input {other:?} is not differentiable in z"
                )))
            }
        };
        for i in 0..dim {
            d_mean[i] += dz[i];
            d_sd[i] += dz[i] * eps[i];
        }
    }
    // closed-form KL(N(μ, s²) ‖ N(0, 1)) derivatives
    let mut g_eta = vec![0.0; 2 * dim];
    for i in 0..dim {
        let dm = d_mean[i] - mean[i];
        let ds = d_sd[i] - (sd[i] - 1.0 / sd[i]);
        let (lin, quad) = (eta[i], eta[dim + i]);
        g_eta[i] = dm * var[i];
        g_eta[dim + i] = dm * lin / (2.0 * quad * quad) + ds * (-2.0 * quad).powf(-1.5);
    }
    let mut phi = vec![0.0; vae.encoder.net.num_params()];
    vae.encoder
        .net
        .backward(&enc_trace, &g_eta[..vae.encoder.learned_dim()], &mut phi)?;
    Ok(GradEstimate {
        theta,
        phi,
        tag: EstimatorTag::Reparam { samples: k },
    })
}
