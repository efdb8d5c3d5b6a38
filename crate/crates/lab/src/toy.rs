//! The Gaussian-mixture toy experiment: pretrain an encoder against the
//! fixed ground-truth decoder, then train encoder and decoder jointly by
//! ELBO, tracking how the decoder drifts away from the ground truth.

use efvae::gradest::exact_elbo_gradient;
use efvae::numeric::kl_from_logs;
use efvae::rbm::GaussianHarmonium;
use efvae::vae::ToyGroundTruth;
use efvae::{
    AdamConfig, AdamState, BitEncoding, Conditional, DataDistribution, EfVae, ExponentialFamily, FiniteSpace,
    InputMode, Latent, Mlp,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::grid::{DecisionGrid, GridSpec};

/// Encoder family for the toy latent code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyEncoder {
    /// Two independent Bernoulli bits.
    Factorized,
    /// A categorical over the four codes; can represent any posterior.
    FullCategorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub ground_truth: ToyGroundTruth,
    pub encoder: ToyEncoder,
    /// Hidden widths of the encoder network.
    pub hidden: Vec<usize>,
    pub pretrain_steps: usize,
    pub joint_steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Size of the fixed sample on which ELBO and log-likelihood are
    /// reported.
    pub eval_samples: usize,
    /// Evaluate every this many steps (and at the end of each phase).
    pub record_every: usize,
    pub baseline_samples: usize,
    pub baseline_steps: usize,
    pub baseline_adam: AdamConfig,
    /// Decision grids are skipped when `None`.
    pub grid: Option<GridSpec>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            ground_truth: ToyGroundTruth::preset(),
            encoder: ToyEncoder::Factorized,
            hidden: vec![64, 64],
            pretrain_steps: 2000,
            joint_steps: 2000,
            batch_size: 256,
            adam: AdamConfig::default(),
            eval_samples: 20_000,
            record_every: 100,
            baseline_samples: 5000,
            baseline_steps: 1000,
            baseline_adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            grid: Some(GridSpec::default()),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> LabResult<()> {
        ToyGroundTruth::new(self.ground_truth.centers, self.ground_truth.sigma)
            .map_err(|e| LabError::Validation(format!("ground truth: {e}")))?;
        let bad = |m: &str| Err(LabError::Validation(m.into()));
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.batch_size == 0 || self.eval_samples == 0 || self.record_every == 0 {
            return bad("batch_size, eval_samples and record_every must be positive");
        }
        if self.baseline_samples == 0 {
            return bad("baseline_samples must be positive");
        }
        if !(self.adam.lr > 0.0 && self.baseline_adam.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }
}

/// One evaluation on the fixed sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyPoint {
    pub step: usize,
    pub elbo: f64,
    pub loglik: f64,
    pub kl_gap: f64,
}

/// Summary numbers of a run. `best_loglik` is the ground-truth
/// log-likelihood (the best reachable value); the pretrained/final pairs
/// bracket joint training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMetrics {
    pub best_loglik: f64,
    pub pretrained_elbo: f64,
    pub final_elbo: f64,
    pub pretrained_loglik: f64,
    pub final_loglik: f64,
    /// `best_loglik − final_loglik`: the decoder's loss of likelihood.
    pub approximation_error: f64,
    pub pretrained_kl_gap: f64,
    /// `E KL(q ‖ p_θ(z|x))` after joint training.
    pub final_kl_model_posterior: f64,
    /// `E KL(q ‖ p*(z|x))` after joint training.
    pub final_kl_true_posterior: f64,
    /// Decoder means `θ` (2 × 4) after joint training, row-major.
    pub final_theta: Vec<f64>,
    pub baseline_loglik: f64,
    /// Baseline code assigned to each ground-truth component.
    pub baseline_alignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub failed: bool,
    pub failure: Option<String>,
    pub pretrain: Vec<ToyPoint>,
    pub joint: Vec<ToyPoint>,
    pub baseline_trajectory: Vec<f64>,
    pub metrics: Option<ToyMetrics>,
    /// Fraction of grid cells where each decision map agrees with the true
    /// posterior's map.
    pub grid_agreement: Vec<(String, f64)>,
}

pub struct ToyRun {
    pub report: ToyReport,
    /// `(name, grid)` for the true posterior, the encoder, the model
    /// posterior and the baseline.
    pub grids: Vec<(String, DecisionGrid)>,
}

const STREAM_EVAL: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_BASELINE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw(gt: &ToyGroundTruth, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| gt.sample(rng).1.to_vec()).collect()
}

fn sample_distribution(points: Vec<Vec<f64>>) -> LabResult<DataDistribution> {
    Ok(DataDistribution::uniform(FiniteSpace::new(points)?)?)
}

/// The toy VAE with the ground-truth decoder and a fresh encoder.
pub fn build_toy_vae(config: &ToyConfig, rng: &mut ChaCha8Rng) -> LabResult<EfVae> {
    let (space, family) = match config.encoder {
        ToyEncoder::Factorized => (
            FiniteSpace::binary(2, BitEncoding::ZeroOne)?,
            ExponentialFamily::bernoulli(2),
        ),
        ToyEncoder::FullCategorical => (FiniteSpace::categorical(4), ExponentialFamily::categorical(4)),
    };
    let mut dims = vec![2];
    dims.extend(&config.hidden);
    dims.push(family.stat_dim());
    let net = Mlp::random(&dims, rng)?;
    let prior = EfVae::uniform_prior(&space);
    Ok(EfVae::new(
        Latent::Finite {
            space,
            log_prior: prior,
        },
        config.ground_truth.decoder(),
        Conditional::new(family, net, InputMode::Raw),
    )?)
}

fn evaluate(vae: &EfVae, eval: &DataDistribution, step: usize) -> LabResult<ToyPoint> {
    let b = vae.bounds(eval)?;
    Ok(ToyPoint {
        step,
        elbo: b.elbo,
        loglik: b.log_marginal,
        kl_gap: b.kl,
    })
}

/// `E KL(q(z|x) ‖ p*(z|x))` over the sample.
pub fn kl_to_true_posterior(vae: &EfVae, gt: &ToyGroundTruth, eval: &DataDistribution) -> LabResult<f64> {
    let mut total = 0.0;
    for (x, w) in eval.iter() {
        let q = vae.encoder_log_probs(x)?;
        total += w * kl_from_logs(&q, &gt.log_posterior(x));
    }
    Ok(total)
}

/// Decoder weights (natural coordinates) followed by encoder parameters;
/// the redundant decoder bias is excluded.
fn trainable(vae: &EfVae, joint: bool) -> Vec<f64> {
    let mut p = Vec::new();
    if joint {
        p.extend_from_slice(vae.decoder.net.layers()[0].weights());
    }
    p.extend(vae.encoder.net.params());
    p
}

fn set_trainable(vae: &mut EfVae, p: &[f64], joint: bool) -> LabResult<()> {
    let mut offset = 0;
    if joint {
        let layer = &mut vae.decoder.net.layers_mut()[0];
        let (rows, cols) = (layer.outputs(), layer.inputs());
        for i in 0..rows {
            for j in 0..cols {
                layer.set_weight(i, j, p[offset + i * cols + j]);
            }
        }
        offset += rows * cols;
    }
    vae.encoder.net.set_params(&p[offset..])?;
    Ok(())
}

/// Gradient of the negative ELBO on one batch, in [`trainable`] order.
fn loss_gradient(vae: &EfVae, batch: &DataDistribution, joint: bool) -> LabResult<Vec<f64>> {
    let g = exact_elbo_gradient(vae, batch)?;
    let mut out = Vec::new();
    if joint {
        let nw = vae.decoder.net.layers()[0].weights().len();
        out.extend(g.theta[..nw].iter().map(|v| -v));
    }
    out.extend(g.phi.iter().map(|v| -v));
    Ok(out)
}

struct Phase<'a> {
    joint: bool,
    steps: usize,
    config: &'a ToyConfig,
    eval: &'a DataDistribution,
}

/// Runs one training phase; returns the trajectory and the failure message
/// if the optimizer diverged.
fn train_phase(vae: &mut EfVae, phase: Phase, rng: &mut ChaCha8Rng) -> LabResult<(Vec<ToyPoint>, Option<String>)> {
    let gt = &phase.config.ground_truth;
    let mut params = trainable(vae, phase.joint);
    let mut adam = AdamState::new(params.len(), phase.config.adam);
    let mut traj = vec![evaluate(vae, phase.eval, 0)?];
    for step in 1..=phase.steps {
        let batch = sample_distribution(draw(gt, phase.config.batch_size, rng))?;
        let outcome = loss_gradient(vae, &batch, phase.joint)
            .and_then(|g| adam.step(&mut params, &g).map_err(LabError::from))
            .and_then(|_| set_trainable(vae, &params, phase.joint));
        if let Err(e) = outcome {
            return Ok((traj, Some(format!("step {step}: {e}"))));
        }
        if step % phase.config.record_every == 0 || step == phase.steps {
            let point = evaluate(vae, phase.eval, step)?;
            if !(point.elbo.is_finite() && point.loglik.is_finite()) {
                traj.push(point);
                return Ok((traj, Some(format!("step {step}: non-finite objective"))));
            }
            traj.push(point);
        }
    }
    Ok((traj, None))
}

fn permutations4() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = [a, b, c, d];
                    if (0..4).all(|i| (0..i).all(|j| p[i] != p[j])) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// Assigns baseline codes to ground-truth components by minimizing the
/// total squared distance between their means; ties go to the first
/// permutation in lexicographic order.
fn align_baseline(h: &GaussianHarmonium, gt: &ToyGroundTruth) -> LabResult<[usize; 4]> {
    let codes = h.code_space()?;
    let means: Vec<DVector<f64>> = codes
        .iter()
        .map(|z| &h.m * DVector::from_column_slice(z) + &h.c)
        .collect();
    let mut best = ([0, 1, 2, 3], f64::INFINITY);
    for p in permutations4() {
        let cost: f64 = (0..4)
            .map(|k| (means[p[k]][0] - gt.centers[k][0]).powi(2) + (means[p[k]][1] - gt.centers[k][1]).powi(2))
            .sum();
        if cost < best.1 {
            best = (p, cost);
        }
    }
    Ok(best.0)
}

fn fit_baseline(config: &ToyConfig, seed: u64) -> LabResult<(GaussianHarmonium, Vec<f64>)> {
    let mut rng = stream(seed, STREAM_BASELINE);
    let samples = draw(&config.ground_truth, config.baseline_samples, &mut rng);
    let m = DMatrix::from_fn(2, 2, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
    let mut h = GaussianHarmonium::new(m, DVector::zeros(2), DVector::zeros(2), 0.0)?;
    let traj = h.fit(&samples, config.baseline_steps, config.baseline_adam)?;
    Ok((h, traj))
}

fn probs(logs: &[f64]) -> Vec<f64> {
    logs.iter().map(|l| l.exp()).collect()
}

fn build_grids(
    spec: GridSpec,
    vae: &EfVae,
    gt: &ToyGroundTruth,
    baseline: &GaussianHarmonium,
    alignment: [usize; 4],
) -> LabResult<Vec<(String, DecisionGrid)>> {
    let truth = DecisionGrid::evaluate(spec, |x| Ok(probs(&gt.log_posterior(x))))?;
    let encoder = DecisionGrid::evaluate(spec, |x| Ok(probs(&vae.encoder_log_probs(x)?)))?;
    let model = DecisionGrid::evaluate(spec, |x| Ok(probs(&vae.exact_posterior(x)?)))?;
    let base = DecisionGrid::evaluate(spec, |x| {
        let p = probs(&baseline.log_posterior(x)?);
        Ok(alignment.iter().map(|&code| p[code]).collect())
    })?;
    Ok(vec![
        ("true_posterior".into(), truth),
        ("encoder".into(), encoder),
        ("model_posterior".into(), model),
        ("baseline".into(), base),
    ])
}

/// Runs the full toy pipeline. Divergence during training yields a report
/// with `failed = true` and whatever was computed up to that point.
pub fn run_toy(config: &ToyConfig, seed: u64) -> LabResult<ToyRun> {
    config.validate()?;
    let gt = &config.ground_truth;
    let eval_points = draw(gt, config.eval_samples, &mut stream(seed, STREAM_EVAL));
    let best_loglik = eval_points.iter().map(|x| gt.log_density(x)).sum::<f64>() / eval_points.len() as f64;
    let eval = sample_distribution(eval_points)?;
    let mut vae = build_toy_vae(config, &mut stream(seed, STREAM_INIT))?;
    let mut train_rng = stream(seed, STREAM_TRAIN);

    let mut report = ToyReport {
        failed: false,
        failure: None,
        pretrain: Vec::new(),
        joint: Vec::new(),
        baseline_trajectory: Vec::new(),
        metrics: None,
        grid_agreement: Vec::new(),
    };
    let phase = |joint, steps| Phase {
        joint,
        steps,
        config,
        eval: &eval,
    };
    let (pre, failure) = train_phase(&mut vae, phase(false, config.pretrain_steps), &mut train_rng)?;
    report.pretrain = pre;
    if let Some(msg) = failure {
        report.failed = true;
        report.failure = Some(format!("pretraining diverged at {msg}"));
        return Ok(ToyRun { report, grids: Vec::new() });
    }
    let (joint, failure) = train_phase(&mut vae, phase(true, config.joint_steps), &mut train_rng)?;
    report.joint = joint;
    if let Some(msg) = failure {
        report.failed = true;
        report.failure = Some(format!("joint training diverged at {msg}"));
        return Ok(ToyRun { report, grids: Vec::new() });
    }

    let (baseline, baseline_traj) = fit_baseline(config, seed)?;
    let alignment = align_baseline(&baseline, gt)?;
    let baseline_loglik = eval.iter().map(|(x, w)| Ok(w * baseline.log_density(x)?)).sum::<LabResult<f64>>()?;
    report.baseline_trajectory = baseline_traj;

    let start = report.joint[0];
    let end = *report.joint.last().expect("initial evaluation");
    let s2 = gt.sigma * gt.sigma;
    report.metrics = Some(ToyMetrics {
        best_loglik,
        pretrained_elbo: start.elbo,
        final_elbo: end.elbo,
        pretrained_loglik: start.loglik,
        final_loglik: end.loglik,
        approximation_error: best_loglik - end.loglik,
        pretrained_kl_gap: start.kl_gap,
        final_kl_model_posterior: end.kl_gap,
        final_kl_true_posterior: kl_to_true_posterior(&vae, gt, &eval)?,
        final_theta: vae.decoder.net.layers()[0].weights().iter().map(|w| w * s2).collect(),
        baseline_loglik,
        baseline_alignment: alignment.to_vec(),
    });

    let grids = match config.grid {
        Some(spec) => build_grids(spec, &vae, gt, &baseline, alignment)?,
        None => Vec::new(),
    };
    if let Some((_, truth)) = grids.first() {
        report.grid_agreement = grids.iter().map(|(n, g)| (n.clone(), truth.agreement(g))).collect();
    }
    Ok(ToyRun { report, grids })
}
