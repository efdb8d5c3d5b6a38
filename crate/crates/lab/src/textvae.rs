//! Discrete-latent text VAE: multinomial decoder over word counts with a
//! uniform Bernoulli prior, trained with ARM for the encoder.
//!
//! NELBO is reported in nats per document and excludes `log p(l)` and the
//! multinomial coefficient, both of which are the same for every model.

use std::path::PathBuf;

use efvae::gradest::arm_pair;
use efvae::numeric::{log_softmax, sigmoid, softplus};
use efvae::{AdamConfig, AdamState, BitEncoding, FiniteSpace, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{rbm_nll_per_doc, synthesize, Corpus, Document, PlantedSpec};
use crate::error::{LabError, LabResult};
use crate::output::read_json;

/// Encoder architectures. `E1` is linear on counts, `E2` a two-hidden-layer
/// ReLU network on frequencies, `E3` linear on frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    E1,
    E2,
    E3,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::E1 => "e1",
            EncoderKind::E2 => "e2",
            EncoderKind::E3 => "e3",
        }
    }

    fn uses_counts(self) -> bool {
        self == EncoderKind::E1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Documents drawn from a planted RBM.
    Synthetic(PlantedSpec),
    /// A corpus JSON file written by the `ingest` command.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextVaeConfig {
    pub corpus: CorpusSource,
    pub bits: Vec<usize>,
    /// Hidden layers of the decoder for each cell.
    pub dhidden: Vec<usize>,
    pub encoders: Vec<EncoderKind>,
    pub hidden_width: usize,
    /// Epochs with one ARM sample per gradient.
    pub epochs: usize,
    /// Further epochs with `refine_samples` ARM samples per gradient.
    pub refine_epochs: usize,
    pub refine_samples: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Evaluate NELBO every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Up to this many bits the expected reconstruction is computed by
    /// enumerating all latent states; above it, by Monte Carlo.
    pub exact_eval_max_bits: usize,
    /// Monte Carlo draws per document for NELBO evaluation.
    pub eval_samples: usize,
}

impl Default for TextVaeConfig {
    fn default() -> Self {
        TextVaeConfig {
            corpus: CorpusSource::Synthetic(PlantedSpec::default()),
            bits: vec![8, 16],
            dhidden: vec![0, 1],
            encoders: vec![EncoderKind::E1, EncoderKind::E2, EncoderKind::E3],
            hidden_width: 64,
            epochs: 200,
            refine_epochs: 100,
            refine_samples: 10,
            batch_size: 100,
            adam: AdamConfig::default(),
            eval_every: 5,
            exact_eval_max_bits: 12,
            eval_samples: 16,
        }
    }
}

impl TextVaeConfig {
    pub fn validate(&self) -> LabResult<()> {
        let bad = |m: String| Err(LabError::Validation(m));
        if self.bits.is_empty() || self.dhidden.is_empty() || self.encoders.is_empty() {
            return bad("bits, dhidden and encoders must be nonempty".into());
        }
        if let Some(b) = self.bits.iter().find(|b| **b == 0 || **b > efvae::spaces::MAX_BINARY_BITS) {
            return bad(format!("bits {b} outside 1..={}", efvae::spaces::MAX_BINARY_BITS));
        }
        if self.exact_eval_max_bits > efvae::spaces::MAX_BINARY_BITS {
            return bad(format!("exact_eval_max_bits above {}", efvae::spaces::MAX_BINARY_BITS));
        }
        if self.hidden_width == 0 || self.batch_size == 0 || self.eval_every == 0 || self.eval_samples == 0 {
            return bad("hidden_width, batch_size, eval_every and eval_samples must be positive".into());
        }
        if self.epochs + self.refine_epochs == 0 {
            return bad("at least one training epoch is needed".into());
        }
        if self.refine_epochs > 0 && self.refine_samples == 0 {
            return bad("refine_samples must be positive".into());
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive".into());
        }
        if let CorpusSource::Synthetic(spec) = &self.corpus {
            spec.validate()?;
        }
        Ok(())
    }

    /// `(bits, dhidden, encoder)` in report order.
    pub fn cells(&self) -> Vec<(usize, usize, EncoderKind)> {
        let mut out = Vec::new();
        for &b in &self.bits {
            for &d in &self.dhidden {
                for &e in &self.encoders {
                    out.push((b, d, e));
                }
            }
        }
        out
    }
}

/// A document prepared for training: sparse counts plus the dense encoder
/// input.
struct Prepared {
    words: Vec<usize>,
    counts: Vec<f64>,
    length: f64,
    input: Vec<f64>,
}

fn prepare(docs: &[Document], vocab: usize, kind: EncoderKind) -> Vec<Prepared> {
    docs.iter()
        .filter(|d| d.length() > 0)
        .map(|d| {
            let length = d.length() as f64;
            let scale = if kind.uses_counts() { 1.0 } else { 1.0 / length };
            let mut input = vec![0.0; vocab];
            for (w, c) in d.words.iter().zip(&d.counts) {
                input[*w as usize] = *c as f64 * scale;
            }
            Prepared {
                words: d.words.iter().map(|w| *w as usize).collect(),
                counts: d.counts.iter().map(|c| *c as f64).collect(),
                length,
                input,
            }
        })
        .collect()
}

/// Encoder and decoder networks of one cell.
#[derive(Debug, Clone)]
pub struct TextVae {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub bits: usize,
}

impl TextVae {
    /// Random networks with the decoder's output bias at the log unigram
    /// frequencies. On raw counts random output weights give saturated
    /// logits for long documents, so the count encoder's output layer
    /// starts at zero (`q = prior`).
    fn new<R: Rng + ?Sized>(
        vocab: usize,
        bits: usize,
        dhidden: usize,
        kind: EncoderKind,
        width: usize,
        unigram: &[f64],
        rng: &mut R,
    ) -> LabResult<Self> {
        let mut dec_dims = vec![bits];
        dec_dims.extend(std::iter::repeat_n(width, dhidden));
        dec_dims.push(vocab);
        let mut decoder = Mlp::random(&dec_dims, rng)?;
        let last = decoder.layers().len() - 1;
        decoder.layers_mut()[last].bias_mut().copy_from_slice(unigram);

        let enc_dims = match kind {
            EncoderKind::E2 => vec![vocab, width, width, bits],
            EncoderKind::E1 | EncoderKind::E3 => vec![vocab, bits],
        };
        let mut encoder = Mlp::random(&enc_dims, rng)?;
        if kind.uses_counts() {
            let last = encoder.layers_mut().len() - 1;
            let out = &mut encoder.layers_mut()[last];
            *out = efvae::AffineMap::zeros(out.outputs(), out.inputs());
        }
        Ok(TextVae { encoder, decoder, bits })
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    fn set_params(&mut self, p: &[f64]) -> LabResult<()> {
        let ne = self.encoder.num_params();
        self.encoder.set_params(&p[..ne])?;
        self.decoder.set_params(&p[ne..])?;
        Ok(())
    }

    /// `Σ_k x_k log softmax(f(z))_k` for a prepared document.
    fn reconstruction(&self, z: &[f64], doc: &Prepared) -> LabResult<f64> {
        let lp = log_softmax(&self.decoder.forward(z)?);
        Ok(doc.words.iter().zip(&doc.counts).map(|(w, c)| c * lp[*w]).sum())
    }
}

/// `KL(Bern(σ(φ)) ‖ Bern(½))` summed over bits.
fn kl_to_uniform(logits: &[f64]) -> f64 {
    logits
        .iter()
        .map(|&a| {
            let p = sigmoid(a);
            // p log p + (1-p) log(1-p) = p a - softplus(a)
            p * a - softplus(a) + std::f64::consts::LN_2
        })
        .sum()
}

/// Adds the gradient of `−Σ x_k log softmax(f(z))_k` (scaled by `weight`)
/// to `grad`, returning the reconstruction value.
fn decoder_step(vae: &TextVae, z: &[f64], doc: &Prepared, weight: f64, grad: &mut [f64]) -> LabResult<f64> {
    let trace = vae.decoder.forward_trace(z)?;
    let lp = log_softmax(trace.output());
    let mut up: Vec<f64> = lp.iter().map(|l| weight * doc.length * l.exp()).collect();
    let mut recon = 0.0;
    for (w, c) in doc.words.iter().zip(&doc.counts) {
        recon += c * lp[*w];
        up[*w] -= weight * c;
    }
    vae.decoder.backward(&trace, &up, grad)?;
    Ok(recon)
}

/// Accumulates a stochastic gradient of the batch NELBO: ARM for the
/// reconstruction term through the encoder, the closed-form KL gradient,
/// and the decoder gradient averaged over both antithetic configurations.
fn batch_gradient<R: Rng + ?Sized>(
    vae: &TextVae,
    docs: &[&Prepared],
    samples: usize,
    rng: &mut R,
) -> LabResult<Vec<f64>> {
    let ne = vae.encoder.num_params();
    let mut grad = vec![0.0; ne + vae.decoder.num_params()];
    let (g_enc, g_dec) = grad.split_at_mut(ne);
    let inv_k = 1.0 / samples as f64;
    for doc in docs {
        let trace = vae.encoder.forward_trace(&doc.input)?;
        let logits = trace.output().to_vec();
        let mut up: Vec<f64> = logits
            .iter()
            .map(|&a| {
                let p = sigmoid(a);
                p * (1.0 - p) * a
            })
            .collect();
        for _ in 0..samples {
            let u: Vec<f64> = (0..vae.bits).map(|_| rng.random::<f64>()).collect();
            let (z1, z2) = arm_pair(&logits, &u);
            if z1 == z2 {
                decoder_step(vae, &z1, doc, inv_k, g_dec)?;
            } else {
                let f1 = decoder_step(vae, &z1, doc, 0.5 * inv_k, g_dec)?;
                let f2 = decoder_step(vae, &z2, doc, 0.5 * inv_k, g_dec)?;
                for (g, ui) in up.iter_mut().zip(&u) {
                    *g -= inv_k * (f1 - f2) * (ui - 0.5);
                }
            }
        }
        vae.encoder.backward(&trace, &up, g_enc)?;
    }
    let scale = 1.0 / docs.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(grad)
}

/// How NELBO is evaluated for a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    Exact,
    MonteCarlo,
}

struct Evaluator {
    method: EvalMethod,
    samples: usize,
    seed: u64,
}

impl Evaluator {
    /// Mean NELBO per document. Monte Carlo evaluation reuses the same
    /// random numbers at every call.
    fn nelbo(&self, vae: &TextVae, docs: &[Prepared]) -> LabResult<f64> {
        let mut total = 0.0;
        match self.method {
            EvalMethod::Exact => {
                let space = FiniteSpace::binary(vae.bits, BitEncoding::ZeroOne)?;
                let table = space
                    .iter()
                    .map(|z| Ok(log_softmax(&vae.decoder.forward(z)?)))
                    .collect::<LabResult<Vec<_>>>()?;
                for doc in docs {
                    let logits = vae.encoder.forward(&doc.input)?;
                    let lp1: Vec<f64> = logits.iter().map(|a| -softplus(-a)).collect();
                    let lp0: Vec<f64> = logits.iter().map(|a| -softplus(*a)).collect();
                    let mut recon = 0.0;
                    for (z, row) in space.iter().zip(&table) {
                        let lq: f64 = z
                            .iter()
                            .enumerate()
                            .map(|(j, b)| if *b == 1.0 { lp1[j] } else { lp0[j] })
                            .sum();
                        let r: f64 = doc.words.iter().zip(&doc.counts).map(|(w, c)| c * row[*w]).sum();
                        recon += lq.exp() * r;
                    }
                    total += kl_to_uniform(&logits) - recon;
                }
            }
            EvalMethod::MonteCarlo => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                for doc in docs {
                    let logits = vae.encoder.forward(&doc.input)?;
                    let probs: Vec<f64> = logits.iter().map(|a| sigmoid(*a)).collect();
                    let mut recon = 0.0;
                    for _ in 0..self.samples {
                        let z: Vec<f64> = probs
                            .iter()
                            .map(|p| if rng.random::<f64>() < *p { 1.0 } else { 0.0 })
                            .collect();
                        recon += vae.reconstruction(&z, doc)?;
                    }
                    total += kl_to_uniform(&logits) - recon / self.samples as f64;
                }
            }
        }
        Ok(total / docs.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub train_nelbo: f64,
    pub test_nelbo: f64,
    pub best_train_nelbo: f64,
    pub best_test_nelbo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub bits: usize,
    pub dhidden: usize,
    pub encoder: EncoderKind,
    pub eval_method: EvalMethod,
    /// Lowest NELBO over all evaluations.
    pub best_train_nelbo: f64,
    pub best_test_nelbo: f64,
    pub evaluations: Vec<EvalPoint>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub vocab_size: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    pub mean_train_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextVaeReport {
    pub failed: bool,
    pub corpus: CorpusSummary,
    /// Per-document NLL of the planted model in NELBO units (synthetic
    /// corpora only).
    pub planted_train_nll: Option<f64>,
    pub planted_test_nll: Option<f64>,
    pub cells: Vec<CellResult>,
}

impl TextVaeReport {
    pub fn cell(&self, bits: usize, dhidden: usize, encoder: EncoderKind) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.bits == bits && c.dhidden == dhidden && c.encoder == encoder)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_CORPUS: u64 = 1;
const STREAM_CELLS: u64 = 1000;

fn log_unigram(corpus: &Corpus) -> Vec<f64> {
    let mut counts = vec![0.5; corpus.vocab_size];
    for d in &corpus.train {
        for (w, c) in d.words.iter().zip(&d.counts) {
            counts[*w as usize] += *c as f64;
        }
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| (c / total).ln()).collect()
}

struct CellSpec<'a> {
    bits: usize,
    dhidden: usize,
    kind: EncoderKind,
    seed: u64,
    config: &'a TextVaeConfig,
    corpus: &'a Corpus,
    unigram: &'a [f64],
}

fn run_cell(cell: CellSpec) -> LabResult<CellResult> {
    let CellSpec {
        bits,
        dhidden,
        kind,
        seed,
        config,
        corpus,
        unigram,
    } = cell;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = prepare(&corpus.train, corpus.vocab_size, kind);
    let test = prepare(&corpus.test, corpus.vocab_size, kind);
    if train.is_empty() || test.is_empty() {
        return Err(LabError::Validation("train and test splits need nonempty documents".into()));
    }
    let mut vae = TextVae::new(corpus.vocab_size, bits, dhidden, kind, config.hidden_width, unigram, &mut rng)?;
    let eval = Evaluator {
        method: if bits <= config.exact_eval_max_bits {
            EvalMethod::Exact
        } else {
            EvalMethod::MonteCarlo
        },
        samples: config.eval_samples,
        seed: rng.random(),
    };
    let mut params = vae.params();
    let mut adam = AdamState::new(params.len(), config.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut result = CellResult {
        bits,
        dhidden,
        encoder: kind,
        eval_method: eval.method,
        best_train_nelbo: f64::INFINITY,
        best_test_nelbo: f64::INFINITY,
        evaluations: Vec::new(),
        failure: None,
    };
    let total_epochs = config.epochs + config.refine_epochs;
    for epoch in 1..=total_epochs {
        let samples = if epoch <= config.epochs { 1 } else { config.refine_samples };
        // Fisher–Yates shuffle of the training order
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|i| &train[*i]).collect();
            let step = batch_gradient(&vae, &batch, samples, &mut rng)
                .and_then(|g| adam.step(&mut params, &g).map_err(LabError::from))
                .and_then(|_| vae.set_params(&params));
            if let Err(e) = step {
                result.failure = Some(format!("epoch {epoch}: {e}"));
                return Ok(result);
            }
        }
        if epoch % config.eval_every == 0 || epoch == total_epochs {
            let tr = eval.nelbo(&vae, &train)?;
            let te = eval.nelbo(&vae, &test)?;
            if !(tr.is_finite() && te.is_finite()) {
                result.failure = Some(format!("epoch {epoch}: non-finite NELBO"));
                return Ok(result);
            }
            result.best_train_nelbo = result.best_train_nelbo.min(tr);
            result.best_test_nelbo = result.best_test_nelbo.min(te);
            result.evaluations.push(EvalPoint {
                epoch,
                train_nelbo: tr,
                test_nelbo: te,
                best_train_nelbo: result.best_train_nelbo,
                best_test_nelbo: result.best_test_nelbo,
            });
        }
    }
    Ok(result)
}

/// Loads or synthesizes the corpus; also returns the planted model's NLL
/// per document on train and test for synthetic corpora.
pub fn load_corpus(config: &TextVaeConfig, seed: u64) -> LabResult<(Corpus, Option<(f64, f64)>)> {
    match &config.corpus {
        CorpusSource::Synthetic(spec) => {
            let (corpus, rbm) = synthesize(spec, &mut stream(seed, STREAM_CORPUS))?;
            let nll = (rbm_nll_per_doc(&rbm, &corpus.train)?, rbm_nll_per_doc(&rbm, &corpus.test)?);
            Ok((corpus, Some(nll)))
        }
        CorpusSource::File { path } => {
            let corpus: Corpus = read_json(path)?;
            corpus.validate()?;
            Ok((corpus, None))
        }
    }
}

/// Trains every `(bits, dhidden, encoder)` cell. Cells run in parallel with
/// seeds derived from `seed` and the cell's position, so results do not
/// depend on the thread count.
pub fn run_textvae(config: &TextVaeConfig, seed: u64) -> LabResult<TextVaeReport> {
    config.validate()?;
    let (corpus, planted) = load_corpus(config, seed)?;
    let unigram = log_unigram(&corpus);
    let cells = config.cells();
    let results = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(bits, dhidden, kind))| {
            let mut r = stream(seed, STREAM_CELLS + i as u64);
            run_cell(CellSpec {
                bits,
                dhidden,
                kind,
                seed: r.random(),
                config,
                corpus: &corpus,
                unigram: &unigram,
            })
        })
        .collect::<LabResult<Vec<_>>>()?;
    let nonempty: Vec<&Document> = corpus.train.iter().filter(|d| d.length() > 0).collect();
    let mean_len = nonempty.iter().map(|d| d.length() as f64).sum::<f64>() / nonempty.len().max(1) as f64;
    Ok(TextVaeReport {
        failed: results.iter().any(|c| c.failure.is_some()),
        corpus: CorpusSummary {
            vocab_size: corpus.vocab_size,
            train_docs: corpus.train.len(),
            test_docs: corpus.test.len(),
            mean_train_length: mean_len,
        },
        planted_train_nll: planted.map(|p| p.0),
        planted_test_nll: planted.map(|p| p.1),
        cells: results,
    })
}
