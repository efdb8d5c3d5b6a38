//! Run configuration and command dispatch.
//!
//! A [`RunConfig`] names one experiment with its parameters. Running it
//! produces a set of staged output files, always including `report.json`,
//! which embeds the resolved configuration next to the result.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certify::{certify_outputs, flow_outputs, project_outputs, CertifyConfig, FlowConfig};
use crate::corpus::{ingest_bow, Corpus};
use crate::error::{LabError, LabResult};
use crate::output::{csv_bytes, fmt_f64, read_json, Outputs};
use crate::textvae::{run_textvae, TextVaeConfig, TextVaeReport};
use crate::toy::{run_toy, ToyConfig, ToyReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    /// Training split in docword format.
    pub train: PathBuf,
    /// Optional test split in docword format with the same word ids.
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
}

fn default_max_vocab() -> usize {
    10_000
}

impl IngestConfig {
    pub fn validate(&self) -> LabResult<()> {
        if self.max_vocab == 0 {
            return Err(LabError::Validation("max_vocab must be positive".into()));
        }
        Ok(())
    }
}

/// The experiment to run, keyed by subcommand name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Toy(ToyConfig),
    Textvae(TextVaeConfig),
    Certify(CertifyConfig),
    Project(CertifyConfig),
    FlowExample(FlowConfig),
    Ingest(IngestConfig),
}

impl Experiment {
    /// The subcommand name (`flow-example` for the flow example).
    pub fn command(&self) -> &'static str {
        match self {
            Experiment::Toy(_) => "toy",
            Experiment::Textvae(_) => "textvae",
            Experiment::Certify(_) => "certify",
            Experiment::Project(_) => "project",
            Experiment::FlowExample(_) => "flow-example",
            Experiment::Ingest(_) => "ingest",
        }
    }

    pub fn validate(&self) -> LabResult<()> {
        match self {
            Experiment::Toy(c) => c.validate(),
            Experiment::Textvae(c) => c.validate(),
            Experiment::Certify(_) | Experiment::Project(_) => Ok(()),
            Experiment::FlowExample(c) => c.validate(),
            Experiment::Ingest(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Where results are written; the command line may override it.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub experiment: Experiment,
}

impl RunConfig {
    pub fn new(experiment: Experiment) -> Self {
        RunConfig {
            seed: 0,
            output_dir: None,
            experiment,
        }
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> LabResult<()> {
        self.experiment.validate()
    }

    /// `output_dir`, or `efvae-out/<command>` when unset.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| Path::new("efvae-out").join(self.experiment.command()))
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport<'a, T> {
    pub config: &'a RunConfig,
    pub result: T,
}

/// Staged outputs of a run and whether the experiment reported a failure
/// (for example, optimizer divergence). Failed runs still produce their
/// partial report.
#[derive(Debug)]
pub struct Execution {
    pub outputs: Outputs,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub vocab_size: usize,
    pub train_docs: usize,
    pub test_docs: usize,
    pub train_tokens: u64,
    pub test_tokens: u64,
}

impl IngestSummary {
    pub fn new(c: &Corpus) -> Self {
        IngestSummary {
            vocab_size: c.vocab_size,
            train_docs: c.train.len(),
            test_docs: c.test.len(),
            train_tokens: c.train.iter().map(|d| d.length()).sum(),
            test_tokens: c.test.iter().map(|d| d.length()).sum(),
        }
    }
}

fn toy_outputs(config: &RunConfig, toy: &ToyConfig) -> LabResult<Execution> {
    let run = run_toy(toy, config.seed)?;
    let mut out = Outputs::new();
    out.add_json("report.json", &RunReport { config, result: &run.report })?;
    out.add("trajectory.csv", toy_trajectory_csv(&run.report)?);
    for (name, grid) in &run.grids {
        grid.stage(&mut out, name)?;
    }
    Ok(Execution {
        outputs: out,
        failed: run.report.failed,
    })
}

fn toy_trajectory_csv(r: &ToyReport) -> LabResult<Vec<u8>> {
    let rows = r
        .pretrain
        .iter()
        .map(|p| ("pretrain", p))
        .chain(r.joint.iter().map(|p| ("joint", p)))
        .map(|(phase, p)| {
            vec![
                phase.to_string(),
                p.step.to_string(),
                fmt_f64(p.elbo),
                fmt_f64(p.loglik),
                fmt_f64(p.kl_gap),
            ]
        });
    csv_bytes(&["phase", "step", "elbo", "loglik", "kl_gap"], rows)
}

fn textvae_tables(r: &TextVaeReport) -> LabResult<(Vec<u8>, Vec<u8>)> {
    let nelbo = csv_bytes(
        &["bits", "dhidden", "encoder", "eval_method", "best_train_nelbo", "best_test_nelbo", "failed"],
        r.cells.iter().map(|c| {
            vec![
                c.bits.to_string(),
                c.dhidden.to_string(),
                c.encoder.name().to_string(),
                match c.eval_method {
                    crate::textvae::EvalMethod::Exact => "exact".to_string(),
                    crate::textvae::EvalMethod::MonteCarlo => "monte_carlo".to_string(),
                },
                fmt_f64(c.best_train_nelbo),
                fmt_f64(c.best_test_nelbo),
                c.failure.is_some().to_string(),
            ]
        }),
    )?;
    let traj = csv_bytes(
        &["bits", "dhidden", "encoder", "epoch", "train_nelbo", "test_nelbo"],
        r.cells.iter().flat_map(|c| {
            c.evaluations.iter().map(move |e| {
                vec![
                    c.bits.to_string(),
                    c.dhidden.to_string(),
                    c.encoder.name().to_string(),
                    e.epoch.to_string(),
                    fmt_f64(e.train_nelbo),
                    fmt_f64(e.test_nelbo),
                ]
            })
        }),
    )?;
    Ok((nelbo, traj))
}

/// Runs the experiment and stages its output files without writing them.
pub fn execute(config: &RunConfig) -> LabResult<Execution> {
    config.validate()?;
    let done = |outputs| Execution { outputs, failed: false };
    match &config.experiment {
        Experiment::Toy(toy) => toy_outputs(config, toy),
        Experiment::Textvae(tv) => {
            let report = run_textvae(tv, config.seed)?;
            let (nelbo, traj) = textvae_tables(&report)?;
            let mut out = Outputs::new();
            out.add_json("report.json", &RunReport { config, result: &report })?;
            out.add("nelbo.csv", nelbo);
            out.add("trajectory.csv", traj);
            Ok(Execution {
                outputs: out,
                failed: report.failed,
            })
        }
        Experiment::Certify(c) => {
            let (cert, mut out) = certify_outputs(c)?;
            out.add_json("report.json", &RunReport { config, result: &cert })?;
            Ok(done(out))
        }
        Experiment::Project(c) => {
            let (summary, mut out) = project_outputs(c)?;
            out.add_json("report.json", &RunReport { config, result: &summary })?;
            Ok(done(out))
        }
        Experiment::FlowExample(c) => {
            let (report, mut out) = flow_outputs(c)?;
            out.add_json("report.json", &RunReport { config, result: &report })?;
            Ok(done(out))
        }
        Experiment::Ingest(c) => {
            let corpus = ingest_bow(&c.train, c.test.as_deref(), c.max_vocab)?;
            let mut out = Outputs::new();
            out.add_json("corpus.json", &corpus)?;
            out.add_json(
                "report.json",
                &RunReport {
                    config,
                    result: IngestSummary::new(&corpus),
                },
            )?;
            Ok(done(out))
        }
    }
}

/// Runs the experiment and writes its outputs to `dir`. Returns whether the
/// experiment reported a failure.
pub fn run_to_dir(config: &RunConfig, dir: &Path) -> LabResult<bool> {
    let exec = execute(config)?;
    exec.outputs.commit(dir)?;
    Ok(exec.failed)
}
