use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use efvae_lab::certify::{CertifyConfig, FlowConfig};
use efvae_lab::config::IngestConfig;
use efvae_lab::textvae::TextVaeConfig;
use efvae_lab::toy::ToyConfig;
use efvae_lab::{run_to_dir, Experiment, LabError, LabResult, RunConfig};

/// Experiments and certificates for exponential-family VAEs.
#[derive(Debug, Parser)]
#[command(name = "efvae-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; its experiment must match the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[command(flatten)]
    common: Common,
    /// Serialized model (overrides the configured path).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Data distribution (overrides the configured path).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    common: Common,
    /// Training split in docword format.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test split in docword format.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Keeps the most frequent training words, 10000 by default.
    #[arg(long)]
    max_vocab: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Gaussian-mixture toy experiment with decision maps.
    Toy(Common),
    /// Encoder comparison for the discrete text VAE.
    Textvae(Common),
    /// Tightness certificate of a finite VAE on a data distribution.
    Certify(ModelArgs),
    /// Harmonium projection of a finite VAE's decoder.
    Project(ModelArgs),
    /// Two-bit flow example over a range of β.
    FlowExample(Common),
    /// Converts docword files into a corpus.
    Ingest(IngestArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Toy(_) => "toy",
            Command::Textvae(_) => "textvae",
            Command::Certify(_) => "certify",
            Command::Project(_) => "project",
            Command::FlowExample(_) => "flow-example",
            Command::Ingest(_) => "ingest",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Toy(c) | Command::Textvae(c) | Command::FlowExample(c) => c,
            Command::Certify(m) | Command::Project(m) => &m.common,
            Command::Ingest(i) => &i.common,
        }
    }
}

fn missing(flag: &str, cmd: &str) -> LabError {
    LabError::Validation(format!("{cmd} needs --{flag} or a configuration file"))
}

fn model_config(existing: Option<CertifyConfig>, args: &ModelArgs, cmd: &str) -> LabResult<CertifyConfig> {
    let model = args.model.clone().or_else(|| existing.as_ref().map(|c| c.model.clone()));
    let data = args.data.clone().or_else(|| existing.as_ref().map(|c| c.data.clone()));
    Ok(CertifyConfig {
        model: model.ok_or_else(|| missing("model", cmd))?,
        data: data.ok_or_else(|| missing("data", cmd))?,
    })
}

/// Loads or defaults the configuration and applies command-line overrides.
fn resolve(cmd: &Command) -> LabResult<RunConfig> {
    let common = cmd.common();
    let mut config = match &common.config {
        Some(path) => {
            let c = RunConfig::load(path)?;
            if c.experiment.command() != cmd.name() {
                return Err(LabError::Validation(format!(
                    "configuration {} is for `{}`, not `{}`",
                    path.display(),
                    c.experiment.command(),
                    cmd.name()
                )));
            }
            Some(c)
        }
        None => None,
    };
    let experiment = config.as_ref().map(|c| c.experiment.clone());
    let experiment = match (cmd, experiment) {
        (Command::Toy(_), None) => Experiment::Toy(ToyConfig::default()),
        (Command::Textvae(_), None) => Experiment::Textvae(TextVaeConfig::default()),
        (Command::FlowExample(_), None) => Experiment::FlowExample(FlowConfig::default()),
        (Command::Certify(a), e) => Experiment::Certify(model_config(
            e.and_then(|e| match e {
                Experiment::Certify(c) => Some(c),
                _ => None,
            }),
            a,
            "certify",
        )?),
        (Command::Project(a), e) => Experiment::Project(model_config(
            e.and_then(|e| match e {
                Experiment::Project(c) => Some(c),
                _ => None,
            }),
            a,
            "project",
        )?),
        (Command::Ingest(a), e) => {
            let existing = e.and_then(|e| match e {
                Experiment::Ingest(c) => Some(c),
                _ => None,
            });
            let train = a
                .train
                .clone()
                .or_else(|| existing.as_ref().map(|c| c.train.clone()))
                .ok_or_else(|| missing("train", "ingest"))?;
            Experiment::Ingest(IngestConfig {
                train,
                test: a.test.clone().or_else(|| existing.as_ref().and_then(|c| c.test.clone())),
                max_vocab: a
                    .max_vocab
                    .or_else(|| existing.as_ref().map(|c| c.max_vocab))
                    .unwrap_or(10_000),
            })
        }
        (_, Some(e)) => e,
    };
    let mut resolved = config.take().unwrap_or_else(|| RunConfig::new(experiment.clone()));
    resolved.experiment = experiment;
    if let Some(seed) = common.seed {
        resolved.seed = seed;
    }
    if let Some(out) = &common.out {
        resolved.output_dir = Some(out.clone());
    }
    resolved.output_dir = Some(resolved.resolved_output_dir());
    resolved.validate()?;
    Ok(resolved)
}

fn run(cmd: &Command) -> LabResult<bool> {
    let config = resolve(cmd)?;
    let dir = config.resolved_output_dir();
    let failed = run_to_dir(&config, &dir)?;
    eprintln!("wrote results to {}", dir.display());
    Ok(failed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("error: experiment failed; see the report for details");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
