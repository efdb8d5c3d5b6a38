//! Experiment drivers for `efvae-core`: the two-dimensional toy study, the
//! discrete text VAE, certificate and projection reports, corpus ingestion,
//! and the file formats they read and write.

pub mod certify;
pub mod config;
pub mod corpus;
pub mod error;
pub mod grid;
pub mod output;
pub mod textvae;
pub mod toy;

pub use config::{execute, run_to_dir, Execution, Experiment, RunConfig};
pub use error::{LabError, LabResult};
