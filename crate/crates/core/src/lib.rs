//! Exact computation for exponential-family VAEs on small spaces.
//!
//! * [`efcore`]: exponential-family primitives (statistics, log-partitions,
//!   densities, sampling).
//! * [`spaces`]: finite spaces, data distributions and the `p_d` inner
//!   product.
//! * [`nets`]: small ReLU networks with explicit backprop, and Adam.
//! * [`vae`]: EF VAEs with exact posterior, likelihood, ELBO and KL gap.
//! * [`gradest`]: exact, reparameterized and ARM gradient estimators.
//! * [`consistency`]: consistent (GLM) encoder/decoder pairs, EF Harmoniums,
//!   the weighted least-squares projection with its certificate, and the
//!   ε-tightness audit.
//! * [`rbm`]: exact-inference restricted Boltzmann machines.

pub mod consistency;
pub mod efcore;
pub mod error;
pub mod gradest;
pub mod nets;
pub mod numeric;
pub mod rbm;
pub mod spaces;
pub mod vae;

pub use efcore::{BitEncoding, ExponentialFamily, NaturalParams};
pub use error::{Error, Result};
pub use nets::{AdamConfig, AdamState, AffineMap, Mlp};
pub use spaces::{DataDistribution, FiniteSpace};
pub use vae::{Conditional, EfVae, InputMode, Latent};
