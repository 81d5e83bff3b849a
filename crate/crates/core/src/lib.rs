//! Record linkage with allelic-partition microclustering priors.
//!
//! The crate is organised bottom-up:
//!
//! * [`partitions`]: linkage structures, allelic partitions, pair sets and a
//!   brute-force enumerator used as a test oracle.
//! * [`priors`]: the Ewens-Pitman prior and the Beta-Binomial allelic prior
//!   (densities, sampling, calibration, reallocation weights).
//! * [`likelihood`]: the categorical hit-and-miss distortion model.
//! * [`mcmc`]: full Gibbs scans, chaperone moves, chains and traces.
//! * [`estimation`]: Binder / VI / NID losses and greedy EPL point estimates.
//! * [`evaluation`]: FNR/FDR, Jensen-Shannon distance and trace summaries.
//! * [`datagen`]: synthetic scenarios and CSV ingestion.

pub mod datagen;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod likelihood;
pub mod mcmc;
pub mod partitions;
pub mod priors;
mod special;

pub use error::{Error, Result};
pub use partitions::{AllelicPartition, LinkageStructure, PairSet};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
