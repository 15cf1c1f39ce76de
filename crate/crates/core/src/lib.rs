//! Monte-Carlo calibration of Gaussian perturbation for black-box
//! mechanisms, with conversion of the certified mutual-information budget
//! into PAC Privacy guarantees.
//!
//! Analyses:
//! - [`deterministic::analyze_deterministic`] for deterministic mechanisms,
//!   from the empirical output covariance;
//! - [`randomized::analyze_randomized`] for randomized mechanisms, from the
//!   minimal-permutation distance between paired outputs;
//! - [`verifier::verify_proposal`] for an arbitrary Gaussian proposal over a
//!   finite pool of datasets;
//! - [`ledger::LedgerState`] for adaptively composed releases.
//!
//! [`bounds`] turns a budget into posterior success bounds and
//! [`baselines`] gives the input-independent comparison points.

pub mod assignment;
pub mod baselines;
pub mod bounds;
pub mod certificate;
pub mod composition;
pub mod deterministic;
pub mod error;
pub mod ledger;
pub mod linalg;
pub mod mixture;
pub mod noise;
pub mod oracle;
pub mod parallel;
pub mod randomized;
pub mod report;
pub mod seed;
pub mod stats;
pub mod verifier;

pub use certificate::{Caveat, Diagnostics, Method, MiCertificate};
pub use error::{Error, Result};
pub use noise::{sample_noise, NoiseKind, NoiseSpec};
pub use parallel::Executor;
pub use seed::{Role, SeedDerivation, StreamSeed};
