//! Black-box data generation and mechanism evaluation.
//!
//! Guarantees derived from a [`PoolSampler`] are relative to the
//! pool-induced distribution, not to whatever population the pool was drawn
//! from.

mod dataset;
mod generator;
mod mechanism;
mod subprocess;

pub use dataset::Dataset;
pub use generator::{
    generate_dataset, DataGenerator, FnGenerator, GeneratorSpec, ParametricGaussian, PoolSampler, SamplingScheme,
    SubprocessGenerator,
};
pub use mechanism::{
    evaluate, Builtin, BuiltinKind, FnMechanism, Mechanism, MechanismContract, MechanismKind, MechanismSpec,
    OutputSample, SeedSpace, SubprocessMechanism,
};
pub use subprocess::SubprocessOracle;
