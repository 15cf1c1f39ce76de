use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Dataset, SubprocessOracle};
use crate::error::{Error, Result};

/// Size of the mechanism's randomness-seed set |Θ|.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSpace {
    Finite(u64),
    Unbounded,
}

impl SeedSpace {
    pub fn finite(self) -> Option<u64> {
        match self {
            SeedSpace::Finite(n) => Some(n),
            SeedSpace::Unbounded => None,
        }
    }
}

impl fmt::Display for SeedSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedSpace::Finite(n) => write!(f, "{n}"),
            SeedSpace::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for SeedSpace {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SeedSpace::Finite(n) => s.serialize_u64(*n),
            SeedSpace::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for SeedSpace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(u64),
            S(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(0) => Err(serde::de::Error::custom("seed_space_size must be positive")),
            Repr::N(n) => Ok(SeedSpace::Finite(n)),
            Repr::S(s) if s == "unbounded" => Ok(SeedSpace::Unbounded),
            Repr::S(s) => Err(serde::de::Error::custom(format!(
                "seed_space_size must be a positive integer or \"unbounded\", got {s:?}"
            ))),
        }
    }
}

fn default_seed_space() -> SeedSpace {
    SeedSpace::Finite(1)
}

/// Output contract every evaluation is checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismContract {
    #[serde(default)]
    pub randomized: bool,
    #[serde(default = "default_seed_space", rename = "seed_space_size")]
    pub seed_space: SeedSpace,
    pub output_dim: usize,
    pub output_radius: f64,
}

impl MechanismContract {
    pub fn deterministic(output_dim: usize, output_radius: f64) -> Self {
        Self {
            randomized: false,
            seed_space: SeedSpace::Finite(1),
            output_dim,
            output_radius,
        }
    }

    pub fn randomized(output_dim: usize, output_radius: f64, seed_space: SeedSpace) -> Self {
        Self {
            randomized: true,
            seed_space,
            output_dim,
            output_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 {
            return Err(Error::input("output_dim must be positive"));
        }
        if !(self.output_radius > 0.0 && self.output_radius.is_finite()) {
            return Err(Error::input("output_radius must be a positive finite number"));
        }
        Ok(())
    }
}

/// Mechanism output, checked against its contract at ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutputSample {
    values: Vec<f64>,
}

impl OutputSample {
    pub fn checked(values: Vec<f64>, contract: &MechanismContract) -> Result<Self> {
        if values.len() != contract.output_dim {
            return Err(Error::contract(format!(
                "output has dimension {} but the mechanism declares {}",
                values.len(),
                contract.output_dim
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("output contains a non-finite value"));
        }
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > contract.output_radius {
            return Err(Error::Radius {
                trial: None,
                norm,
                radius: contract.output_radius,
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// A black-box mechanism M(X, θ).
pub trait Mechanism: Send + Sync {
    fn contract(&self) -> &MechanismContract;

    /// Raw evaluation; callers go through [`evaluate`] which enforces the
    /// contract.
    fn evaluate_raw(&self, data: &Dataset, seed: u64) -> Result<Vec<f64>>;
}

impl<M: Mechanism + ?Sized> Mechanism for Arc<M> {
    fn contract(&self) -> &MechanismContract {
        (**self).contract()
    }
    fn evaluate_raw(&self, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
        (**self).evaluate_raw(data, seed)
    }
}

impl<M: Mechanism + ?Sized> Mechanism for &M {
    fn contract(&self) -> &MechanismContract {
        (**self).contract()
    }
    fn evaluate_raw(&self, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
        (**self).evaluate_raw(data, seed)
    }
}

impl<M: Mechanism + ?Sized> Mechanism for Box<M> {
    fn contract(&self) -> &MechanismContract {
        (**self).contract()
    }
    fn evaluate_raw(&self, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
        (**self).evaluate_raw(data, seed)
    }
}

/// Evaluates and validates against (d, r).
pub fn evaluate(mech: &(impl Mechanism + ?Sized), data: &Dataset, seed: u64) -> Result<OutputSample> {
    let raw = mech.evaluate_raw(data, seed)?;
    OutputSample::checked(raw, mech.contract())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinKind {
    /// Column-wise arithmetic mean; empty input is an error.
    Mean,
    /// Column-wise sum; empty input gives the zero vector.
    Sum,
    /// The single row itself.
    Identity,
}

pub struct Builtin {
    kind: BuiltinKind,
    contract: MechanismContract,
}

impl Builtin {
    pub fn new(kind: BuiltinKind, output_dim: usize, output_radius: f64) -> Self {
        Self {
            kind,
            contract: MechanismContract::deterministic(output_dim, output_radius),
        }
    }
}

impl Mechanism for Builtin {
    fn contract(&self) -> &MechanismContract {
        &self.contract
    }

    fn evaluate_raw(&self, data: &Dataset, _seed: u64) -> Result<Vec<f64>> {
        let d = self.contract.output_dim;
        if data.cols() != d && !(data.is_empty() && self.kind == BuiltinKind::Sum) {
            return Err(Error::contract(format!(
                "dataset width {} does not match output dimension {d}",
                data.cols()
            )));
        }
        match self.kind {
            BuiltinKind::Sum => Ok(column_sums(data, d)),
            BuiltinKind::Mean => {
                if data.is_empty() {
                    return Err(Error::contract("mean of an empty dataset is undefined"));
                }
                let n = data.rows() as f64;
                Ok(column_sums(data, d).into_iter().map(|s| s / n).collect())
            }
            BuiltinKind::Identity => {
                if data.rows() != 1 {
                    return Err(Error::contract(format!(
                        "identity mechanism needs exactly one row, got {}",
                        data.rows()
                    )));
                }
                Ok(data.row(0).to_vec())
            }
        }
    }
}

/// Sums in sorted order per column, so the result does not depend on the
/// order of the rows.
fn column_sums(data: &Dataset, d: usize) -> Vec<f64> {
    let mut col = Vec::with_capacity(data.rows());
    (0..d)
        .map(|j| {
            col.clear();
            col.extend(data.iter_rows().map(|r| r[j]));
            col.sort_by(f64::total_cmp);
            col.iter().sum()
        })
        .collect()
}

pub struct SubprocessMechanism {
    oracle: SubprocessOracle,
    contract: MechanismContract,
}

impl SubprocessMechanism {
    pub fn new(command: Vec<String>, contract: MechanismContract) -> Result<Self> {
        contract.validate()?;
        Ok(Self {
            oracle: SubprocessOracle::new(command)?,
            contract,
        })
    }

    pub fn oracle(&self) -> &SubprocessOracle {
        &self.oracle
    }
}

impl Mechanism for SubprocessMechanism {
    fn contract(&self) -> &MechanismContract {
        &self.contract
    }

    fn evaluate_raw(&self, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
        self.oracle.evaluate(data, seed, None)
    }
}

/// Adapts a closure `(dataset, seed) -> output` into a mechanism.
pub struct FnMechanism<F> {
    contract: MechanismContract,
    f: F,
}

impl<F> FnMechanism<F>
where
    F: Fn(&Dataset, u64) -> Result<Vec<f64>> + Send + Sync,
{
    pub fn new(contract: MechanismContract, f: F) -> Self {
        Self { contract, f }
    }
}

impl<F> Mechanism for FnMechanism<F>
where
    F: Fn(&Dataset, u64) -> Result<Vec<f64>> + Send + Sync,
{
    fn contract(&self) -> &MechanismContract {
        &self.contract
    }

    fn evaluate_raw(&self, data: &Dataset, seed: u64) -> Result<Vec<f64>> {
        (self.f)(data, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MechanismKind {
    BuiltinMean,
    BuiltinSum,
    BuiltinIdentity,
    Subprocess { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    #[serde(flatten)]
    pub kind: MechanismKind,
    #[serde(flatten)]
    pub contract: MechanismContract,
}

impl MechanismSpec {
    pub fn build(&self) -> Result<Box<dyn Mechanism>> {
        self.contract.validate()?;
        let builtin = |kind| -> Result<Box<dyn Mechanism>> {
            if self.contract.randomized {
                return Err(Error::input("builtin mechanisms are deterministic; set randomized = false"));
            }
            Ok(Box::new(Builtin::new(kind, self.contract.output_dim, self.contract.output_radius)))
        };
        match &self.kind {
            MechanismKind::BuiltinMean => builtin(BuiltinKind::Mean),
            MechanismKind::BuiltinSum => builtin(BuiltinKind::Sum),
            MechanismKind::BuiltinIdentity => builtin(BuiltinKind::Identity),
            MechanismKind::Subprocess { command } => Ok(Box::new(SubprocessMechanism::new(
                command.clone(),
                self.contract.clone(),
            )?)),
        }
    }
}
