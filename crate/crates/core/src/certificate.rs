use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DeterministicCov,
    RandomizedDist,
    Verified,
    Composed,
}

/// Assumptions a certificate rests on beyond its stated confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Caveat {
    /// Confidence relies on the unspecified universal constant κ.
    KappaConditional { kappa: f64 },
    /// The chosen (c, m, γ) fail the confidence inequality even with the
    /// configured κ.
    ConfidenceUnverified { required_c: f64 },
    /// Fewer trials than the sample-complexity bound requires.
    InsufficientTrials { required: u64, used: u64 },
    /// Seeds drawn i.i.d. from an unbounded space.
    IidSeedApproximation,
    /// A finite space of size `size` is not divisible by the block count.
    NotDivisible { what: String, size: u64, tau: u64 },
    /// The generator is an empirical pool; guarantees hold for the
    /// pool-induced distribution.
    PoolInducedDistribution,
    /// c exceeds the squared output diameter 4r², so the noise is vacuous.
    SafetyParameterExceedsDiameter { c: f64, bound: f64 },
    /// Caller attested the composed inputs are independent.
    IndependenceAttested,
}

impl Caveat {
    /// Warnings downgrade a run to "certified with caveats". The κ note is
    /// informational while the confidence inequality itself holds; the
    /// pool and independence notes only record the scope of the claim.
    pub fn is_warning(&self) -> bool {
        !matches!(
            self,
            Caveat::KappaConditional { .. } | Caveat::IndependenceAttested | Caveat::PoolInducedDistribution
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen_gap_branch: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_trace: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_magnitude: Option<f64>,
    /// ½ log det(I + Σ̂ Σ_B⁻¹) at the estimated covariance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mi_upper_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_m: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
}

/// "MI ≤ v_claimed with confidence 1 − γ".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiCertificate {
    pub method: Method,
    pub v_claimed: f64,
    pub gamma: f64,
    pub confidence: f64,
    pub m_used: u64,
    pub c: f64,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub caveats: Vec<Caveat>,
}

impl MiCertificate {
    pub fn new(method: Method, v_claimed: f64, gamma: f64, m_used: u64, c: f64) -> Self {
        Self {
            method,
            v_claimed,
            gamma,
            confidence: (1.0 - gamma).max(0.0),
            m_used,
            c,
            diagnostics: Diagnostics::default(),
            caveats: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_claimed > 0.0) || !self.v_claimed.is_finite() {
            return Err(Error::input(format!("certificate budget {} must be positive", self.v_claimed)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::input(format!("certificate gamma {} outside [0, 1]", self.gamma)));
        }
        if let (Some(t), Some(mag)) = (self.diagnostics.noise_trace, self.diagnostics.noise_magnitude) {
            if (t.sqrt() - mag).abs() > 1e-9 * mag.max(1.0) {
                return Err(Error::input("noise magnitude disagrees with noise trace"));
            }
        }
        Ok(())
    }

    pub fn has_warnings(&self) -> bool {
        self.caveats.iter().any(Caveat::is_warning)
    }

    pub fn add_caveat(&mut self, caveat: Caveat) {
        if !self.caveats.contains(&caveat) {
            self.caveats.push(caveat);
        }
    }
}
