//! Input-independent worst-case baselines and closed-form Gaussian
//! mean-estimation leakage.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, log_det_pd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseQuery {
    pub r: f64,
    pub d: usize,
    pub v: f64,
    #[serde(default)]
    pub n: Option<u64>,
    #[serde(default)]
    pub delta2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZcdpNoise {
    /// Per-record zCDP parameter ξ = v/n.
    pub xi: f64,
    pub sigma: f64,
    /// σ√d.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseNoise {
    /// Order bound r√d/√v with the unspecified constant taken as 1.
    pub scale_lower: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zcdp: Option<ZcdpNoise>,
}

pub fn worst_case_noise(q: &WorstCaseQuery) -> Result<WorstCaseNoise> {
    if !(q.r > 0.0 && q.v > 0.0 && q.d > 0) {
        return Err(Error::input("r, d and v must be positive"));
    }
    let d = q.d as f64;
    let zcdp = match (q.n, q.delta2) {
        (Some(n), Some(delta2)) => {
            if n == 0 || !(delta2 > 0.0) {
                return Err(Error::input("n and delta2 must be positive"));
            }
            let sigma = delta2 * (n as f64 / (2.0 * q.v)).sqrt();
            Some(ZcdpNoise {
                xi: q.v / n as f64,
                sigma,
                magnitude: sigma * d.sqrt(),
            })
        }
        (None, None) => None,
        _ => return Err(Error::input("the zCDP baseline needs both n and delta2")),
    };
    Ok(WorstCaseNoise {
        scale_lower: q.r * d.sqrt() / q.v.sqrt(),
        zcdp,
    })
}

/// Mean of n i.i.d. rows with population covariance `sigma`, released
/// with noise covariance `sigma_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeanTask {
    pub sigma: DMatrix<f64>,
    pub n: u64,
    pub sigma_b: DMatrix<f64>,
}

impl GaussianMeanTask {
    fn validate(&self, min_n: u64) -> Result<()> {
        if self.n < min_n {
            return Err(Error::input(format!("n must be at least {min_n}")));
        }
        if self.sigma.shape() != self.sigma_b.shape() {
            return Err(Error::contract("population and noise covariances differ in shape"));
        }
        check_symmetric(&self.sigma)?;
        check_symmetric(&self.sigma_b)
    }
}

/// ½ log det((Σ/n + Σ_B) Σ_B⁻¹): leakage about the whole dataset.
pub fn gaussian_mean_mi_full(task: &GaussianMeanTask) -> Result<f64> {
    task.validate(1)?;
    let released = &task.sigma / task.n as f64 + &task.sigma_b;
    Ok(0.5 * (log_det_pd(&released)? - log_det_pd(&task.sigma_b)?))
}

/// ½ log det((Σ/n + Σ_B)((n−1)/n² Σ + Σ_B)⁻¹): leakage about one row.
pub fn gaussian_mean_mi_individual(task: &GaussianMeanTask) -> Result<f64> {
    task.validate(2)?;
    let n = task.n as f64;
    let released = &task.sigma / n + &task.sigma_b;
    let others = &task.sigma * ((n - 1.0) / (n * n)) + &task.sigma_b;
    Ok(0.5 * (log_det_pd(&released)? - log_det_pd(&others)?))
}

/// Trace of the optimal noise for the Gaussian mean task: (Σ√λ)²/(2v) when
/// v ≥ d/(n−1), else Σ_j min{√λ_j Σ_l√λ_l/(2v), (n−1)λ_j}.
pub fn noise_gap(eigenvalues: &[f64], n: u64, v: f64) -> Result<f64> {
    if n < 2 || !(v > 0.0) || eigenvalues.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::input("noise_gap needs n >= 2, v > 0 and nonnegative eigenvalues"));
    }
    let d = eigenvalues.len() as f64;
    let s: f64 = eigenvalues.iter().map(|l| l.sqrt()).sum();
    if v >= d / (n - 1) as f64 {
        Ok(s * s / (2.0 * v))
    } else {
        Ok(eigenvalues
            .iter()
            .map(|l| (l.sqrt() * s / (2.0 * v)).min((n - 1) as f64 * l))
            .sum())
    }
}
