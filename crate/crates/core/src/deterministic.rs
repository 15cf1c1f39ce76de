//! Noise calibration for deterministic mechanisms from the empirical output
//! covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certificate::{Caveat, Method, MiCertificate};
use crate::error::{Error, Result};
use crate::linalg::{spectral_decompose, MomentAccumulator};
use crate::noise::{gaussian_mi_upper_bound, NoiseSpec};
use crate::oracle::{evaluate, DataGenerator, Mechanism};
use crate::parallel::Executor;
use crate::seed::{Role, SeedDerivation};

/// Trials whose output is re-evaluated under a second seed to catch
/// mechanisms that are declared deterministic but are not.
const DETERMINISM_SPOT_CHECKS: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetAnalysisConfig {
    pub m: u64,
    pub v: f64,
    pub beta: f64,
    pub c: f64,
    pub gamma: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    1.0
}

impl DetAnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::input("m must be at least 2"));
        }
        for (name, x) in [("v", self.v), ("beta", self.beta), ("c", self.c), ("kappa", self.kappa)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::input(format!("{name} = {x} must be positive")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::input(format!("gamma = {} must lie in (0, 1)", self.gamma)));
        }
        Ok(())
    }
}

/// Whether every significant eigenvalue (those above c) is separated from
/// all others by more than r√(dc) + 2c. With no significant eigenvalue the
/// condition holds vacuously.
pub fn eigen_gap_branch(eigenvalues: &[f64], c: f64, r: f64, d: usize) -> bool {
    let threshold = r * (d as f64 * c).sqrt() + 2.0 * c;
    let j0 = eigenvalues.iter().take_while(|&&l| l > c).count();
    (0..j0).all(|j| {
        eigenvalues
            .iter()
            .enumerate()
            .all(|(l, &lam)| l == j || (eigenvalues[j] - lam).abs() > threshold)
    })
}

/// Hölder-optimal anisotropic noise in the eigenbasis: per-direction
/// variance √(λ_j + s) · Σ_l √(λ_l + s) / (2v) with s = 10cv/β.
pub fn anisotropic_noise(eigenvalues: &[f64], basis: &DMatrix<f64>, v: f64, beta: f64, c: f64) -> Result<NoiseSpec> {
    let s = 10.0 * c * v / beta;
    let roots: Vec<f64> = eigenvalues.iter().map(|l| (l.max(0.0) + s).sqrt()).collect();
    let total: f64 = roots.iter().sum();
    let variances = roots.iter().map(|r| r * total / (2.0 * v)).collect();
    NoiseSpec::anisotropic(basis, variances)
}

/// σ² = (Σλ + dc)/(2v).
pub fn isotropic_fallback(eigenvalues: &[f64], v: f64, c: f64, d: usize) -> Result<NoiseSpec> {
    let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    NoiseSpec::isotropic(d, (total + d as f64 * c) / (2.0 * v))
}

/// Smallest c accepted by [`confidence_check`].
pub fn confidence_threshold(m: u64, gamma: f64, d: usize, r: f64, kappa: f64) -> f64 {
    let m = m as f64;
    let log_term = (4.0 / gamma).ln();
    let a = (d as f64 + log_term) / m;
    kappa * r * (a.sqrt().max(a) + (d as f64 * log_term / m).sqrt())
}

pub fn confidence_check(c: f64, m: u64, gamma: f64, d: usize, r: f64, kappa: f64) -> bool {
    c > 0.0 && c >= confidence_threshold(m, gamma, d, r, kappa)
}

#[derive(Debug, Clone)]
pub struct DetAnalysis {
    pub noise: NoiseSpec,
    pub certificate: MiCertificate,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

/// Simulates `m` independent trials, estimates the output covariance, and
/// emits noise certifying MI ≤ v + β.
pub fn analyze_deterministic(
    cfg: &DetAnalysisConfig,
    mech: &dyn Mechanism,
    generator: &dyn DataGenerator,
    master_seed: u64,
    exec: &Executor,
) -> Result<DetAnalysis> {
    cfg.validate()?;
    let contract = mech.contract();
    contract.validate()?;
    if contract.randomized {
        return Err(Error::input("mechanism is declared randomized; use the randomized analyzer"));
    }
    let d = contract.output_dim;
    let r = contract.output_radius;
    let seeds = SeedDerivation::new(master_seed);

    let acc = exec.fold_trials(
        cfg.m,
        || MomentAccumulator::new(d),
        |acc, k| {
            let x = generator.generate(seeds.stream(k, Role::Data1))?;
            let y = evaluate(mech, &x, seeds.stream(k, Role::SeedSelect).0)?;
            if k < DETERMINISM_SPOT_CHECKS {
                let again = evaluate(mech, &x, seeds.stream(k, Role::Noise).0)?;
                if again.values() != y.values() {
                    return Err(Error::contract(
                        "mechanism declared deterministic returned different outputs for different seeds",
                    ));
                }
            }
            acc.push(y.values());
            Ok(())
        },
        MomentAccumulator::merge,
    )?;

    let covariance = acc.covariance();
    let spectrum = spectral_decompose(&covariance)?;
    let branch = eigen_gap_branch(&spectrum.eigenvalues, cfg.c, r, d);
    let noise = if branch {
        anisotropic_noise(&spectrum.eigenvalues, &spectrum.basis, cfg.v, cfg.beta, cfg.c)?
    } else {
        isotropic_fallback(&spectrum.eigenvalues, cfg.v, cfg.c, d)?
    };

    let mut cert = MiCertificate::new(Method::DeterministicCov, cfg.v + cfg.beta, cfg.gamma, cfg.m, cfg.c);
    cert.diagnostics.eigenvalues = Some(spectrum.eigenvalues.clone());
    cert.diagnostics.eigen_gap_branch = Some(branch);
    cert.diagnostics.noise_trace = Some(noise.trace());
    cert.diagnostics.noise_magnitude = Some(noise.magnitude());
    cert.diagnostics.mi_upper_bound = Some(gaussian_mi_upper_bound(&covariance, &noise)?);
    cert.add_caveat(Caveat::KappaConditional { kappa: cfg.kappa });
    if !confidence_check(cfg.c, cfg.m, cfg.gamma, d, r, cfg.kappa) {
        cert.add_caveat(Caveat::ConfidenceUnverified {
            required_c: confidence_threshold(cfg.m, cfg.gamma, d, r, cfg.kappa),
        });
    }

    Ok(DetAnalysis {
        noise,
        certificate: cert,
        mean: acc.mean().as_slice().to_vec(),
        covariance,
    })
}
