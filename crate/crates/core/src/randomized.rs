//! Noise calibration for randomized mechanisms from the minimal-permutation
//! distance between outputs on paired inputs under shared seeds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::certificate::{Caveat, Method, MiCertificate};
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::oracle::{evaluate, DataGenerator, Mechanism, SeedSpace};
use crate::parallel::Executor;
use crate::seed::{Role, SeedDerivation, StreamSeed};
use crate::stats::RunningStats;

/// Floating-point slack on the per-trial bound ψ ≤ 4r².
const DIAMETER_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandAnalysisConfig {
    pub m: u64,
    pub tau: u64,
    pub v: f64,
    pub c: f64,
    pub gamma: f64,
}

impl RandAnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.tau == 0 {
            return Err(Error::input("m and tau must be at least 1"));
        }
        check_positive(&[("v", self.v), ("c", self.c)])?;
        check_gamma(self.gamma)
    }
}

pub(crate) fn check_positive(values: &[(&str, f64)]) -> Result<()> {
    for &(name, x) in values {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::input(format!("{name} = {x} must be positive")));
        }
    }
    Ok(())
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::input(format!("gamma = {gamma} must lie in (0, 1)")))
    }
}

/// Rounds up, treating values within 1e-9 relative of an integer as that
/// integer so exact formula arithmetic is not pushed up by rounding dust.
pub(crate) fn ceil_count(x: f64) -> u64 {
    if x <= 0.0 {
        return 0;
    }
    let near = x.round();
    if (x - near).abs() <= 1e-9 * x.max(1.0) {
        near as u64
    } else {
        x.ceil() as u64
    }
}

/// ⌈8 r⁴ ln(1/γ) / c²⌉.
pub fn required_m_randomized(r: f64, c: f64, gamma: f64) -> u64 {
    ceil_count(8.0 * r.powi(4) * (1.0 / gamma).ln() / (c * c))
}

/// `tau` evaluation seeds: a uniformly random τ-subset of a finite seed
/// space, or τ i.i.d. 64-bit seeds for an unbounded one.
pub fn draw_seeds(space: SeedSpace, tau: u64, seed: StreamSeed) -> Result<Vec<u64>> {
    let mut rng = seed.rng();
    match space {
        SeedSpace::Finite(size) => {
            if tau > size {
                return Err(Error::input(format!("cannot draw {tau} distinct seeds from a space of {size}")));
            }
            let size = usize::try_from(size).map_err(|_| Error::input("seed space too large"))?;
            Ok(rand::seq::index::sample(&mut rng, size, tau as usize)
                .into_iter()
                .map(|i| i as u64)
                .collect())
        }
        SeedSpace::Unbounded => Ok((0..tau).map(|_| rng.random()).collect()),
    }
}

pub(crate) fn seed_space_caveat(space: SeedSpace, tau: u64) -> Option<Caveat> {
    match space {
        SeedSpace::Unbounded => Some(Caveat::IidSeedApproximation),
        SeedSpace::Finite(size) if size % tau != 0 => Some(Caveat::NotDivisible {
            what: "seed space".into(),
            size,
            tau,
        }),
        _ => None,
    }
}

/// min over permutations π of Σ_j ‖a(j) − b(π(j))‖² / τ, and the
/// minimizing π.
pub fn min_permutation_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let tau = a.len();
    if tau == 0 || b.len() != tau {
        return Err(Error::contract(format!("block counts differ or are zero: {} vs {}", tau, b.len())));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|blk| blk.len() != d) {
        return Err(Error::contract("blocks have unequal dimension"));
    }
    let cost: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| squared_distance(x, y)).collect()).collect();
    let perm = assignment::solve(&cost)?;
    Ok((permuted_distance(&cost, &perm), perm))
}

/// Σ_j cost[j][π(j)] / τ, summed in block order.
pub fn permuted_distance(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(j, &p)| cost[j][p]).sum::<f64>() / perm.len() as f64
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[derive(Debug, Clone)]
pub struct RandAnalysis {
    pub noise: NoiseSpec,
    pub certificate: MiCertificate,
    pub psi: RunningStats,
}

/// Mean minimal-permutation distance over `m` trials.
pub fn estimate_psi(
    cfg: &RandAnalysisConfig,
    mech: &dyn Mechanism,
    generator: &dyn DataGenerator,
    master_seed: u64,
    exec: &Executor,
) -> Result<RunningStats> {
    cfg.validate()?;
    let contract = mech.contract();
    contract.validate()?;
    let r = contract.output_radius;
    let seeds = SeedDerivation::new(master_seed);
    exec.fold_trials(
        cfg.m,
        RunningStats::default,
        |acc, k| {
            let x1 = generator.generate(seeds.stream(k, Role::Data1))?;
            let x2 = generator.generate(seeds.stream(k, Role::Data2))?;
            let thetas = draw_seeds(contract.seed_space, cfg.tau, seeds.stream(k, Role::SeedSelect))?;
            let mut a = Vec::with_capacity(thetas.len());
            let mut b = Vec::with_capacity(thetas.len());
            for &theta in &thetas {
                a.push(evaluate(mech, &x1, theta)?.into_vec());
                b.push(evaluate(mech, &x2, theta)?.into_vec());
            }
            let (psi, _) = min_permutation_distance(&a, &b)?;
            if psi > 4.0 * r * r * (1.0 + DIAMETER_SLACK) {
                return Err(Error::contract(format!("permutation distance {psi} exceeds 4r^2")));
            }
            acc.push(psi);
            Ok(())
        },
        RunningStats::merge,
    )
}

/// Isotropic noise σ² = (ψ̄ + c)/(2v) certifying MI ≤ v.
pub fn analyze_randomized(
    cfg: &RandAnalysisConfig,
    mech: &dyn Mechanism,
    generator: &dyn DataGenerator,
    master_seed: u64,
    exec: &Executor,
) -> Result<RandAnalysis> {
    let psi = estimate_psi(cfg, mech, generator, master_seed, exec)?;
    let contract = mech.contract();
    let r = contract.output_radius;
    let noise = NoiseSpec::isotropic(contract.output_dim, (psi.mean + cfg.c) / (2.0 * cfg.v))?;

    let mut cert = MiCertificate::new(Method::RandomizedDist, cfg.v, cfg.gamma, cfg.m, cfg.c);
    let required = required_m_randomized(r, cfg.c, cfg.gamma);
    fill_psi_diagnostics(&mut cert, &psi, &noise, required, cfg.tau);
    if let Some(c) = seed_space_caveat(contract.seed_space, cfg.tau) {
        cert.add_caveat(c);
    }
    if cfg.m < required {
        cert.add_caveat(Caveat::InsufficientTrials {
            required,
            used: cfg.m,
        });
    }
    if cfg.c > 4.0 * r * r {
        cert.add_caveat(Caveat::SafetyParameterExceedsDiameter {
            c: cfg.c,
            bound: 4.0 * r * r,
        });
    }
    Ok(RandAnalysis {
        noise,
        certificate: cert,
        psi,
    })
}

pub(crate) fn fill_psi_diagnostics(
    cert: &mut MiCertificate,
    psi: &RunningStats,
    noise: &NoiseSpec,
    required: u64,
    tau: u64,
) {
    let d = &mut cert.diagnostics;
    d.psi_bar = Some(psi.mean);
    d.psi_std_error = Some(psi.std_error());
    d.psi_max = Some(psi.max);
    d.noise_trace = Some(noise.trace());
    d.noise_magnitude = Some(noise.magnitude());
    d.required_m = Some(required);
    d.tau = Some(tau);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    pub tau: u64,
    pub psi_bar: f64,
    pub psi_std_error: f64,
}

/// ψ̄ as a function of τ under one master seed.
pub fn tau_sweep(
    cfg: &RandAnalysisConfig,
    taus: &[u64],
    mech: &dyn Mechanism,
    generator: &dyn DataGenerator,
    master_seed: u64,
    exec: &Executor,
) -> Result<Vec<TauPoint>> {
    taus.iter()
        .map(|&tau| {
            let cfg = RandAnalysisConfig { tau, ..cfg.clone() };
            let psi = estimate_psi(&cfg, mech, generator, master_seed, exec)?;
            Ok(TauPoint {
                tau,
                psi_bar: psi.mean,
                psi_std_error: psi.std_error(),
            })
        })
        .collect()
}
