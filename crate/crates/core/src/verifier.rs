//! Verification of a Gaussian perturbation proposal over a finite pool of
//! datasets, and the isotropic top-up search built on it.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::certificate::{Caveat, Method, MiCertificate};
use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, matrix_from_rows};
use crate::mixture::{mixture_kl_estimate, Gaussian, GaussianMixture};
use crate::oracle::{evaluate, Dataset, Mechanism, SubprocessOracle};
use crate::parallel::Executor;
use crate::randomized::{ceil_count, check_gamma, check_positive, draw_seeds, seed_space_caveat};
use crate::seed::{Role, SeedDerivation};
use crate::stats::RunningStats;

/// Standard errors folded into the certified value.
pub const SE_MULTIPLIER: f64 = 3.0;

/// Gaussian law Q(X, θ) added to the mechanism output.
pub trait PerturbationProposal: Send + Sync {
    fn dim(&self) -> usize;

    /// Covariance for pool element `index` under evaluation seed `theta`.
    fn covariance(&self, index: usize, data: &Dataset, theta: u64) -> Result<DMatrix<f64>>;

    /// Mean offset; zero unless overridden.
    fn offset(&self, _index: usize, _data: &Dataset, _theta: u64) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

impl<P: PerturbationProposal + ?Sized> PerturbationProposal for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn covariance(&self, index: usize, data: &Dataset, theta: u64) -> Result<DMatrix<f64>> {
        (**self).covariance(index, data, theta)
    }
    fn offset(&self, index: usize, data: &Dataset, theta: u64) -> Result<Option<Vec<f64>>> {
        (**self).offset(index, data, theta)
    }
}

fn check_psd(cov: &DMatrix<f64>, dim: usize) -> Result<()> {
    if cov.nrows() != dim || cov.ncols() != dim {
        return Err(Error::contract(format!("proposal covariance is {}x{}, expected {dim}x{dim}", cov.nrows(), cov.ncols())));
    }
    check_symmetric(cov)?;
    let scale = cov.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let min = ((cov + cov.transpose()) * 0.5).symmetric_eigenvalues().min();
    if min < -1e-9 * scale {
        return Err(Error::contract(format!("proposal covariance is not PSD (eigenvalue {min})")));
    }
    Ok(())
}

/// No perturbation beyond the mandatory floor.
pub struct ZeroProposal {
    pub dim: usize,
}

impl PerturbationProposal for ZeroProposal {
    fn dim(&self) -> usize {
        self.dim
    }
    fn covariance(&self, _: usize, _: &Dataset, _: u64) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.dim, self.dim))
    }
}

/// One covariance for every dataset and seed.
pub struct SharedProposal {
    cov: DMatrix<f64>,
}

impl SharedProposal {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        check_psd(&cov, cov.nrows())?;
        Ok(Self { cov })
    }
}

impl PerturbationProposal for SharedProposal {
    fn dim(&self) -> usize {
        self.cov.nrows()
    }
    fn covariance(&self, _: usize, _: &Dataset, _: u64) -> Result<DMatrix<f64>> {
        Ok(self.cov.clone())
    }
}

/// Per-pool-element covariances, loaded from
/// `{"covariances": {"<index>": [[...], ...], ...}}`.
pub struct TableProposal {
    dim: usize,
    table: BTreeMap<usize, DMatrix<f64>>,
}

#[derive(Deserialize)]
struct TableFile {
    covariances: BTreeMap<String, Vec<Vec<f64>>>,
}

impl TableProposal {
    pub fn new(dim: usize, table: BTreeMap<usize, DMatrix<f64>>) -> Result<Self> {
        table.values().try_for_each(|c| check_psd(c, dim))?;
        Ok(Self { dim, table })
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TableFile = serde_json::from_str(&text)?;
        let mut table = BTreeMap::new();
        for (key, rows) in file.covariances {
            let index: usize = key
                .parse()
                .map_err(|_| Error::input(format!("proposal table key {key:?} is not a pool index")))?;
            table.insert(index, matrix_from_rows(&rows)?);
        }
        Self::new(dim, table)
    }
}

impl PerturbationProposal for TableProposal {
    fn dim(&self) -> usize {
        self.dim
    }
    fn covariance(&self, index: usize, _: &Dataset, _: u64) -> Result<DMatrix<f64>> {
        self.table
            .get(&index)
            .cloned()
            .ok_or_else(|| Error::contract(format!("proposal table has no entry for pool index {index}")))
    }
}

pub struct SubprocessProposal {
    dim: usize,
    oracle: SubprocessOracle,
}

impl SubprocessProposal {
    pub fn new(command: Vec<String>, dim: usize) -> Result<Self> {
        Ok(Self {
            dim,
            oracle: SubprocessOracle::new(command)?,
        })
    }
}

impl PerturbationProposal for SubprocessProposal {
    fn dim(&self) -> usize {
        self.dim
    }
    fn covariance(&self, index: usize, _: &Dataset, theta: u64) -> Result<DMatrix<f64>> {
        let cov = matrix_from_rows(&self.oracle.proposal(index, theta)?)?;
        check_psd(&cov, self.dim)?;
        Ok(cov)
    }
}

/// Adds `alpha · I` on top of another proposal.
pub struct TopUp<'a> {
    pub inner: &'a dyn PerturbationProposal,
    pub alpha: f64,
}

impl PerturbationProposal for TopUp<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn covariance(&self, index: usize, data: &Dataset, theta: u64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        Ok(self.inner.covariance(index, data, theta)? + DMatrix::identity(d, d) * self.alpha)
    }
    fn offset(&self, index: usize, data: &Dataset, theta: u64) -> Result<Option<Vec<f64>>> {
        self.inner.offset(index, data, theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProposalSpec {
    Zero,
    Shared { covariance: Vec<Vec<f64>> },
    Table { path: PathBuf },
    Subprocess { command: Vec<String> },
}

impl ProposalSpec {
    pub fn build(&self, dim: usize) -> Result<Box<dyn PerturbationProposal>> {
        Ok(match self {
            ProposalSpec::Zero => Box::new(ZeroProposal { dim }),
            ProposalSpec::Shared { covariance } => {
                let p = SharedProposal::new(matrix_from_rows(covariance)?)?;
                if p.dim() != dim {
                    return Err(Error::input("shared proposal dimension differs from the mechanism output"));
                }
                Box::new(p)
            }
            ProposalSpec::Table { path } => Box::new(TableProposal::load(path, dim)?),
            ProposalSpec::Subprocess { command } => Box::new(SubprocessProposal::new(command.clone(), dim)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub m: u64,
    pub tau1: u64,
    pub tau2: u64,
    pub tau3: u64,
    /// Variance of the mandatory isotropic floor B_c.
    pub c: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n_mc: u64,
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.m, self.tau1, self.tau2, self.tau3, self.n_mc].contains(&0) {
            return Err(Error::input("m, tau1, tau2, tau3 and n_mc must be at least 1"));
        }
        check_positive(&[("c", self.c), ("beta", self.beta)])?;
        check_gamma(self.gamma)
    }
}

/// (2 ln(1/γ)/β²) · ((2r²/c)²/τ₁ + (β/3)(2r²/c)), rounded up.
pub fn required_m_verify(r: f64, c: f64, beta: f64, gamma: f64, tau1: u64) -> u64 {
    let cap = 2.0 * r * r / c;
    ceil_count(2.0 * (1.0 / gamma).ln() / (beta * beta) * (cap * cap / tau1 as f64 + beta / 3.0 * cap))
}

#[derive(Debug, Clone)]
pub struct Verification {
    pub psi: RunningStats,
    /// Standard error of ψ̄.
    pub std_error: f64,
    /// Largest single KL term observed.
    pub max_term: f64,
    pub certificate: MiCertificate,
}

impl Verification {
    pub fn psi_bar(&self) -> f64 {
        self.psi.mean
    }

    /// ψ̄ + 3·SE + β.
    pub fn certified_v(&self) -> f64 {
        self.certificate.v_claimed
    }
}

#[derive(Clone, Copy, Default)]
struct TrialAcc {
    psi: RunningStats,
    mc_var: f64,
    max_term: f64,
}

impl TrialAcc {
    fn merge(self, o: TrialAcc) -> TrialAcc {
        TrialAcc {
            psi: self.psi.merge(o.psi),
            mc_var: self.mc_var + o.mc_var,
            max_term: self.max_term.max(o.max_term),
        }
    }
}

/// Estimates ψ̄ and certifies MI(X; M(X,θ) + B(X,θ) + B_c) ≤ ψ̄ + 3·SE + β,
/// X uniform over `pool`.
pub fn verify_proposal(
    cfg: &VerifyConfig,
    proposal: &dyn PerturbationProposal,
    mech: &dyn Mechanism,
    pool: &[Dataset],
    master_seed: u64,
    exec: &Executor,
) -> Result<Verification> {
    cfg.validate()?;
    let contract = mech.contract();
    contract.validate()?;
    let d = contract.output_dim;
    let r = contract.output_radius;
    let n = pool.len() as u64;
    if proposal.dim() != d {
        return Err(Error::input(format!("proposal dimension {} differs from output dimension {d}", proposal.dim())));
    }
    if n == 0 {
        return Err(Error::input("verification pool is empty"));
    }
    if cfg.tau2 > n {
        return Err(Error::input(format!("tau2 = {} exceeds the pool size {n}", cfg.tau2)));
    }
    let seeds = SeedDerivation::new(master_seed);
    let floor = DMatrix::identity(d, d) * cfg.c;

    let acc = exec.fold_trials(
        cfg.m,
        TrialAcc::default,
        |acc, k| {
            let mut rng1 = seeds.stream(k, Role::Data1).rng();
            let sel1: Vec<usize> = (0..cfg.tau1).map(|_| rng1.random_range(0..pool.len())).collect();
            let mut rng2 = seeds.stream(k, Role::Data2).rng();
            let sel2 = rand::seq::index::sample(&mut rng2, pool.len(), cfg.tau2 as usize).into_vec();
            let thetas = draw_seeds(contract.seed_space, cfg.tau3, seeds.stream(k, Role::SeedSelect))?;

            let mut components: HashMap<(usize, usize), Gaussian> = HashMap::new();
            let mut component = |i: usize, j: usize| -> Result<Gaussian> {
                if let Some(g) = components.get(&(i, j)) {
                    return Ok(g.clone());
                }
                let theta = thetas[j];
                let mut mean = evaluate(mech, &pool[i], theta)?.into_vec();
                if let Some(off) = proposal.offset(i, &pool[i], theta)? {
                    if off.len() != d {
                        return Err(Error::contract("proposal offset has the wrong dimension"));
                    }
                    mean.iter_mut().zip(&off).for_each(|(m, o)| *m += o);
                }
                let cov = proposal.covariance(i, &pool[i], theta)?;
                check_psd(&cov, d)?;
                let g = Gaussian::new(mean, cov + &floor);
                components.insert((i, j), g.clone());
                Ok(g)
            };

            let w3 = 1.0 / cfg.tau3 as f64;
            let wq = 1.0 / (cfg.tau2 * cfg.tau3) as f64;
            let mut q_parts = Vec::with_capacity((cfg.tau2 * cfg.tau3) as usize);
            for &l in &sel2 {
                for j in 0..thetas.len() {
                    q_parts.push((wq, component(l, j)?));
                }
            }
            let q = GaussianMixture::new(q_parts)?;
            let mc = SeedDerivation::new(seeds.stream(k, Role::McKl).0);
            let (mut sum, mut var) = (0.0, 0.0);
            for (t, &i) in sel1.iter().enumerate() {
                let parts = (0..thetas.len())
                    .map(|j| Ok((w3, component(i, j)?)))
                    .collect::<Result<Vec<_>>>()?;
                let p = GaussianMixture::new(parts)?;
                let kl = mixture_kl_estimate(&p, &q, cfg.n_mc, mc.stream(t as u64, Role::McKl))?;
                sum += kl.value;
                var += kl.std_error * kl.std_error;
                acc.max_term = acc.max_term.max(kl.value);
            }
            let tau1 = cfg.tau1 as f64;
            acc.psi.push(sum / tau1);
            acc.mc_var += var / (tau1 * tau1);
            Ok(())
        },
        TrialAcc::merge,
    )?;

    // across-trial spread already contains the MC noise; with one trial
    // only the MC error is available
    let std_error = if acc.psi.count >= 2 {
        acc.psi.std_error()
    } else {
        acc.mc_var.sqrt()
    };
    let v_claimed = (acc.psi.mean + SE_MULTIPLIER * std_error).max(0.0) + cfg.beta;
    let mut cert = MiCertificate::new(Method::Verified, v_claimed, cfg.gamma, cfg.m, cfg.c);
    let required = required_m_verify(r, cfg.c, cfg.beta, cfg.gamma, cfg.tau1);
    cert.diagnostics.psi_bar = Some(acc.psi.mean);
    cert.diagnostics.psi_std_error = Some(std_error);
    cert.diagnostics.psi_max = Some(acc.max_term);
    cert.diagnostics.required_m = Some(required);
    if cfg.m < required {
        cert.add_caveat(Caveat::InsufficientTrials {
            required,
            used: cfg.m,
        });
    }
    if !n.is_multiple_of(cfg.tau2) {
        cert.add_caveat(Caveat::NotDivisible {
            what: "pool".into(),
            size: n,
            tau: cfg.tau2,
        });
    }
    if let Some(c) = seed_space_caveat(contract.seed_space, cfg.tau3) {
        cert.add_caveat(c);
    }
    Ok(Verification {
        psi: acc.psi,
        std_error,
        max_term: acc.max_term,
        certificate: cert,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub alpha: f64,
    pub psi_bar: f64,
    pub std_error: f64,
    pub certified_v: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub alpha: f64,
    /// Probes in evaluation order.
    pub trace: Vec<Probe>,
    /// ψ̄ non-increasing in α across the probes, up to 3 standard errors.
    pub monotone: bool,
    pub verification: Verification,
}

/// Smallest isotropic top-up α in `alpha_range` (to 1% relative) at which
/// the proposal verifies at `target_v`. Every probe reuses `master_seed`, so
/// probes differ only in α.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_topup(
    proposal: &dyn PerturbationProposal,
    target_v: f64,
    mech: &dyn Mechanism,
    pool: &[Dataset],
    cfg: &VerifyConfig,
    alpha_range: (f64, f64),
    master_seed: u64,
    exec: &Executor,
) -> Result<Calibration> {
    let (lo, hi) = alpha_range;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::input(format!("alpha range [{lo}, {hi}] is invalid")));
    }
    let mut trace = Vec::new();
    let mut probe = |alpha: f64| -> Result<Verification> {
        let v = verify_proposal(cfg, &TopUp { inner: proposal, alpha }, mech, pool, master_seed, exec)?;
        trace.push(Probe {
            alpha,
            psi_bar: v.psi_bar(),
            std_error: v.std_error,
            certified_v: v.certified_v(),
        });
        Ok(v)
    };

    let at_lo = probe(lo)?;
    let (alpha, verification) = if at_lo.certified_v() <= target_v {
        (lo, at_lo)
    } else {
        let at_hi = probe(hi)?;
        if at_hi.certified_v() > target_v {
            return Err(Error::Calibration(format!(
                "alpha = {hi} certifies only {} > target {target_v}; widen the range",
                at_hi.certified_v()
            )));
        }
        let (mut lo, mut hi, mut best) = (lo, hi, at_hi);
        while hi - lo > 1e-2 * hi {
            let mid = 0.5 * (lo + hi);
            let v = probe(mid)?;
            if v.certified_v() <= target_v {
                hi = mid;
                best = v;
            } else {
                lo = mid;
            }
        }
        (hi, best)
    };

    let mut sorted = trace.clone();
    sorted.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    let monotone = sorted.windows(2).all(|w| {
        let slack = SE_MULTIPLIER * (w[0].std_error + w[1].std_error);
        w[1].psi_bar <= w[0].psi_bar + slack
    });
    Ok(Calibration {
        alpha,
        trace,
        monotone,
        verification,
    })
}
