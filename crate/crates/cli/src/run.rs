//! One function per subcommand: typed config in, report out.

use std::path::{Path, PathBuf};

use pacest::baselines::{noise_gap, worst_case_noise, WorstCaseQuery};
use pacest::bounds::{generalization_bound, iid_individual_bound, tv_advantage, PacBound, PriorRate};
use pacest::composition::{compose_shared_input, sum_independent};
use pacest::deterministic::{analyze_deterministic, confidence_threshold, DetAnalysisConfig};
use pacest::ledger::{LedgerParams, LedgerState, Stateless, SubprocessAdaptive};
use pacest::linalg::{matrix_from_rows, spectral_decompose};
use pacest::oracle::{Dataset, GeneratorSpec, MechanismKind, MechanismSpec};
use pacest::randomized::{analyze_randomized, tau_sweep, RandAnalysisConfig};
use pacest::report::{canonical_json, emit_report, read_report, Report};
use pacest::stats::RunningStats;
use pacest::verifier::{calibrate_topup, verify_proposal, ProposalSpec, VerifyConfig};
use pacest::{Caveat, Error, Executor, MiCertificate, NoiseSpec, Result, Role, SeedDerivation};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub struct Outcome {
    pub report: Report,
    /// Certified, but with caveats that qualify the claim.
    pub warnings: bool,
}

impl Outcome {
    fn plain(report: Report) -> Self {
        Outcome { report, warnings: false }
    }

    fn certified(report: Report) -> Self {
        let warnings = report.certificate.as_ref().is_some_and(MiCertificate::has_warnings);
        Outcome { report, warnings }
    }
}

pub fn write(report: &Report, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => emit_report(report, p),
        None => {
            report.validate()?;
            print!("{}", canonical_json(report)?);
            Ok(())
        }
    }
}

fn parse<T: DeserializeOwned>(cfg: Value) -> Result<T> {
    serde_json::from_value(cfg).map_err(|e| Error::input(format!("config: {e}")))
}

fn echo(cfg: &impl Serialize) -> Result<Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn default_gamma() -> f64 {
    0.05
}

fn default_kappa() -> f64 {
    1.0
}

fn default_tau3() -> u64 {
    1
}

fn default_n_mc() -> u64 {
    1000
}

struct Scenarios {
    candidates: Option<u64>,
    membership_p: Option<f64>,
    delta_o: Option<f64>,
}

macro_rules! scenarios {
    ($run:expr) => {
        Scenarios {
            candidates: $run.candidates,
            membership_p: $run.membership_p,
            delta_o: $run.delta_o,
        }
    };
}

impl Scenarios {
    /// One bound per requested scenario; membership at p = ½ when nothing
    /// was requested.
    fn bounds(&self, v: f64) -> Result<Vec<PacBound>> {
        let mut out = Vec::new();
        if let Some(n) = self.candidates {
            out.push(PacBound::new("identification", PriorRate::uniform(n)?, v)?);
        }
        let nothing = self.candidates.is_none() && self.delta_o.is_none();
        if let Some(p) = self.membership_p.or(nothing.then_some(0.5)) {
            out.push(PacBound::new("membership", PriorRate::membership(p)?, v)?);
        }
        if let Some(d) = self.delta_o {
            out.push(PacBound::new("user-prior", PriorRate::new(d)?, v)?);
        }
        Ok(out)
    }
}

/// Comparison of the certified noise against the worst-case baselines.
fn baseline_block(r: f64, d: usize, v: f64, n: Option<u64>, delta2: Option<f64>, noise: &NoiseSpec) -> Result<Value> {
    let wc = worst_case_noise(&WorstCaseQuery { r, d, v, n, delta2 })?;
    let mag = noise.magnitude();
    let mut block = json!({
        "worst_case": wc,
        "pac_noise_magnitude": mag,
        "scale_lower_over_pac": if mag > 0.0 { Some(wc.scale_lower / mag) } else { None },
    });
    if let Some(z) = &wc.zcdp {
        block["zcdp_over_pac"] = json!(if mag > 0.0 { Some(z.magnitude / mag) } else { None });
    }
    Ok(block)
}

fn warn_if_vacuous(c: f64, r: f64) {
    if c > 4.0 * r * r {
        eprintln!("warning: c = {c} exceeds 4r² = {}; the noise is vacuously large", 4.0 * r * r);
    }
}

fn stats_json(s: &RunningStats) -> Value {
    json!({ "mean": s.mean, "std_error": s.std_error(), "max": s.max, "count": s.count })
}

fn pool_caveat(spec: &GeneratorSpec, cert: &mut MiCertificate) {
    if matches!(spec, GeneratorSpec::PoolSampler { .. }) {
        cert.add_caveat(Caveat::PoolInducedDistribution);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetRun {
    master_seed: u64,
    generator: GeneratorSpec,
    mechanism: MechanismSpec,
    m: u64,
    v: f64,
    beta: f64,
    /// Defaults to the confidence threshold for (m, γ, d, r, κ).
    #[serde(default)]
    c: Option<f64>,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_kappa")]
    kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    membership_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_o: Option<f64>,
}

pub fn analyze_det(cfg: Value, exec: &Executor) -> Result<Outcome> {
    let mut run: DetRun = parse(cfg)?;
    let mech = run.mechanism.build()?;
    let gen = run.generator.build()?;
    let (d, r) = (run.mechanism.contract.output_dim, run.mechanism.contract.output_radius);
    let c = *run.c.get_or_insert_with(|| confidence_threshold(run.m, run.gamma, d, r, run.kappa));
    warn_if_vacuous(c, r);
    let acfg = DetAnalysisConfig {
        m: run.m,
        v: run.v,
        beta: run.beta,
        c,
        gamma: run.gamma,
        kappa: run.kappa,
    };
    let mut a = analyze_deterministic(&acfg, &*mech, &*gen, run.master_seed, exec)?;
    pool_caveat(&run.generator, &mut a.certificate);

    let v = a.certificate.v_claimed;
    let mut report = Report::new("analyze-det", echo(&run)?);
    report.pac_bounds = scenarios!(run).bounds(v)?;
    report.baselines = Some(baseline_block(r, d, v, run.n, run.delta2, &a.noise)?);
    let cov: Vec<Vec<f64>> = a.covariance.row_iter().map(|row| row.iter().copied().collect()).collect();
    report.details = json!({ "output_mean": a.mean, "output_covariance": cov });
    report.certificate = Some(a.certificate);
    report.noise = Some(a.noise);
    Ok(Outcome::certified(report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandRun {
    master_seed: u64,
    generator: GeneratorSpec,
    mechanism: MechanismSpec,
    m: u64,
    tau: u64,
    v: f64,
    c: f64,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau_sweep: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    membership_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_o: Option<f64>,
}

pub fn analyze_rand(cfg: Value, exec: &Executor) -> Result<Outcome> {
    let run: RandRun = parse(cfg)?;
    let mech = run.mechanism.build()?;
    let gen = run.generator.build()?;
    let (d, r) = (run.mechanism.contract.output_dim, run.mechanism.contract.output_radius);
    warn_if_vacuous(run.c, r);
    let acfg = RandAnalysisConfig {
        m: run.m,
        tau: run.tau,
        v: run.v,
        c: run.c,
        gamma: run.gamma,
    };
    let mut a = analyze_randomized(&acfg, &*mech, &*gen, run.master_seed, exec)?;
    pool_caveat(&run.generator, &mut a.certificate);
    let sweep = match &run.tau_sweep {
        Some(taus) => Some(tau_sweep(&acfg, taus, &*mech, &*gen, run.master_seed, exec)?),
        None => None,
    };

    let mut report = Report::new("analyze-rand", echo(&run)?);
    report.pac_bounds = scenarios!(run).bounds(run.v)?;
    report.baselines = Some(baseline_block(r, d, run.v, run.n, run.delta2, &a.noise)?);
    report.details = json!({ "psi": stats_json(&a.psi), "tau_sweep": sweep });
    report.certificate = Some(a.certificate);
    report.noise = Some(a.noise);
    Ok(Outcome::certified(report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyRun {
    master_seed: u64,
    mechanism: MechanismSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pool_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pool_file: Option<PathBuf>,
    #[serde(default = "zero_proposal")]
    proposal: ProposalSpec,
    m: u64,
    tau1: u64,
    tau2: u64,
    #[serde(default = "default_tau3")]
    tau3: u64,
    c: f64,
    beta: f64,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_n_mc")]
    n_mc: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    membership_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_o: Option<f64>,
}

fn zero_proposal() -> ProposalSpec {
    ProposalSpec::Zero
}

/// The verification pool, and whether it was sampled from a generator.
fn load_pool(run: &VerifyRun, exec: &Executor) -> Result<(Vec<Dataset>, bool)> {
    match (&run.pool_file, &run.generator, run.pool_size) {
        (Some(path), None, None) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let rows: Vec<Vec<Vec<f64>>> = serde_json::from_str(&text).map_err(|e| Error::InputPool {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let pool = rows
                .iter()
                .map(|r| Dataset::from_rows(r, None))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::InputPool {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            Ok((pool, false))
        }
        (None, Some(spec), Some(size)) => {
            let gen = spec.build()?;
            let seeds = SeedDerivation::new(run.master_seed).child("pool", 0);
            let pool = exec.map_trials(size as u64, |i| gen.generate(seeds.stream(i, Role::Data1)))?;
            Ok((pool, true))
        }
        _ => Err(Error::input("verify needs either pool_file, or generator with pool_size")),
    }
}

/// Total Gaussian noise M + B + αI + cI when the proposal is data-independent.
fn static_noise(spec: &ProposalSpec, d: usize, extra: f64) -> Result<Option<NoiseSpec>> {
    match spec {
        ProposalSpec::Zero => NoiseSpec::isotropic(d, extra).map(Some),
        ProposalSpec::Shared { covariance } => {
            let s = spectral_decompose(&matrix_from_rows(covariance)?)?;
            let variances = s.eigenvalues.iter().map(|l| l.max(0.0) + extra).collect();
            NoiseSpec::anisotropic(&s.basis, variances).map(Some)
        }
        _ => Ok(None),
    }
}

pub fn verify(cfg: Value, exec: &Executor) -> Result<Outcome> {
    let run: VerifyRun = parse(cfg)?;
    let mech = run.mechanism.build()?;
    let (d, r) = (run.mechanism.contract.output_dim, run.mechanism.contract.output_radius);
    warn_if_vacuous(run.c, r);
    let (pool, sampled) = load_pool(&run, exec)?;
    let proposal = run.proposal.build(d)?;
    let vcfg = VerifyConfig {
        m: run.m,
        tau1: run.tau1,
        tau2: run.tau2,
        tau3: run.tau3,
        c: run.c,
        beta: run.beta,
        gamma: run.gamma,
        n_mc: run.n_mc,
    };
    let (mut verification, alpha, calibration) = match run.target_v {
        Some(target) => {
            let range = (0.0, run.alpha_max.unwrap_or(100.0));
            let cal = calibrate_topup(&*proposal, target, &*mech, &pool, &vcfg, range, run.master_seed, exec)?;
            let probes = json!({ "alpha": cal.alpha, "monotone": cal.monotone, "trace": cal.trace });
            (cal.verification, cal.alpha, Some(probes))
        }
        None => (verify_proposal(&vcfg, &*proposal, &*mech, &pool, run.master_seed, exec)?, 0.0, None),
    };
    if sampled {
        verification.certificate.add_caveat(Caveat::PoolInducedDistribution);
    }

    let v = verification.certified_v();
    let mut report = Report::new("verify", echo(&run)?);
    report.pac_bounds = scenarios!(run).bounds(v)?;
    report.noise = static_noise(&run.proposal, d, alpha + run.c)?;
    report.details = json!({
        "pool_size": pool.len(),
        "psi": stats_json(&verification.psi),
        "std_error": verification.std_error,
        "max_term": verification.max_term,
        "calibration": calibration,
    });
    report.certificate = Some(verification.certificate);
    Ok(Outcome::certified(report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LedgerInitRun {
    ledger: PathBuf,
    master_seed: u64,
    schedule: Vec<f64>,
    m: u64,
    tau: u64,
    c: f64,
    #[serde(default = "default_gamma")]
    gamma: f64,
}

pub fn ledger_init(cfg: Value, _: &Executor) -> Result<Outcome> {
    let run: LedgerInitRun = parse(cfg)?;
    let params = LedgerParams {
        m: run.m,
        tau: run.tau,
        c: run.c,
        gamma: run.gamma,
    };
    let state = LedgerState::open(run.schedule.clone(), params, run.master_seed, Some(&run.ledger))?;
    let mut report = Report::new("ledger-init", echo(&run)?);
    report.details = json!({ "rounds": state.total_rounds(), "completed": state.round() });
    Ok(Outcome::plain(report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LedgerStepRun {
    ledger: PathBuf,
    generator: GeneratorSpec,
    mechanism: MechanismSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    membership_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_o: Option<f64>,
}

pub fn ledger_step(cfg: Value, exec: &Executor) -> Result<Outcome> {
    let run: LedgerStepRun = parse(cfg)?;
    let mut state = LedgerState::load(&run.ledger)?;
    let gen = run.generator.build()?;
    let descriptor = serde_json::to_value(&run.mechanism)?;
    let mut step = match &run.mechanism.kind {
        MechanismKind::Subprocess { command } => {
            let mech = SubprocessAdaptive::new(command.clone(), run.mechanism.contract.clone())?;
            state.step(&mech, descriptor, &*gen, exec)?
        }
        _ => state.step(&Stateless(run.mechanism.build()?), descriptor, &*gen, exec)?,
    };
    pool_caveat(&run.generator, &mut step.certificate);

    let v = step.certificate.v_claimed;
    let mut report = Report::new("ledger-step", echo(&run)?);
    report.pac_bounds = scenarios!(run).bounds(v)?;
    report.details = json!({
        "round": state.round(),
        "rounds": state.total_rounds(),
        "psi": stats_json(&step.psi),
    });
    report.certificate = Some(step.certificate);
    report.noise = Some(step.noise);
    Ok(Outcome::certified(report))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ComposeMode {
    Independent,
    Shared,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposeRun {
    reports: Vec<PathBuf>,
    mode: ComposeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    membership_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_o: Option<f64>,
}

pub fn compose(cfg: Value, _: &Executor) -> Result<Outcome> {
    let run: ComposeRun = parse(cfg)?;
    let certs = run
        .reports
        .iter()
        .map(|p| {
            read_report(p)?
                .certificate
                .ok_or_else(|| Error::Composition(format!("{} carries no certificate", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let cert = match run.mode {
        ComposeMode::Independent => sum_independent(&certs)?,
        ComposeMode::Shared => compose_shared_input(&certs)?,
    };
    let mut report = Report::new("compose", echo(&run)?);
    report.pac_bounds = scenarios!(run).bounds(cert.v_claimed)?;
    report.details = json!({ "component_budgets": certs.iter().map(|c| c.v_claimed).collect::<Vec<_>>() });
    report.certificate = Some(cert);
    Ok(Outcome::certified(report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundRun {
    mi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iid_n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior_success: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    membership_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta_o: Option<f64>,
}

pub fn bound(cfg: Value, _: &Executor) -> Result<Outcome> {
    let run: BoundRun = parse(cfg)?;
    let iid = match (run.iid_n, run.prior_success) {
        (Some(n), Some(p)) => Some(iid_individual_bound(n, p, run.mi)?),
        (None, None) => None,
        _ => return Err(Error::input("the i.i.d. bound needs both iid_n and prior_success")),
    };
    let mut report = Report::new("bound", echo(&run)?);
    report.pac_bounds = scenarios!(run).bounds(run.mi)?;
    report.details = json!({
        "tv_advantage": tv_advantage(run.mi),
        "generalization_bound": generalization_bound(run.mi),
        "iid": iid,
    });
    Ok(Outcome::plain(report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineRun {
    r: f64,
    d: usize,
    v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eigenvalues: Option<Vec<f64>>,
}

pub fn baseline(cfg: Value, _: &Executor) -> Result<Outcome> {
    let run: BaselineRun = parse(cfg)?;
    let wc = worst_case_noise(&WorstCaseQuery {
        r: run.r,
        d: run.d,
        v: run.v,
        n: run.n,
        delta2: run.delta2,
    })?;
    let gap = match (&run.eigenvalues, run.n) {
        (Some(l), Some(n)) => Some(noise_gap(l, n, run.v)?),
        (Some(_), None) => return Err(Error::input("the noise gap needs n")),
        _ => None,
    };
    let mut report = Report::new("baseline", echo(&run)?);
    report.baselines = Some(json!({ "worst_case": wc, "gaussian_mean_trace": gap }));
    Ok(Outcome::plain(report))
}
