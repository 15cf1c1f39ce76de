//! Online noise determination for adaptively composed randomized
//! mechanisms, with a checksummed on-disk journal.
//!
//! Journal (`<path>`): JSON lines. Line 1 is the header, each further line
//! one completed round. Every line carries `checksum`, the SHA-256 (hex) of
//! the previous line's checksum followed by the line's own canonical JSON
//! without the checksum field. Per-trial state (dataset pairs, joint seeds,
//! recorded outputs) lives in the sidecar `<path>.trials.json`, whose
//! SHA-256 is stored in the latest round line.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::certificate::{Caveat, Method, MiCertificate};
use crate::composition::{isotropic_variance, required_m_ledger};
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::oracle::{DataGenerator, Dataset, Mechanism, MechanismContract, OutputSample, SeedSpace, SubprocessOracle};
use crate::parallel::Executor;
use crate::randomized::{check_gamma, check_positive, draw_seeds, seed_space_caveat, squared_distance};
use crate::seed::{hash_words, Role, SeedDerivation};
use crate::stats::RunningStats;

pub const CHECKSUM_ALGO: &str = "sha256-chain";

/// A mechanism M_t(X, θ̄_t, y_1..y_{t−1}) that may depend on the whole
/// joint seed and on the earlier mechanisms' outputs for the same X and
/// joint seed.
pub trait AdaptiveMechanism: Send + Sync {
    fn contract(&self) -> &MechanismContract;

    fn evaluate_adaptive(&self, data: &Dataset, joint_seed: &[u64], history: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// Uses an ordinary mechanism as round t, seeded by θ_t alone.
pub struct Stateless<M>(pub M);

impl<M: Mechanism> AdaptiveMechanism for Stateless<M> {
    fn contract(&self) -> &MechanismContract {
        self.0.contract()
    }
    fn evaluate_adaptive(&self, data: &Dataset, joint_seed: &[u64], _: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.0.evaluate_raw(data, *joint_seed.last().expect("joint seed is never empty"))
    }
}

/// Subprocess mechanism receiving `joint_seed` and `history` fields in the
/// evaluate request; `seed` is the newest component θ_t.
pub struct SubprocessAdaptive {
    oracle: SubprocessOracle,
    contract: MechanismContract,
}

impl SubprocessAdaptive {
    pub fn new(command: Vec<String>, contract: MechanismContract) -> Result<Self> {
        contract.validate()?;
        Ok(Self {
            oracle: SubprocessOracle::new(command)?,
            contract,
        })
    }
}

impl AdaptiveMechanism for SubprocessAdaptive {
    fn contract(&self) -> &MechanismContract {
        &self.contract
    }
    fn evaluate_adaptive(&self, data: &Dataset, joint_seed: &[u64], history: &[Vec<f64>]) -> Result<Vec<f64>> {
        let seed = *joint_seed.last().expect("joint seed is never empty");
        self.oracle.evaluate(data, seed, Some((joint_seed, history)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerParams {
    pub m: u64,
    pub tau: u64,
    pub c: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub mechanism: Value,
    pub psi_bar: f64,
    pub sigma2: f64,
    pub noise: NoiseSpec,
    pub certificate: MiCertificate,
}

/// Persistent per-trial state: the dataset pair, the τ joint seeds, and the
/// recorded outputs `y[l][t]` on each dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub x1: Dataset,
    pub x2: Dataset,
    pub joint_seeds: Vec<Vec<u64>>,
    pub y1: Vec<Vec<Vec<f64>>>,
    pub y2: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerState {
    pub schedule: Vec<f64>,
    pub params: LedgerParams,
    pub master_seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub trials: Vec<TrialState>,
    path: Option<PathBuf>,
    last_checksum: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "type")]
    kind: String,
    schedule: Vec<f64>,
    params: LedgerParams,
    master_seed: u64,
    checksum_algo: String,
}

#[derive(Serialize, Deserialize)]
struct RoundLine {
    #[serde(rename = "type")]
    kind: String,
    #[serde(flatten)]
    record: RoundRecord,
    trials_digest: String,
}

fn chain(prev: &str, body: &Value) -> Result<String> {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(serde_json::to_string(body)?.as_bytes());
    Ok(hex::encode(h.finalize()))
}

fn seal(prev: &str, body: impl Serialize) -> Result<(String, String)> {
    let mut value = serde_json::to_value(body)?;
    let sum = chain(prev, &value)?;
    value
        .as_object_mut()
        .expect("journal lines are objects")
        .insert("checksum".into(), Value::String(sum.clone()));
    Ok((serde_json::to_string(&value)?, sum))
}

fn unseal(prev: &str, line: &str, lineno: usize) -> Result<(Value, String)> {
    let mut value: Value =
        serde_json::from_str(line).map_err(|e| Error::Integrity(format!("line {lineno} is not valid JSON: {e}")))?;
    let sum = value
        .as_object_mut()
        .and_then(|o| o.remove("checksum"))
        .and_then(|v| v.as_str().map(str::to_owned))
        .ok_or_else(|| Error::Integrity(format!("line {lineno} has no checksum")))?;
    if chain(prev, &value)? != sum {
        return Err(Error::Integrity(format!("checksum mismatch on line {lineno}")));
    }
    Ok((value, sum))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".trials.json");
    PathBuf::from(s)
}

fn lock_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".lock");
    PathBuf::from(s)
}

/// Exclusive writer lock, released on drop.
struct WriterLock(PathBuf);

impl WriterLock {
    fn acquire(path: &Path) -> Result<Self> {
        let lock = lock_path(path);
        OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::input(format!("ledger {} is locked by another writer ({})", path.display(), lock.display()))
            } else {
                Error::io(&lock, e)
            }
        })?;
        Ok(Self(lock))
    }
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub noise: NoiseSpec,
    pub certificate: MiCertificate,
    pub psi: RunningStats,
}

impl LedgerState {
    /// Creates a ledger; with a path, writes the journal header (failing if
    /// the journal already exists).
    pub fn open(schedule: Vec<f64>, params: LedgerParams, master_seed: u64, path: Option<&Path>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::input("budget schedule is empty"));
        }
        let mut prev = 0.0;
        for &v in &schedule {
            if !(v > prev) || !v.is_finite() {
                return Err(Error::input(format!("budget schedule must be strictly increasing from 0: {schedule:?}")));
            }
            prev = v;
        }
        if params.m == 0 || params.tau == 0 {
            return Err(Error::input("m and tau must be at least 1"));
        }
        check_positive(&[("c", params.c)])?;
        check_gamma(params.gamma)?;

        let header = Header {
            kind: "header".into(),
            schedule: schedule.clone(),
            params: params.clone(),
            master_seed,
            checksum_algo: CHECKSUM_ALGO.into(),
        };
        let (line, sum) = seal("", &header)?;
        if let Some(p) = path {
            let mut f = OpenOptions::new().write(true).create_new(true).open(p).map_err(|e| Error::io(p, e))?;
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        Ok(Self {
            schedule,
            params,
            master_seed,
            rounds: Vec::new(),
            trials: Vec::new(),
            path: path.map(Path::to_path_buf),
            last_checksum: sum,
        })
    }

    /// Reads and integrity-checks a journal and its sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::Integrity("journal is empty".into()))?;
        let (value, mut prev) = unseal("", first, 1)?;
        let header: Header =
            serde_json::from_value(value).map_err(|e| Error::Integrity(format!("malformed header: {e}")))?;
        if header.kind != "header" || header.checksum_algo != CHECKSUM_ALGO {
            return Err(Error::Integrity("unrecognized journal header".into()));
        }
        let mut rounds = Vec::new();
        let mut digest = None;
        for (i, line) in lines {
            let (value, sum) = unseal(&prev, line, i + 1)?;
            let round: RoundLine = serde_json::from_value(value)
                .map_err(|e| Error::Integrity(format!("malformed round on line {}: {e}", i + 1)))?;
            if round.kind != "round" || round.record.t != rounds.len() + 1 {
                return Err(Error::Integrity(format!("unexpected round record on line {}", i + 1)));
            }
            digest = Some(round.trials_digest);
            rounds.push(round.record);
            prev = sum;
        }
        if rounds.len() > header.schedule.len() {
            return Err(Error::Integrity("journal has more rounds than the schedule".into()));
        }
        let trials = match digest {
            None => Vec::new(),
            Some(expect) => {
                let side = sidecar_path(path);
                let bytes = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
                if hex::encode(Sha256::digest(&bytes)) != expect {
                    return Err(Error::Integrity(format!("trial cache {} does not match the journal", side.display())));
                }
                serde_json::from_slice(&bytes).map_err(|e| Error::Integrity(format!("malformed trial cache: {e}")))?
            }
        };
        Ok(Self {
            schedule: header.schedule,
            params: header.params,
            master_seed: header.master_seed,
            rounds,
            trials,
            path: Some(path.to_path_buf()),
            last_checksum: prev,
        })
    }

    pub fn round(&self) -> usize {
        self.rounds.len()
    }

    pub fn total_rounds(&self) -> usize {
        self.schedule.len()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Runs round t = round()+1 for `mech` and appends it to the journal.
    pub fn step(
        &mut self,
        mech: &dyn AdaptiveMechanism,
        descriptor: Value,
        generator: &dyn DataGenerator,
        exec: &Executor,
    ) -> Result<StepOutcome> {
        let t = self.round() + 1;
        if t > self.total_rounds() {
            return Err(Error::BudgetExhausted {
                rounds: self.total_rounds(),
            });
        }
        let _lock = match &self.path {
            Some(p) => Some(WriterLock::acquire(p)?),
            None => None,
        };
        let contract = mech.contract().clone();
        contract.validate()?;
        let (m, tau) = (self.params.m, self.params.tau);
        let seeds = SeedDerivation::new(self.master_seed);

        if self.trials.is_empty() {
            self.trials = exec.map_trials(m, |k| {
                Ok(TrialState {
                    x1: generator.generate(seeds.stream(k, Role::Data1))?,
                    x2: generator.generate(seeds.stream(k, Role::Data2))?,
                    joint_seeds: vec![Vec::new(); tau as usize],
                    y1: vec![Vec::new(); tau as usize],
                    y2: vec![Vec::new(); tau as usize],
                })
            })?;
        }

        let master = self.master_seed;
        let trials = &self.trials;
        let results = exec.map_trials(m, |k| {
            let state = &trials[k as usize];
            let new_seeds = extend_seeds(state, contract.seed_space, tau, t, k, master, &seeds)?;
            let mut y1 = Vec::with_capacity(tau as usize);
            let mut y2 = Vec::with_capacity(tau as usize);
            let mut total = 0.0;
            for (l, theta) in new_seeds.iter().enumerate() {
                let mut joint = state.joint_seeds[l].clone();
                joint.push(*theta);
                let a = OutputSample::checked(mech.evaluate_adaptive(&state.x1, &joint, &state.y1[l])?, &contract)?;
                let b = OutputSample::checked(mech.evaluate_adaptive(&state.x2, &joint, &state.y2[l])?, &contract)?;
                total += squared_distance(a.values(), b.values());
                y1.push(a.into_vec());
                y2.push(b.into_vec());
            }
            Ok((total / tau as f64, new_seeds, y1, y2))
        })?;

        let mut psi = RunningStats::default();
        for (state, (p, new_seeds, y1, y2)) in self.trials.iter_mut().zip(results) {
            psi.push(p);
            for (l, ((theta, a), b)) in new_seeds.into_iter().zip(y1).zip(y2).enumerate() {
                state.joint_seeds[l].push(theta);
                state.y1[l].push(a);
                state.y2[l].push(b);
            }
        }

        let v_prev = if t == 1 { 0.0 } else { self.schedule[t - 2] };
        let v_t = self.schedule[t - 1];
        let sigma2 = isotropic_variance(psi.mean, self.params.c, v_t - v_prev);
        let noise = NoiseSpec::isotropic(contract.output_dim, sigma2)?;
        let r = contract.output_radius;
        let required = required_m_ledger(r, self.params.c, self.params.gamma, self.total_rounds());
        let mut cert = MiCertificate::new(Method::RandomizedDist, v_t, self.params.gamma, m, self.params.c);
        crate::randomized::fill_psi_diagnostics(&mut cert, &psi, &noise, required, tau);
        if m < required {
            cert.add_caveat(Caveat::InsufficientTrials { required, used: m });
        }
        if let Some(c) = seed_space_caveat(contract.seed_space, tau) {
            cert.add_caveat(c);
        }

        let record = RoundRecord {
            t,
            mechanism: descriptor,
            psi_bar: psi.mean,
            sigma2,
            noise: noise.clone(),
            certificate: cert.clone(),
        };
        if let Some(path) = &self.path {
            let bytes = serde_json::to_vec(&self.trials)?;
            let digest = hex::encode(Sha256::digest(&bytes));
            write_atomic(&sidecar_path(path), &bytes)?;
            let line = RoundLine {
                kind: "round".into(),
                record: record.clone(),
                trials_digest: digest,
            };
            let (text, sum) = seal(&self.last_checksum, &line)?;
            let mut f: File = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
            writeln!(f, "{text}").map_err(|e| Error::io(path, e))?;
            self.last_checksum = sum;
        } else {
            let (_, sum) = seal(&self.last_checksum, &record)?;
            self.last_checksum = sum;
        }
        self.rounds.push(record);
        Ok(StepOutcome {
            noise,
            certificate: cert,
            psi,
        })
    }
}

/// θ_{t,l} for every l: a random τ-subset of Θ₁ in round 1, afterwards a
/// hash of the existing chain θ̄_{t−1,l}, reduced into a finite Θ_t.
fn extend_seeds(
    state: &TrialState,
    space: SeedSpace,
    tau: u64,
    t: usize,
    k: u64,
    master: u64,
    seeds: &SeedDerivation,
) -> Result<Vec<u64>> {
    if t == 1 {
        return draw_seeds(space, tau, seeds.stream(k, Role::SeedSelect));
    }
    Ok(state
        .joint_seeds
        .iter()
        .enumerate()
        .map(|(l, chain)| {
            let prev: Vec<u8> = chain.iter().flat_map(|s| s.to_le_bytes()).collect();
            let h = hash_words(&[
                b"joint-seed",
                &master.to_le_bytes(),
                &k.to_le_bytes(),
                &(t as u64).to_le_bytes(),
                &(l as u64).to_le_bytes(),
                &prev,
            ]);
            match space {
                SeedSpace::Finite(size) => h % size,
                SeedSpace::Unbounded => h,
            }
        })
        .collect())
}
