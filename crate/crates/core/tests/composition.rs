use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use pacest::composition::*;
use pacest::deterministic::{analyze_deterministic, DetAnalysisConfig};
use pacest::ledger::*;
use pacest::oracle::*;
use pacest::randomized::{analyze_randomized, RandAnalysisConfig};
use pacest::{sample_noise, Executor, Method, MiCertificate, SeedDerivation, StreamSeed};
use rand::Rng;
use serde_json::json;

fn params(m: u64, tau: u64) -> LedgerParams {
    LedgerParams {
        m,
        tau,
        c: 0.1,
        gamma: 0.05,
    }
}

fn coin_pools() -> impl DataGenerator {
    FnGenerator(|s: StreamSeed| {
        let mut rng = s.rng();
        let rows: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        Dataset::from_rows(&rows, None)
    })
}

fn noisy_mean() -> impl Mechanism {
    FnMechanism::new(MechanismContract::randomized(1, 2.0, SeedSpace::Finite(16)), |x: &Dataset, s| {
        let mean = x.iter_rows().map(|r| r[0]).sum::<f64>() / x.rows() as f64;
        Ok(vec![mean + (s as f64 - 7.5) / 16.0])
    })
}

#[test]
fn single_round_ledger_matches_randomized_analyzer() {
    let exec = Executor::default();
    let mut ledger = LedgerState::open(vec![0.8], params(3000, 1), 42, None).unwrap();
    let out = ledger.step(&Stateless(noisy_mean()), json!("mean"), &coin_pools(), &exec).unwrap();
    let cfg = RandAnalysisConfig {
        m: 3000,
        tau: 1,
        v: 0.8,
        c: 0.1,
        gamma: 0.05,
    };
    let a = analyze_randomized(&cfg, &noisy_mean(), &coin_pools(), 42, &exec).unwrap();
    assert!((out.psi.mean - a.psi.mean).abs() <= 1e-12 * a.psi.mean.abs());
    let (x, y) = (out.noise.variances()[0], a.noise.variances()[0]);
    assert!((x - y).abs() <= 1e-12 * y);
    assert_eq!(out.certificate.v_claimed, 0.8);
    assert_eq!(out.certificate.method, Method::RandomizedDist);
}

#[test]
fn seed_only_rounds_need_floor_noise() {
    let mech = FnMechanism::new(MechanismContract::randomized(2, 1.0, SeedSpace::Finite(8)), |_: &Dataset, s| {
        Ok(vec![s as f64 / 8.0, 0.0])
    });
    let mut ledger = LedgerState::open(vec![0.25, 1.0], params(64, 2), 1, None).unwrap();
    let exec = Executor::default();
    let first = ledger.step(&Stateless(&mech), json!(1), &coin_pools(), &exec).unwrap();
    assert_eq!(first.psi.max, 0.0);
    assert_eq!(first.noise.variances(), vec![0.1 / 0.5; 2]);
    let second = ledger.step(&Stateless(&mech), json!(2), &coin_pools(), &exec).unwrap();
    assert_eq!(second.noise.variances(), vec![0.1 / 1.5; 2]);
    let e = ledger.step(&Stateless(&mech), json!(3), &coin_pools(), &exec).unwrap_err();
    assert_eq!(e.code(), "BUDGET_EXHAUSTED");
}

#[test]
fn reloading_between_rounds_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let exec = Executor::new(Some(3)).unwrap();
    let schedule = vec![0.3, 0.6, 1.0];
    let resumed = dir.path().join("resumed.jsonl");
    let straight = dir.path().join("straight.jsonl");

    let mut a = LedgerState::open(schedule.clone(), params(300, 3), 9, Some(&resumed)).unwrap();
    a.step(&Stateless(noisy_mean()), json!("r1"), &coin_pools(), &exec).unwrap();
    drop(a);
    for round in ["r2", "r3"] {
        let mut a = LedgerState::load(&resumed).unwrap();
        a.step(&Stateless(noisy_mean()), json!(round), &coin_pools(), &exec).unwrap();
    }

    let mut b = LedgerState::open(schedule, params(300, 3), 9, Some(&straight)).unwrap();
    for round in ["r1", "r2", "r3"] {
        b.step(&Stateless(noisy_mean()), json!(round), &coin_pools(), &Executor::single()).unwrap();
    }
    assert_eq!(std::fs::read(&resumed).unwrap(), std::fs::read(&straight).unwrap());
    assert_eq!(std::fs::read(sidecar_path(&resumed)).unwrap(), std::fs::read(sidecar_path(&straight)).unwrap());
    let loaded = LedgerState::load(&straight).unwrap();
    assert_eq!(loaded.round(), 3);
    assert_eq!(loaded.rounds, b.rounds);
}

#[test]
fn tampering_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.jsonl");
    let exec = Executor::default();
    let mut l = LedgerState::open(vec![0.5, 1.0], params(50, 2), 3, Some(&path)).unwrap();
    l.step(&Stateless(noisy_mean()), json!(1), &coin_pools(), &exec).unwrap();

    let side = sidecar_path(&path);
    let original = std::fs::read(&side).unwrap();
    let mut bad = original.clone();
    let pos = bad.iter().position(|b| b.is_ascii_digit()).unwrap();
    bad[pos] = if bad[pos] == b'9' { b'8' } else { bad[pos] + 1 };
    std::fs::write(&side, &bad).unwrap();
    assert_eq!(LedgerState::load(&path).unwrap_err().code(), "INTEGRITY");
    std::fs::write(&side, &original).unwrap();
    LedgerState::load(&path).unwrap();

    let journal = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, journal.replacen("\"t\":1", "\"t\":2", 1)).unwrap();
    assert_eq!(LedgerState::load(&path).unwrap_err().code(), "INTEGRITY");
    std::fs::write(&path, &journal).unwrap();

    // a second writer is refused while the lock is held
    let mut lock = path.as_os_str().to_owned();
    lock.push(".lock");
    std::fs::write(&lock, "").unwrap();
    let mut again = LedgerState::load(&path).unwrap();
    let e = again.step(&Stateless(noisy_mean()), json!(2), &coin_pools(), &exec).unwrap_err();
    assert_eq!(e.code(), "INPUT");
    std::fs::remove_file(&lock).unwrap();
    again.step(&Stateless(noisy_mean()), json!(2), &coin_pools(), &exec).unwrap();

    assert!(LedgerState::open(vec![1.0], params(5, 1), 0, Some(&path)).is_err());
}

/// Records the history and joint-seed lengths it is called with.
struct Recorder {
    contract: MechanismContract,
    seen: Mutex<Vec<(usize, usize)>>,
}

impl AdaptiveMechanism for Recorder {
    fn contract(&self) -> &MechanismContract {
        &self.contract
    }
    fn evaluate_adaptive(&self, data: &Dataset, joint_seed: &[u64], history: &[Vec<f64>]) -> pacest::Result<Vec<f64>> {
        self.seen.lock().unwrap().push((joint_seed.len(), history.len()));
        let last = history.last().map_or(0.0, |h| h[0]);
        Ok(vec![0.5 * last + 0.1 * data.row(0)[0]])
    }
}

#[test]
fn later_rounds_see_earlier_outputs() {
    let exec = Executor::default();
    let mut l = LedgerState::open(vec![0.2, 0.4, 0.6], params(40, 2), 5, None).unwrap();
    for t in 1..=3 {
        let rec = Recorder {
            contract: MechanismContract::randomized(1, 1.0, SeedSpace::Unbounded),
            seen: Mutex::new(Vec::new()),
        };
        l.step(&rec, json!(t), &coin_pools(), &exec).unwrap();
        let seen = rec.seen.into_inner().unwrap();
        assert_eq!(seen.len(), 40 * 2 * 2);
        assert!(seen.iter().all(|&(j, h)| j == t && h == t - 1));
    }
    assert!(l.trials.iter().all(|s| s.joint_seeds.iter().all(|c| c.len() == 3)));

    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/oracle.py");
    let sub = SubprocessAdaptive::new(
        vec!["python3".into(), script.into(), "adaptive".into()],
        MechanismContract::randomized(2, 5.0, SeedSpace::Unbounded),
    )
    .unwrap();
    let gen = FnGenerator(|s: StreamSeed| Dataset::from_rows(&[vec![(s.0 % 3) as f64, 0.0]], None));
    let mut l = LedgerState::open(vec![0.5, 1.0], params(10, 1), 5, None).unwrap();
    l.step(&sub, json!("a"), &gen, &exec).unwrap();
    l.step(&sub, json!("b"), &gen, &exec).unwrap();
    // the second coordinate reports the joint-seed length
    assert!(l.trials.iter().all(|s| s.y1[0][1][1] == 2.0));
}

#[test]
fn equal_rounds_scale_noise_by_round_count() {
    for t in [2u32, 4, 8, 16] {
        let rounds = t as f64;
        let single = isotropic_variance(0.37, 0.1, 1.0);
        let per_round = isotropic_variance(0.37, 0.1, 1.0 / rounds);
        assert_eq!(per_round, single * rounds);
        assert_eq!(per_round.sqrt(), single.sqrt() * rounds.sqrt());
    }
    assert_eq!(required_m_ledger(1.0, 0.1, 0.05, 10), 4239);
}

#[test]
fn certificate_arithmetic() {
    let c = |v, g, method| MiCertificate::new(method, v, g, 10, 0.1);
    let three = sum_independent(&[
        c(0.2, 0.05, Method::Verified),
        c(0.2, 0.05, Method::Verified),
        c(0.2, 0.05, Method::Verified),
    ])
    .unwrap();
    assert!((three.v_claimed - 0.6).abs() < 1e-15 && (three.confidence - 0.85).abs() < 1e-15);
    let two = compose_shared_input(&[c(0.5, 0.01, Method::RandomizedDist), c(0.5, 0.01, Method::RandomizedDist)]).unwrap();
    assert_eq!((two.v_claimed, two.method), (1.0, Method::Composed));
    assert_eq!(
        compose_shared_input(&[c(0.5, 0.01, Method::RandomizedDist), c(0.5, 0.01, Method::DeterministicCov)])
            .unwrap_err()
            .code(),
        "COMPOSITION"
    );
    assert_eq!(compose_shared_input(&[]).unwrap_err().code(), "COMPOSITION");
}

#[test]
fn block_norms_add() {
    let a = pacest::NoiseSpec::isotropic(3, 0.7).unwrap();
    let u = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
    let b = pacest::NoiseSpec::anisotropic(&u, vec![2.0, 0.1]).unwrap();
    let seeds = SeedDerivation::new(12);
    for k in 0..1000 {
        let x = sample_noise(&a, seeds.stream(k, pacest::Role::Noise)).unwrap();
        let y = sample_noise(&b, seeds.stream(k, pacest::Role::Data1)).unwrap();
        let joint: Vec<f64> = x.iter().chain(&y).copied().collect();
        let sq = |v: &[f64]| v.iter().map(|z| z * z).sum::<f64>();
        let lhs = sq(&joint);
        let rhs = sq(&x) + sq(&y);
        assert!((lhs - rhs).abs() <= 1e-14 * lhs, "{lhs} {rhs}");
    }
}

/// Two strongly correlated statistics: the mean of column 0 and the mean of
/// column 0 plus a little of column 1.
fn correlated_task() -> (ParametricGaussian, impl Mechanism, impl Mechanism, impl Mechanism) {
    let gen = ParametricGaussian::new(DVector::zeros(2), DMatrix::identity(2, 2), 20).unwrap();
    let stat = |x: &Dataset| {
        let n = x.rows() as f64;
        let a = x.iter_rows().map(|r| r[0]).sum::<f64>() / n;
        let b = x.iter_rows().map(|r| r[0] + 0.1 * r[1]).sum::<f64>() / n;
        (a, b)
    };
    let joint = FnMechanism::new(MechanismContract::deterministic(2, 3.0), move |x: &Dataset, _| {
        let (a, b) = stat(x);
        Ok(vec![a, b])
    });
    let first = FnMechanism::new(MechanismContract::deterministic(1, 3.0), move |x: &Dataset, _| Ok(vec![stat(x).0]));
    let second = FnMechanism::new(MechanismContract::deterministic(1, 3.0), move |x: &Dataset, _| Ok(vec![stat(x).1]));
    (gen, joint, first, second)
}

#[test]
fn joint_analysis_beats_separate_budgets() {
    let (gen, joint, first, second) = correlated_task();
    let exec = Executor::default();
    let cfg = |v: f64, beta: f64| DetAnalysisConfig {
        m: 20_000,
        v,
        beta,
        c: 1e-4,
        gamma: 0.05,
        kappa: 1.0,
    };
    let together = analyze_deterministic(&cfg(1.0, 0.1), &joint, &gen, 3, &exec).unwrap();
    let a = analyze_deterministic(&cfg(0.5, 0.05), &first, &gen, 3, &exec).unwrap();
    let b = analyze_deterministic(&cfg(0.5, 0.05), &second, &gen, 3, &exec).unwrap();
    let separate = a.noise.trace() + b.noise.trace();
    assert!(together.noise.trace() < separate, "{} vs {separate}", together.noise.trace());
}
