use pacest::oracle::*;
use pacest::randomized::*;
use pacest::{Caveat, Executor, StreamSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn blocks(rng: &mut impl Rng, tau: usize, d: usize) -> Vec<Vec<f64>> {
    (0..tau).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(j, &k)| squared_distance(&a[j], &b[k])).sum::<f64>() / a.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn matches_exhaustive_search_over_120_permutations() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    for _ in 0..100 {
        let a = blocks(&mut rng, 5, 3);
        let b = blocks(&mut rng, 5, 3);
        let (value, perm) = min_permutation_distance(&a, &b).unwrap();
        assert!((value - brute_force(&a, &b)).abs() <= 1e-12);
        let cost: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| squared_distance(x, y)).collect()).collect();
        assert_eq!(permuted_distance(&cost, &perm), value);
    }
}

#[test]
fn trivial_pairings() {
    let a = vec![vec![0.0], vec![1.0]];
    assert_eq!(min_permutation_distance(&a, &a).unwrap(), (0.0, vec![0, 1]));
    let b = vec![vec![1.0], vec![0.0]];
    assert_eq!(min_permutation_distance(&a, &b).unwrap(), (0.0, vec![1, 0]));
    assert_eq!(min_permutation_distance(&a, &b[..1]).unwrap_err().code(), "CONTRACT");
    assert_eq!(min_permutation_distance(&a, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap_err().code(), "CONTRACT");
}

#[test]
fn symmetric_and_bounded_by_identity_pairing() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    for _ in 0..200 {
        let tau = rng.random_range(1..=12);
        let a = blocks(&mut rng, tau, 4);
        let b = blocks(&mut rng, tau, 4);
        let (ab, _) = min_permutation_distance(&a, &b).unwrap();
        let (ba, _) = min_permutation_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        let plain = a.iter().zip(&b).map(|(x, y)| squared_distance(x, y)).sum::<f64>() / tau as f64;
        assert!(ab <= plain + 1e-12);
    }
}

#[test]
fn subsampled_distance_dominates_full_distance() {
    // |Θ| = 4, τ = 2: average over all six seed pairs against the full
    // four-block minimum
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
    assert_eq!(pairs.len(), 6);
    for _ in 0..500 {
        let d = rng.random_range(1..=3);
        let a = blocks(&mut rng, 4, d);
        let b = blocks(&mut rng, 4, d);
        let (full, _) = min_permutation_distance(&a, &b).unwrap();
        let sub: f64 = pairs
            .iter()
            .map(|&(i, j)| {
                min_permutation_distance(&[a[i].clone(), a[j].clone()], &[b[i].clone(), b[j].clone()])
                    .unwrap()
                    .0
            })
            .sum::<f64>()
            / pairs.len() as f64;
        assert!(sub >= full - 1e-12, "{sub} < {full}");
    }
}

fn singleton_pools() -> impl DataGenerator {
    FnGenerator(|s: StreamSeed| {
        let x = if s.rng().random::<bool>() { 1.0 } else { 0.0 };
        Dataset::from_rows(&[vec![x]], None)
    })
}

#[test]
fn singleton_pools_give_half() {
    let mech = FnMechanism::new(MechanismContract::randomized(1, 1.0, SeedSpace::Finite(1)), |x: &Dataset, _| {
        Ok(vec![x.row(0)[0]])
    });
    let cfg = RandAnalysisConfig {
        m: 20_000,
        tau: 1,
        v: 1.0,
        c: 0.1,
        gamma: 0.05,
    };
    let a = analyze_randomized(&cfg, &mech, &singleton_pools(), 8, &Executor::default()).unwrap();
    assert!((a.psi.mean - 0.5).abs() <= 3.0 * a.psi.std_error(), "{}", a.psi.mean);
    assert_eq!(a.noise.variances()[0], (a.psi.mean + 0.1) / 2.0);
    assert!(!a.certificate.has_warnings());
}

#[test]
fn seed_only_mechanism_needs_only_floor_noise() {
    let mech = FnMechanism::new(MechanismContract::randomized(3, 2.0, SeedSpace::Unbounded), |_: &Dataset, s| {
        let mut rng = StreamSeed(s).rng();
        Ok((0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
    });
    let cfg = RandAnalysisConfig {
        m: 500,
        tau: 4,
        v: 0.5,
        c: 0.2,
        gamma: 0.05,
    };
    let a = analyze_randomized(&cfg, &mech, &singleton_pools(), 4, &Executor::default()).unwrap();
    assert_eq!(a.psi.max, 0.0);
    assert_eq!(a.noise.variances(), vec![0.2; 3]);
    assert!(a.certificate.caveats.contains(&Caveat::IidSeedApproximation));
    assert!(a.certificate.caveats.iter().any(|c| matches!(c, Caveat::InsufficientTrials { .. })));
}

#[test]
fn seed_space_divisibility() {
    let mech = FnMechanism::new(MechanismContract::randomized(1, 1.0, SeedSpace::Finite(6)), |x: &Dataset, s| {
        Ok(vec![x.row(0)[0] * (s as f64) / 6.0])
    });
    let cfg = RandAnalysisConfig {
        m: 100,
        tau: 4,
        v: 1.0,
        c: 0.5,
        gamma: 0.05,
    };
    let a = analyze_randomized(&cfg, &mech, &singleton_pools(), 4, &Executor::default()).unwrap();
    assert!(a.certificate.caveats.contains(&Caveat::NotDivisible {
        what: "seed space".into(),
        size: 6,
        tau: 4
    }));
    let too_many = RandAnalysisConfig { tau: 7, ..cfg };
    assert!(analyze_randomized(&too_many, &mech, &singleton_pools(), 4, &Executor::default()).is_err());
}

#[test]
fn sample_complexity_examples() {
    assert_eq!(required_m_randomized(1.0, 0.1, 0.05), 2397);
    assert_eq!(required_m_randomized(1.0, 1.0, (-1.0f64).exp()), 8);
    assert_eq!(required_m_randomized(1.0, 1.0, 1.0), 0);
    assert_eq!(required_m_randomized(2.0, 1.0, (-1.0f64).exp()), 128);
}

#[test]
fn worker_count_does_not_change_results() {
    let mech = FnMechanism::new(MechanismContract::randomized(2, 3.0, SeedSpace::Finite(64)), |x: &Dataset, s| {
        let mut rng = StreamSeed(s).rng();
        Ok(vec![x.row(0)[0] + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
    });
    let cfg = RandAnalysisConfig {
        m: 1500,
        tau: 8,
        v: 1.0,
        c: 0.1,
        gamma: 0.05,
    };
    let a = analyze_randomized(&cfg, &mech, &singleton_pools(), 99, &Executor::new(Some(1)).unwrap()).unwrap();
    let b = analyze_randomized(&cfg, &mech, &singleton_pools(), 99, &Executor::new(Some(4)).unwrap()).unwrap();
    assert_eq!(a.psi.mean.to_bits(), b.psi.mean.to_bits());
    assert_eq!(a.noise, b.noise);
    assert_eq!(a.certificate, b.certificate);
}

#[test]
fn larger_tau_tightens_estimate() {
    let mech = FnMechanism::new(MechanismContract::randomized(1, 2.0, SeedSpace::Finite(64)), |x: &Dataset, s| {
        Ok(vec![x.row(0)[0] * 0.2 + (s as f64) / 64.0])
    });
    let cfg = RandAnalysisConfig {
        m: 2000,
        tau: 1,
        v: 1.0,
        c: 0.1,
        gamma: 0.05,
    };
    let sweep = tau_sweep(&cfg, &[1, 4, 16], &mech, &singleton_pools(), 5, &Executor::default()).unwrap();
    assert_eq!(sweep.len(), 3);
    assert!(sweep[2].psi_bar <= sweep[0].psi_bar + 3.0 * sweep[0].psi_std_error);
}
