use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use pacest::bounds::*;
use proptest::prelude::*;

fn binomial(n: u64, k: u64) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * BigInt::from(n - i) / BigInt::from(i + 1))
}

/// Exact rational Σ_{l≥j} C(n,l)(1−p)^{n−l}p^l for a dyadic p.
fn exact_tail(j: u64, n: u64, p: f64) -> f64 {
    let p = BigRational::from_float(p).unwrap();
    let q = BigRational::one() - &p;
    let mut sum = BigRational::zero();
    for l in j..=n {
        let term = BigRational::from_integer(binomial(n, l)) * num_traits::pow(q.clone(), (n - l) as usize)
            * num_traits::pow(p.clone(), l as usize);
        sum += term;
    }
    sum.to_f64().unwrap()
}

#[test]
fn binomial_tail_matches_rational_arithmetic() {
    for n in 1..=20u64 {
        for &p in &[0.01, 0.1, 0.37, 0.5, 0.93] {
            for j in 1..=n {
                let got = binomial_prior_tail(j, n, p).unwrap();
                let want = exact_tail(j, n, p);
                assert!((got - want).abs() <= 1e-12, "n={n} j={j} p={p}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn individual_bound_is_monotone_in_n() {
    let mut prev = f64::INFINITY;
    for n in [1, 2, 5, 10, 50] {
        let b = iid_individual_bound(n, 0.01, 1.0).unwrap();
        assert!(b.success_upper <= prev + 1e-12, "n={n}: {} > {prev}", b.success_upper);
        prev = b.success_upper;
    }
}

#[test]
fn large_n_tail_is_finite() {
    let b = iid_individual_bound(10_000, 0.01, 1.0).unwrap();
    assert!(b.delta.is_finite() && b.delta > 0.0 && b.delta <= 1.0);
}

/// KL(δ ‖ δₒ) from ln δₒ and ln(1 − δₒ), with the complement taken from
/// the exact tail so nothing rounds to 1.
fn kl_logs(delta: f64, ln_do: f64, ln_co: f64) -> f64 {
    let part = |x: f64, l: f64| if x == 0.0 { 0.0 } else { x * (x.ln() - l) };
    part(delta, ln_do) + part(1.0 - delta, ln_co)
}

#[test]
fn per_j_bounds_survive_near_certain_prior_failure() {
    let (n, p, v) = (10u64, 0.01, 1.0);
    let b = iid_individual_bound(n, p, v).unwrap();
    for j in 1..=n {
        let tail = exact_tail(j, n, p);
        let (ln_do, ln_co) = ((-tail).ln_1p(), tail.ln());
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if kl_logs(mid, ln_do, ln_co) <= v {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let got = b.per_j[(j - 1) as usize];
        assert!((got - hi).abs() <= 1e-9, "j={j}: {got} vs {hi}");
        assert!(got < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn pinsker_consistency(delta_o in 1e-6f64..(1.0 - 1e-6), frac in 0.0f64..=1.0) {
        let delta = delta_o * frac;
        let kl = bernoulli_kl(delta, delta_o);
        prop_assert!((delta_o - delta).abs() <= (kl / 2.0).sqrt() + 1e-12);
    }

    #[test]
    fn inversion_is_sound_and_tight(delta_o in 1e-3f64..0.999, v in 1e-6f64..5.0) {
        let d = invert_kl_bound(delta_o, v).unwrap();
        prop_assert!(d >= 0.0 && d <= delta_o);
        prop_assert!(bernoulli_kl(d, delta_o) <= v + 1e-8);
        if d > 1e-6 {
            prop_assert!(bernoulli_kl(d - 1e-6, delta_o) > v);
        }
    }

    #[test]
    fn single_element_bound_equals_global(p in 1e-3f64..0.999, v in 0.0f64..3.0) {
        let b = iid_individual_bound(1, p, v).unwrap();
        let g = invert_kl_bound(1.0 - p, v).unwrap();
        prop_assert!((b.delta - g).abs() < 1e-9);
    }
}
