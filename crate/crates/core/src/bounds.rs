//! Conversion of mutual-information budgets into PAC Privacy parameters.
//!
//! All divergences are in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{DataGenerator, Dataset};
use crate::parallel::Executor;
use crate::seed::{Role, SeedDerivation};

/// Absolute bisection tolerance on δ.
pub const INVERSION_TOL: f64 = 1e-10;

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::input(format!("{name} = {p} is not a probability")))
    }
}

fn check_budget(v: f64) -> Result<()> {
    if v >= 0.0 && !v.is_nan() {
        Ok(())
    } else {
        Err(Error::input(format!("MI budget {v} must be nonnegative")))
    }
}

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if y == 0.0 {
        f64::INFINITY
    } else {
        x * (x / y).ln()
    }
}

/// KL(Bern(δ) ‖ Bern(δₒ)) with 0·ln 0 = 0; +∞ when δ puts mass where δₒ
/// does not.
pub fn bernoulli_kl(delta: f64, delta_o: f64) -> f64 {
    xlogy_ratio(delta, delta_o) + xlogy_ratio(1.0 - delta, 1.0 - delta_o)
}

/// Smallest δ ∈ [0, δₒ] with KL(δ ‖ δₒ) ≤ v.
pub fn invert_kl_bound(delta_o: f64, v: f64) -> Result<f64> {
    check_probability("delta_o", delta_o)?;
    check_budget(v)?;
    Ok(invert_unchecked(delta_o, v))
}

fn invert_unchecked(delta_o: f64, v: f64) -> f64 {
    if v == 0.0 || delta_o == 0.0 {
        return delta_o;
    }
    if bernoulli_kl(0.0, delta_o) <= v {
        return 0.0;
    }
    // KL(·, δₒ) decreases on [0, δₒ]: lo is infeasible, hi feasible
    let (mut lo, mut hi) = (0.0, delta_o);
    while hi - lo > INVERSION_TOL {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(mid, delta_o) <= v {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Pinsker bound √(v/2) on the total-variation posterior advantage.
pub fn tv_advantage(v: f64) -> f64 {
    (v / 2.0).sqrt()
}

/// Generalization-error bound √(v/2) of an identification learner.
pub fn generalization_bound(v: f64) -> f64 {
    (v / 2.0).sqrt()
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// ln of C(n,l) (1−p)^{n−l} p^l for l = 0..=n.
fn log_binomial_terms(n: u64, p: f64) -> Vec<f64> {
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut log_c = 0.0;
    (0..=n)
        .map(|l| {
            if l > 0 {
                log_c += ((n - l + 1) as f64).ln() - (l as f64).ln();
            }
            let a = if l == 0 { 0.0 } else { l as f64 * lp };
            let b = if l == n { 0.0 } else { (n - l) as f64 * lq };
            log_c + a + b
        })
        .collect()
}

fn check_tail_args(j: u64, n: u64, p: f64) -> Result<()> {
    check_probability("prior_success", p)?;
    if j == 0 || j > n {
        return Err(Error::input(format!("need 1 <= j <= n, got j={j}, n={n}")));
    }
    Ok(())
}

/// P[Binomial(n, p) ≥ j], the chance of at least j successes among n
/// independent identification attempts.
pub fn binomial_prior_tail(j: u64, n: u64, prior_success: f64) -> Result<f64> {
    check_tail_args(j, n, prior_success)?;
    let terms = log_binomial_terms(n, prior_success);
    Ok(log_sum_exp(terms[j as usize..].iter().copied()).exp().min(1.0))
}

/// P[Binomial(n, p) < j] = δ̃ₒ^j, summed directly so it stays accurate when
/// the tail is tiny.
pub fn binomial_prior_failure(j: u64, n: u64, prior_success: f64) -> Result<f64> {
    check_tail_args(j, n, prior_success)?;
    let terms = log_binomial_terms(n, prior_success);
    Ok(log_sum_exp(terms[..j as usize].iter().copied()).exp().min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IidBound {
    pub n: u64,
    /// Posterior per-element failure lower bound δ.
    pub delta: f64,
    pub success_upper: f64,
    /// δ̃ʲ for j = 1..=n.
    pub per_j: Vec<f64>,
}

/// Per-element failure bound for n i.i.d. symmetric elements:
/// δ = Σⱼ δ̃ʲ / n, where δ̃ʲ inverts the KL bound at the prior failure of
/// "at least j correct".
pub fn iid_individual_bound(n: u64, prior_success: f64, v: f64) -> Result<IidBound> {
    check_probability("prior_success", prior_success)?;
    check_budget(v)?;
    if n == 0 {
        return Err(Error::input("n must be at least 1"));
    }
    let terms = log_binomial_terms(n, prior_success);
    // prefix[j] = ln P[Bin < j], suffix[j] = ln P[Bin ≥ j]
    let mut prefix = Vec::with_capacity(n as usize + 1);
    let mut acc = f64::NEG_INFINITY;
    prefix.push(acc);
    for &t in &terms {
        acc = log_add(acc, t);
        prefix.push(acc);
    }
    let mut suffix = vec![f64::NEG_INFINITY; n as usize + 2];
    for j in (0..=n as usize).rev() {
        suffix[j] = log_add(suffix[j + 1], terms[j]);
    }
    // the prior failure rounds to 1 once the tail drops below 1e-16, so the
    // inversion works from both logs rather than from 1 − δₒ
    let per_j: Vec<f64> = (1..=n as usize)
        .map(|j| invert_from_logs(prefix[j], suffix[j], v))
        .collect();
    let delta = per_j.iter().sum::<f64>() / n as f64;
    Ok(IidBound {
        n,
        delta,
        success_upper: 1.0 - delta,
        per_j,
    })
}

/// KL(δ ‖ δₒ) given ln δₒ and ln(1 − δₒ).
fn kl_from_logs(delta: f64, ln_do: f64, ln_co: f64) -> f64 {
    let part = |x: f64, ln_ref: f64| if x == 0.0 { 0.0 } else { x * (x.ln() - ln_ref) };
    part(delta, ln_do) + part(1.0 - delta, ln_co)
}

/// [`invert_kl_bound`] with δₒ given through ln δₒ and ln(1 − δₒ).
fn invert_from_logs(ln_do: f64, ln_co: f64, v: f64) -> f64 {
    let delta_o = ln_do.exp().min(1.0);
    if v == 0.0 || delta_o == 0.0 {
        return delta_o;
    }
    if -ln_co <= v {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, delta_o);
    while hi - lo > INVERSION_TOL {
        let mid = 0.5 * (lo + hi);
        if kl_from_logs(mid, ln_do, ln_co) <= v {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorRate {
    pub delta_o: f64,
}

impl PriorRate {
    pub fn new(delta_o: f64) -> Result<Self> {
        check_probability("delta_o", delta_o)?;
        Ok(Self { delta_o })
    }

    /// Identification of one of `n` equally likely candidates.
    pub fn uniform(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("identification needs at least one candidate"));
        }
        Self::new(1.0 - 1.0 / n as f64)
    }

    /// Membership inference with inclusion probability p: the best prior
    /// guess fails with probability min(p, 1 − p).
    pub fn membership(p: f64) -> Result<Self> {
        check_probability("membership probability", p)?;
        Self::new(p.min(1.0 - p))
    }
}

/// δₒ = 1 − max pmf entry.
pub fn prior_identification(pmf: &[f64]) -> Result<PriorRate> {
    if pmf.is_empty() || pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::input("pmf entries must be finite and nonnegative"));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("pmf sums to {total}, not 1")));
    }
    let max = pmf.iter().copied().fold(0.0, f64::max);
    PriorRate::new((1.0 - max).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorEstimate {
    pub frequency: f64,
    /// 95% Hoeffding half-width.
    pub half_width: f64,
    pub trials: u64,
}

impl PriorEstimate {
    /// Lower confidence bound on the prior success of the tested guess.
    pub fn lower(&self) -> f64 {
        (self.frequency - self.half_width).max(0.0)
    }
}

/// Empirical success frequency of a fixed guess, `rho(X)` evaluated on fresh
/// datasets.
pub fn estimate_prior_success<R>(
    generator: &dyn DataGenerator,
    rho: R,
    trials: u64,
    master_seed: u64,
    exec: &Executor,
) -> Result<PriorEstimate>
where
    R: Fn(&Dataset) -> Result<bool> + Sync,
{
    if trials == 0 {
        return Err(Error::input("trials must be at least 1"));
    }
    let seeds = SeedDerivation::new(master_seed);
    let hits = exec.fold_trials(
        trials,
        || 0u64,
        |acc, k| {
            let x = generator.generate(seeds.stream(k, Role::Data1))?;
            if rho(&x)? {
                *acc += 1;
            }
            Ok(())
        },
        |a, b| a + b,
    )?;
    Ok(PriorEstimate {
        frequency: hits as f64 / trials as f64,
        half_width: ((2.0f64 / 0.05).ln() / (2.0 * trials as f64)).sqrt(),
        trials,
    })
}

/// A converted guarantee for one prior scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacBound {
    pub scenario: String,
    pub delta_o: f64,
    pub mi_budget_nats: f64,
    pub mi_budget_bits: f64,
    /// Posterior failure lower bound δ.
    pub delta_lower: f64,
    pub posterior_success_upper: f64,
    pub tv_advantage: f64,
    pub kl_advantage_nats: f64,
}

impl PacBound {
    pub fn new(scenario: impl Into<String>, prior: PriorRate, v: f64) -> Result<Self> {
        let delta_lower = invert_kl_bound(prior.delta_o, v)?;
        let bound = Self {
            scenario: scenario.into(),
            delta_o: prior.delta_o,
            mi_budget_nats: v,
            mi_budget_bits: v / std::f64::consts::LN_2,
            delta_lower,
            posterior_success_upper: 1.0 - delta_lower,
            tv_advantage: prior.delta_o.min(tv_advantage(v)),
            kl_advantage_nats: v,
        };
        bound.validate()?;
        Ok(bound)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.delta_lower >= 0.0
            && self.delta_lower <= self.delta_o
            && bernoulli_kl(self.delta_lower, self.delta_o) <= self.mi_budget_nats + 1e-8
            && (self.tv_advantage - self.delta_o.min(tv_advantage(self.mi_budget_nats))).abs() <= 1e-15;
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("inconsistent PAC bound {self:?}")))
        }
    }
}
