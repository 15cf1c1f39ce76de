//! Budget arithmetic for composed releases.

use crate::certificate::{Caveat, Method, MiCertificate};
use crate::error::{Error, Result};
use crate::randomized::ceil_count;

fn combine(certs: &[MiCertificate]) -> Result<MiCertificate> {
    if certs.is_empty() {
        return Err(Error::Composition("nothing to compose".into()));
    }
    let v: f64 = certs.iter().map(|c| c.v_claimed).sum();
    let gamma: f64 = certs.iter().map(|c| c.gamma).sum();
    let m = certs.iter().map(|c| c.m_used).min().unwrap_or(0);
    let c = certs.iter().map(|c| c.c).fold(f64::INFINITY, f64::min);
    let mut out = MiCertificate::new(Method::Composed, v, gamma.min(1.0), m, c);
    out.diagnostics.components = Some(certs.len());
    for cert in certs {
        for cav in &cert.caveats {
            out.add_caveat(cav.clone());
        }
    }
    Ok(out)
}

/// MI budgets of mechanisms on independent inputs add; so do their failure
/// probabilities. The caller attests independence.
pub fn sum_independent(certs: &[MiCertificate]) -> Result<MiCertificate> {
    if certs.len() == 1 {
        return Ok(certs[0].clone());
    }
    let mut out = combine(certs)?;
    out.add_caveat(Caveat::IndependenceAttested);
    Ok(out)
}

/// Sums certificates of randomized-mechanism analyses on the same input.
/// Only distance-based randomized certificates compose this way.
pub fn compose_shared_input(certs: &[MiCertificate]) -> Result<MiCertificate> {
    if let Some(bad) = certs.iter().find(|c| c.method != Method::RandomizedDist) {
        return Err(Error::Composition(format!(
            "certificates of method {:?} do not sum over a shared input",
            bad.method
        )));
    }
    combine(certs)
}

/// σ² = (ψ̄ + c) / (2Δv).
pub fn isotropic_variance(psi_bar: f64, c: f64, delta_v: f64) -> f64 {
    (psi_bar + c) / (2.0 * delta_v)
}

/// ⌈8 r⁴ ln(T/γ) / c²⌉ trials for a T-round ledger.
pub fn required_m_ledger(r: f64, c: f64, gamma: f64, rounds: usize) -> u64 {
    ceil_count(8.0 * r.powi(4) * (rounds as f64 / gamma).ln() / (c * c))
}
