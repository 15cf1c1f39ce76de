//! Gaussian perturbation laws N(0, Σ_B).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::StreamSeed;

const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Σ_B = U diag(variances) Uᵀ. `basis` is U stored column-major.
    Anisotropic { basis: Vec<f64>, variances: Vec<f64> },
    /// Σ_B = variance · I.
    Isotropic { variance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: NoiseKind,
}

impl NoiseSpec {
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        let spec = Self {
            dim,
            kind: NoiseKind::Isotropic { variance },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn anisotropic(basis: &DMatrix<f64>, variances: Vec<f64>) -> Result<Self> {
        let spec = Self {
            dim: variances.len(),
            kind: NoiseKind::Anisotropic {
                basis: basis.as_slice().to_vec(),
                variances,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::contract("noise dimension must be positive"));
        }
        match &self.kind {
            NoiseKind::Isotropic { variance } => check_variance(*variance),
            NoiseKind::Anisotropic { basis, variances } => {
                if variances.len() != self.dim || basis.len() != self.dim * self.dim {
                    return Err(Error::contract(format!(
                        "anisotropic noise of dim {} has {} variances and {} basis entries",
                        self.dim,
                        variances.len(),
                        basis.len()
                    )));
                }
                variances.iter().try_for_each(|v| check_variance(*v))?;
                let u = DMatrix::from_column_slice(self.dim, self.dim, basis);
                let err = (u.transpose() * &u - DMatrix::identity(self.dim, self.dim)).abs().max();
                if err > ORTHONORMAL_TOL {
                    return Err(Error::contract(format!("noise basis is not orthonormal (deviation {err:e})")));
                }
                Ok(())
            }
        }
    }

    /// Per-direction variances, in basis order.
    pub fn variances(&self) -> Vec<f64> {
        match &self.kind {
            NoiseKind::Isotropic { variance } => vec![*variance; self.dim],
            NoiseKind::Anisotropic { variances, .. } => variances.clone(),
        }
    }

    pub fn basis(&self) -> DMatrix<f64> {
        match &self.kind {
            NoiseKind::Isotropic { .. } => DMatrix::identity(self.dim, self.dim),
            NoiseKind::Anisotropic { basis, .. } => DMatrix::from_column_slice(self.dim, self.dim, basis),
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.kind {
            NoiseKind::Isotropic { variance } => self.dim as f64 * variance,
            NoiseKind::Anisotropic { variances, .. } => variances.iter().sum(),
        }
    }

    /// √trace(Σ_B), the noise magnitude used in reports.
    pub fn magnitude(&self) -> f64 {
        self.trace().sqrt()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match &self.kind {
            NoiseKind::Isotropic { variance } => DMatrix::identity(self.dim, self.dim) * *variance,
            NoiseKind::Anisotropic { variances, .. } => {
                let u = self.basis();
                &u * DMatrix::from_diagonal(&DVector::from_column_slice(variances)) * u.transpose()
            }
        }
    }

    /// Adds `alpha · I` to the law.
    pub fn plus_isotropic(&self, alpha: f64) -> Result<NoiseSpec> {
        check_variance(alpha)?;
        let kind = match &self.kind {
            NoiseKind::Isotropic { variance } => NoiseKind::Isotropic {
                variance: variance + alpha,
            },
            NoiseKind::Anisotropic { basis, variances } => NoiseKind::Anisotropic {
                basis: basis.clone(),
                variances: variances.iter().map(|v| v + alpha).collect(),
            },
        };
        Ok(NoiseSpec { dim: self.dim, kind })
    }
}

fn check_variance(v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::contract(format!("noise variance {v} is not a finite nonnegative number")))
    }
}

/// One draw from N(0, Σ_B), computed as U · diag(σ_j) · z.
pub fn sample_noise(spec: &NoiseSpec, seed: StreamSeed) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = seed.rng();
    Ok(draw(spec, &spec.basis(), &mut rng))
}

fn draw(spec: &NoiseSpec, basis: &DMatrix<f64>, rng: &mut impl Rng) -> Vec<f64> {
    let scaled = DVector::from_iterator(
        spec.dim,
        spec.variances().into_iter().map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal)),
    );
    match spec.kind {
        NoiseKind::Isotropic { .. } => scaled.as_slice().to_vec(),
        NoiseKind::Anisotropic { .. } => (basis * scaled).as_slice().to_vec(),
    }
}

/// Monte-Carlo estimate of E‖B‖₂ (at most √trace by Jensen).
pub fn expected_norm_mc(spec: &NoiseSpec, draws: usize, seed: StreamSeed) -> Result<f64> {
    spec.validate()?;
    if draws == 0 {
        return Err(Error::input("expected-norm estimate needs at least one draw"));
    }
    let basis = spec.basis();
    let mut rng = seed.rng();
    let total: f64 = (0..draws)
        .map(|_| draw(spec, &basis, &mut rng).iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum();
    Ok(total / draws as f64)
}

/// ½ log det(I + Σ̂ Σ_B⁻¹): the MI of a Gaussian release with output
/// covariance Σ̂ under noise Σ_B, which upper-bounds the MI of any
/// mechanism with that output covariance. Infinite if Σ_B is singular in a
/// direction where Σ̂ is not.
pub fn gaussian_mi_upper_bound(sigma_hat: &DMatrix<f64>, noise: &NoiseSpec) -> Result<f64> {
    noise.validate()?;
    if sigma_hat.nrows() != noise.dim || sigma_hat.ncols() != noise.dim {
        return Err(Error::contract("covariance and noise dimensions differ"));
    }
    let u = noise.basis();
    let rotated = u.transpose() * sigma_hat * &u;
    let vars = noise.variances();
    let d = noise.dim;
    let mut whitened = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let s = rotated[(i, j)];
            whitened[(i, j)] = if s == 0.0 { 0.0 } else { s / (vars[i] * vars[j]).sqrt() };
        }
    }
    if whitened.iter().any(|x| !x.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let mu = whitened.symmetric_eigenvalues();
    Ok(0.5 * mu.iter().map(|m| m.max(0.0).ln_1p()).sum::<f64>())
}
