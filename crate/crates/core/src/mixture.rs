//! Gaussian mixtures with exact log-densities and a Monte-Carlo KL
//! estimator.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::StreamSeed;
use crate::stats::RunningStats;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Self {
        let d = mean.len();
        Self {
            mean,
            cov: DMatrix::identity(d, d) * variance,
        }
    }
}

#[derive(Debug, Clone)]
struct Factor {
    cov: DMatrix<f64>,
    lower: DMatrix<f64>,
    log_norm: f64,
}

impl Factor {
    fn new(cov: DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        let lower = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::contract("mixture component covariance is singular or not positive definite"))?
            .l();
        let log_det = 2.0 * lower.diagonal().iter().map(|x| x.ln()).sum::<f64>();
        Ok(Self {
            cov,
            lower,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    fn whiten(&self, x: &[f64]) -> DVector<f64> {
        let mut w = DVector::from_column_slice(x);
        self.lower.solve_lower_triangular_mut(&mut w);
        w
    }
}

/// Σ_k w_k N(μ_k, Σ_k). Components with identical covariance share one
/// Cholesky factor, so a density evaluation whitens the point once per
/// distinct covariance.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    log_weights: Vec<f64>,
    cumulative: Vec<f64>,
    means: Vec<Vec<f64>>,
    white_means: Vec<DVector<f64>>,
    factor_of: Vec<usize>,
    factors: Vec<Factor>,
}

impl GaussianMixture {
    pub fn new(components: Vec<(f64, Gaussian)>) -> Result<Self> {
        let dim = components
            .first()
            .map(|(_, g)| g.mean.len())
            .ok_or_else(|| Error::input("mixture needs at least one component"))?;
        let total: f64 = components.iter().map(|(w, _)| *w).sum();
        if components.iter().any(|(w, _)| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("mixture weights must be nonnegative and sum to 1 (got {total})")));
        }
        let mut factors: Vec<Factor> = Vec::new();
        let mut mix = GaussianMixture {
            dim,
            log_weights: Vec::with_capacity(components.len()),
            cumulative: Vec::with_capacity(components.len()),
            means: Vec::with_capacity(components.len()),
            white_means: Vec::with_capacity(components.len()),
            factor_of: Vec::with_capacity(components.len()),
            factors: Vec::new(),
        };
        let mut running = 0.0;
        for (w, g) in components {
            if g.mean.len() != dim || g.cov.nrows() != dim || g.cov.ncols() != dim {
                return Err(Error::contract("mixture components have inconsistent dimensions"));
            }
            let idx = match factors.iter().position(|f| f.cov == g.cov) {
                Some(i) => i,
                None => {
                    factors.push(Factor::new(g.cov)?);
                    factors.len() - 1
                }
            };
            running += w;
            mix.log_weights.push(w.ln());
            mix.cumulative.push(running);
            mix.white_means.push(factors[idx].whiten(&g.mean));
            mix.means.push(g.mean);
            mix.factor_of.push(idx);
        }
        mix.factors = factors;
        Ok(mix)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let whitened: Vec<DVector<f64>> = self.factors.iter().map(|f| f.whiten(z)).collect();
        let terms: Vec<f64> = (0..self.len())
            .map(|k| {
                let f = self.factor_of[k];
                let q = (&whitened[f] - &self.white_means[k]).norm_squared();
                self.log_weights[k] + self.factors[f].log_norm - 0.5 * q
            })
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.len() - 1];
        let k = self.cumulative.partition_point(|&c| c <= u).min(self.len() - 1);
        let xi = DVector::from_iterator(self.dim, (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let shift = &self.factors[self.factor_of[k]].lower * xi;
        self.means[k].iter().zip(shift.iter()).map(|(m, s)| m + s).collect()
    }

    /// Smallest eigenvalue over all component covariances.
    pub fn min_eigenvalue(&self) -> f64 {
        self.factors
            .iter()
            .map(|f| f.cov.symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// E_{z∼P}[ln p(z) − ln q(z)] from `n_mc` draws of P.
pub fn mixture_kl_estimate(p: &GaussianMixture, q: &GaussianMixture, n_mc: u64, seed: StreamSeed) -> Result<KlEstimate> {
    if p.dim() != q.dim() {
        return Err(Error::contract("mixtures have different dimensions"));
    }
    if n_mc == 0 {
        return Err(Error::input("n_mc must be at least 1"));
    }
    let mut rng = seed.rng();
    let mut stats = RunningStats::default();
    for _ in 0..n_mc {
        let z = p.sample(&mut rng);
        stats.push(p.log_density(&z) - q.log_density(&z));
    }
    Ok(KlEstimate {
        value: stats.mean,
        std_error: stats.std_error(),
    })
}
