//! Covariance estimation and symmetric spectral decomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::oracle::OutputSample;

const SYMMETRY_TOL: f64 = 1e-9;

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let cols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::input("matrix rows have unequal length"));
    }
    Ok(DMatrix::from_fn(n, cols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn scale(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(1.0f64, |a, x| a.max(x.abs()))
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::contract(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let tol = SYMMETRY_TOL * scale(m);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::contract(format!(
                    "matrix is not symmetric at ({i},{j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// A factor `L` with `L Lᵀ = Σ` for a symmetric PSD `Σ`. Uses Cholesky when
/// `Σ` is positive definite and a clamped eigen-square-root otherwise.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(cov)?;
    let sym = symmetrize(cov);
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch.l());
    }
    let (u, lambda) = eigen_sorted(&sym);
    let floor = -SYMMETRY_TOL * scale(&sym);
    if let Some(neg) = lambda.iter().find(|&&l| l < floor) {
        return Err(Error::contract(format!("matrix is not positive semi-definite (eigenvalue {neg})")));
    }
    let roots = DVector::from_iterator(lambda.len(), lambda.iter().map(|l| l.max(0.0).sqrt()));
    Ok(u * DMatrix::from_diagonal(&roots))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn eigen_sorted(sym: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let eig = sym.clone().symmetric_eigen();
    let d = sym.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut u = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &eig.eigenvectors.column(src));
    }
    let lambda = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (u, lambda)
}

/// Symmetric eigendecomposition `Σ = U Λ Uᵀ` with eigenvalues sorted
/// non-increasing and clamped at zero.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

pub fn spectral_decompose(cov: &DMatrix<f64>) -> Result<Spectrum> {
    check_symmetric(cov)?;
    let (basis, lambda) = eigen_sorted(&symmetrize(cov));
    Ok(Spectrum {
        basis,
        eigenvalues: lambda.into_iter().map(|l| l.max(0.0)).collect(),
    })
}

impl Spectrum {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let lambda = DVector::from_column_slice(&self.eigenvalues);
        &self.basis * DMatrix::from_diagonal(&lambda) * self.basis.transpose()
    }
}

/// Streaming mean and scatter matrix (Welford update, Chan merge).
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    scatter: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            scatter: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, y: &[f64]) {
        let d = self.dim();
        debug_assert_eq!(y.len(), d);
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = y.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        let after: Vec<f64> = y.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for i in 0..d {
            let row = &mut self.scatter[i * d..(i + 1) * d];
            for (s, a) in row.iter_mut().zip(&after) {
                *s += delta[i] * a;
            }
        }
    }

    pub fn merge(mut self, other: MomentAccumulator) -> MomentAccumulator {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let d = self.dim();
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let w = na * nb / n;
        for i in 0..d {
            for j in 0..d {
                self.scatter[i * d + j] += other.scatter[i * d + j] + delta[i] * delta[j] * w;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.count += other.count;
        self
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    /// Covariance with divisor `m` (the sample count), symmetrized.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.count.max(1) as f64;
        DMatrix::from_fn(d, d, |i, j| 0.5 * (self.scatter[i * d + j] + self.scatter[j * d + i]) / n)
    }
}

/// Empirical mean and covariance (divisor m) of at least two samples.
pub fn estimate_covariance(samples: &[OutputSample]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if samples.len() < 2 {
        return Err(Error::input("covariance estimation needs at least two samples"));
    }
    let d = samples[0].values().len();
    let mut acc = MomentAccumulator::new(d);
    for (k, s) in samples.iter().enumerate() {
        if s.values().len() != d {
            return Err(Error::contract(format!(
                "sample {k} has dimension {} but sample 0 has {d}",
                s.values().len()
            )));
        }
        acc.push(s.values());
    }
    Ok((acc.mean(), acc.covariance()))
}

/// `log det` of a symmetric positive-definite matrix.
pub fn log_det_pd(m: &DMatrix<f64>) -> Result<f64> {
    let ch = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::contract("matrix is singular or not positive definite"))?;
    Ok(2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::MechanismContract;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn sample(v: &[f64]) -> OutputSample {
        OutputSample::checked(v.to_vec(), &MechanismContract::deterministic(v.len(), 1e9)).unwrap()
    }

    #[test]
    fn identical_samples_have_zero_covariance() {
        let s = vec![sample(&[1.0, 2.0]); 5];
        let (mu, cov) = estimate_covariance(&s).unwrap();
        assert_eq!(mu.as_slice(), &[1.0, 2.0]);
        assert!(cov.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_point_covariance_uses_divisor_m() {
        let (mu, cov) = estimate_covariance(&[sample(&[1.0, 0.0]), sample(&[-1.0, 0.0])]).unwrap();
        assert_eq!(mu.as_slice(), &[0.0, 0.0]);
        assert_eq!(cov, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let e = estimate_covariance(&[sample(&[1.0, 0.0]), sample(&[1.0])]).unwrap_err();
        assert_eq!(e.code(), "CONTRACT");
    }

    #[test]
    fn covariance_concentrates() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let samples: Vec<OutputSample> = (0..100_000)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                sample(&[2.0 * a, b])
            })
            .collect();
        let (_, cov) = estimate_covariance(&samples).unwrap();
        let spec = spectral_decompose(&cov).unwrap();
        assert!((spec.eigenvalues[0] / 4.0 - 1.0).abs() < 0.05);
        assert!((spec.eigenvalues[1] - 1.0).abs() < 0.05);
    }

    #[test]
    fn merge_matches_sequential() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let ys: Vec<Vec<f64>> = (0..500).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let mut all = MomentAccumulator::new(3);
        ys.iter().for_each(|y| all.push(y));
        let mut a = MomentAccumulator::new(3);
        let mut b = MomentAccumulator::new(3);
        ys[..123].iter().for_each(|y| a.push(y));
        ys[123..].iter().for_each(|y| b.push(y));
        let merged = a.merge(b);
        assert!((merged.covariance() - all.covariance()).abs().max() < 1e-14);
        assert!((merged.mean() - all.mean()).abs().max() < 1e-14);
    }

    #[test]
    fn spectral_decomposition_of_diagonal() {
        let s = spectral_decompose(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0])).unwrap();
        assert_eq!(s.eigenvalues, vec![3.0, 1.0]);
        assert!((s.basis[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((s.basis[(0, 1)].abs() - 1.0).abs() < 1e-12);
        let z = spectral_decompose(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(z.eigenvalues, vec![0.0; 3]);
    }

    #[test]
    fn random_psd_reconstructs() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = DMatrix::from_fn(5, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let sigma = &a * a.transpose();
            let s = spectral_decompose(&sigma).unwrap();
            let err = (s.reconstruct() - &sigma).norm();
            assert!(err <= 1e-8 * sigma.norm().max(1.0), "residual {err}");
            assert!(s.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            let gram = s.basis.transpose() * &s.basis;
            assert!((gram - DMatrix::identity(5, 5)).abs().max() < 1e-8);
        }
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert_eq!(spectral_decompose(&m).unwrap_err().code(), "CONTRACT");
    }

    #[test]
    fn psd_factor_handles_singular_matrices() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&m).unwrap();
        assert!((&l * l.transpose() - &m).abs().max() < 1e-12);
    }
}
