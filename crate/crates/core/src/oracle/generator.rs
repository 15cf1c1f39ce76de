use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, SubprocessOracle};
use crate::error::{Error, Result};
use crate::linalg;
use crate::seed::StreamSeed;

/// Source of datasets X ~ D. Implementations must be deterministic in the
/// seed.
pub trait DataGenerator: Send + Sync {
    fn generate(&self, seed: StreamSeed) -> Result<Dataset>;
}

impl<G: DataGenerator + ?Sized> DataGenerator for Arc<G> {
    fn generate(&self, seed: StreamSeed) -> Result<Dataset> {
        (**self).generate(seed)
    }
}

impl<G: DataGenerator + ?Sized> DataGenerator for Box<G> {
    fn generate(&self, seed: StreamSeed) -> Result<Dataset> {
        (**self).generate(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplingScheme {
    /// Each pool row is included independently with probability `p`.
    Poisson { p: f64 },
    /// `k` distinct rows chosen uniformly.
    WithoutReplacement { k: usize },
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    PoolSampler {
        source: PathBuf,
        #[serde(default)]
        header: bool,
        scheme: SamplingScheme,
    },
    ParametricGaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
        rows: usize,
    },
    Subprocess {
        command: Vec<String>,
    },
}

impl GeneratorSpec {
    pub fn build(&self) -> Result<Box<dyn DataGenerator>> {
        Ok(match self {
            GeneratorSpec::PoolSampler { source, header, scheme } => {
                let pool = Dataset::load_csv(source, *header)?;
                Box::new(PoolSampler::new(Arc::new(pool), scheme.clone())?)
            }
            GeneratorSpec::ParametricGaussian { mean, covariance, rows } => {
                let cov = linalg::matrix_from_rows(covariance)?;
                Box::new(ParametricGaussian::new(DVector::from_vec(mean.clone()), cov, *rows)?)
            }
            GeneratorSpec::Subprocess { command } => Box::new(SubprocessGenerator::new(command.clone())?),
        })
    }
}

pub struct PoolSampler {
    pool: Arc<Dataset>,
    scheme: SamplingScheme,
}

impl PoolSampler {
    pub fn new(pool: Arc<Dataset>, scheme: SamplingScheme) -> Result<Self> {
        match scheme {
            SamplingScheme::Poisson { p } if !(p > 0.0 && p <= 1.0) => {
                return Err(Error::input(format!("poisson probability {p} outside (0, 1]")));
            }
            SamplingScheme::WithoutReplacement { k } if k > pool.rows() => {
                return Err(Error::input(format!(
                    "cannot draw {k} rows without replacement from a pool of {}",
                    pool.rows()
                )));
            }
            _ => {}
        }
        Ok(Self { pool, scheme })
    }

    pub fn pool(&self) -> &Dataset {
        &self.pool
    }
}

impl DataGenerator for PoolSampler {
    fn generate(&self, seed: StreamSeed) -> Result<Dataset> {
        let n = self.pool.rows();
        let mut rng = seed.rng();
        let picked: Vec<usize> = match self.scheme {
            SamplingScheme::Full => (0..n).collect(),
            SamplingScheme::Poisson { p } => (0..n).filter(|_| rng.random::<f64>() < p).collect(),
            SamplingScheme::WithoutReplacement { k } => {
                let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        Ok(self.pool.select(&picked))
    }
}

/// `rows` i.i.d. draws from N(mean, covariance).
pub struct ParametricGaussian {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    rows: usize,
}

impl ParametricGaussian {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, rows: usize) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::input("covariance shape does not match mean"));
        }
        let factor = linalg::psd_factor(&covariance)?;
        Ok(Self { mean, factor, rows })
    }
}

impl DataGenerator for ParametricGaussian {
    fn generate(&self, seed: StreamSeed) -> Result<Dataset> {
        let d = self.mean.len();
        let mut rng = seed.rng();
        let mut values = Vec::with_capacity(self.rows * d);
        let mut z = DVector::zeros(d);
        for _ in 0..self.rows {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let x = &self.mean + &self.factor * &z;
            values.extend(x.iter());
        }
        Dataset::from_flat(d, values)
    }
}

pub struct SubprocessGenerator {
    oracle: SubprocessOracle,
}

impl SubprocessGenerator {
    pub fn new(command: Vec<String>) -> Result<Self> {
        Ok(Self {
            oracle: SubprocessOracle::new(command)?,
        })
    }
}

impl DataGenerator for SubprocessGenerator {
    fn generate(&self, seed: StreamSeed) -> Result<Dataset> {
        self.oracle.generate(seed)
    }
}

/// Adapts a closure into a generator.
pub struct FnGenerator<F>(pub F);

impl<F> DataGenerator for FnGenerator<F>
where
    F: Fn(StreamSeed) -> Result<Dataset> + Send + Sync,
{
    fn generate(&self, seed: StreamSeed) -> Result<Dataset> {
        (self.0)(seed)
    }
}

/// Draws a dataset; the one-line free-function form of
/// [`DataGenerator::generate`].
pub fn generate_dataset(generator: &dyn DataGenerator, seed: StreamSeed) -> Result<Dataset> {
    generator.generate(seed)
}
