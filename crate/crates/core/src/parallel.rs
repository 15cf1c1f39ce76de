//! Deterministic trial scheduling.
//!
//! Trials are grouped into fixed-size chunks. Each chunk is folded
//! sequentially, chunks run on the worker pool, and the chunk results are
//! merged in chunk order. The grouping never depends on the worker count,
//! so floating-point results are identical for any degree of parallelism.

use rayon::prelude::*;

use crate::error::{Error, Result};

const CHUNK: u64 = 256;

pub struct Executor {
    pool: rayon::ThreadPool,
}

impl Executor {
    /// `None` uses every available core.
    pub fn new(workers: Option<usize>) -> Result<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = workers {
            if w == 0 {
                return Err(Error::input("workers must be at least 1"));
            }
            builder = builder.num_threads(w);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::input(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn single() -> Self {
        Self::new(Some(1)).expect("single-thread pool")
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Folds trials `0..m` into one accumulator.
    ///
    /// `step` folds one trial into a chunk accumulator; `merge` combines
    /// chunk accumulators left to right. On failure the error of the
    /// lowest-indexed failing chunk is returned.
    pub fn fold_trials<A, I, S, M>(&self, m: u64, init: I, step: S, merge: M) -> Result<A>
    where
        A: Send,
        I: Fn() -> A + Sync,
        S: Fn(&mut A, u64) -> Result<()> + Sync,
        M: Fn(A, A) -> A,
    {
        let chunks = m.div_ceil(CHUNK);
        let partials: Vec<Result<A>> = self.pool.install(|| {
            (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut acc = init();
                    let end = ((c + 1) * CHUNK).min(m);
                    for k in c * CHUNK..end {
                        step(&mut acc, k).map_err(|e| e.at_trial(k))?;
                    }
                    Ok(acc)
                })
                .collect()
        });
        let mut out: Option<A> = None;
        for p in partials {
            let p = p?;
            out = Some(match out {
                None => p,
                Some(acc) => merge(acc, p),
            });
        }
        Ok(out.unwrap_or_else(init))
    }

    /// Maps every trial to a value, preserving trial order.
    pub fn map_trials<T, F>(&self, m: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync,
    {
        self.fold_trials(
            m,
            Vec::new,
            |acc: &mut Vec<T>, k| {
                acc.push(f(k)?);
                Ok(())
            },
            |mut a, mut b| {
                a.append(&mut b);
                a
            },
        )
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::new(None).expect("default worker pool")
    }
}
