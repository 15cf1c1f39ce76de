//! Python bindings. Mechanisms and generators are either spec dicts (the
//! same JSON the CLI accepts) or Python callables; results come back as
//! plain dicts.

use pacest_core::baselines::{noise_gap as core_noise_gap, worst_case_noise as core_worst_case, WorstCaseQuery};
use pacest_core::bounds::{self, PacBound, PriorRate};
use pacest_core::deterministic::{self, DetAnalysisConfig};
use pacest_core::oracle::{
    Dataset, DataGenerator, GeneratorSpec, Mechanism, MechanismContract, MechanismSpec, SeedSpace,
};
use pacest_core::randomized::{self, RandAnalysisConfig};
use pacest_core::verifier::{self, ProposalSpec, VerifyConfig};
use pacest_core::{Error, Executor, StreamSeed};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(pacest, PacestError, PyException, "Raised with args (code, message, trial).");

fn to_py(e: Error) -> PyErr {
    PacestError::new_err((e.code(), e.to_string(), e.trial()))
}

fn from_dict<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let json = py.import("json")?;
    let text: String = json.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| to_py(Error::input(e.to_string())))
}

fn to_dict<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| to_py(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A Python callable `f(rows, seed) -> list[float]` with its declared
/// output contract.
#[pyclass(name = "Mechanism", frozen)]
struct PyMechanism {
    f: Py<PyAny>,
    contract: MechanismContract,
}

#[pymethods]
impl PyMechanism {
    #[new]
    #[pyo3(signature = (f, output_dim, output_radius, randomized = false, seed_space_size = None))]
    fn new(f: Py<PyAny>, output_dim: usize, output_radius: f64, randomized: bool, seed_space_size: Option<u64>) -> PyResult<Self> {
        let contract = if randomized {
            let space = seed_space_size.map_or(SeedSpace::Unbounded, SeedSpace::Finite);
            MechanismContract::randomized(output_dim, output_radius, space)
        } else {
            MechanismContract::deterministic(output_dim, output_radius)
        };
        contract.validate().map_err(to_py)?;
        Ok(Self { f, contract })
    }
}

impl Mechanism for PyMechanism {
    fn contract(&self) -> &MechanismContract {
        &self.contract
    }

    fn evaluate_raw(&self, data: &Dataset, seed: u64) -> pacest_core::Result<Vec<f64>> {
        Python::attach(|py| {
            self.f
                .call1(py, (data.to_rows(), seed))
                .and_then(|out| out.extract::<Vec<f64>>(py))
                .map_err(|e| Error::oracle(format!("python mechanism: {e}")))
        })
    }
}

/// Wraps a Python callable `g(seed) -> list[list[float]]`.
struct PyGenerator(Py<PyAny>);

impl DataGenerator for PyGenerator {
    fn generate(&self, seed: StreamSeed) -> pacest_core::Result<Dataset> {
        let rows = Python::attach(|py| {
            self.0
                .call1(py, (seed.0,))
                .and_then(|out| out.extract::<Vec<Vec<f64>>>(py))
                .map_err(|e| Error::oracle(format!("python generator: {e}")))
        })?;
        Dataset::from_rows(&rows, None)
    }
}

fn mechanism(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Box<dyn Mechanism>> {
    if let Ok(m) = obj.cast::<PyMechanism>() {
        let m = m.get();
        return Ok(Box::new(PyMechanism {
            f: m.f.clone_ref(py),
            contract: m.contract.clone(),
        }));
    }
    from_dict::<MechanismSpec>(py, obj)?.build().map_err(to_py)
}

fn generator(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Box<dyn DataGenerator>> {
    if obj.is_instance_of::<PyDict>() {
        return from_dict::<GeneratorSpec>(py, obj)?.build().map_err(to_py);
    }
    if obj.is_callable() {
        return Ok(Box::new(PyGenerator(obj.clone().unbind())));
    }
    Err(to_py(Error::input("generator must be a spec dict or a callable")))
}

fn executor(workers: Option<usize>) -> PyResult<Executor> {
    Executor::new(workers).map_err(to_py)
}

/// Smallest posterior failure rate consistent with prior failure `delta_o`
/// and MI budget `v` (nats).
#[pyfunction]
fn invert_kl_bound(delta_o: f64, v: f64) -> PyResult<f64> {
    bounds::invert_kl_bound(delta_o, v).map_err(to_py)
}

/// Posterior success bound for a prior success rate `delta_o`.
#[pyfunction]
#[pyo3(signature = (delta_o, mi, scenario = "user-prior"))]
fn pac_bound<'py>(py: Python<'py>, delta_o: f64, mi: f64, scenario: &str) -> PyResult<Bound<'py, PyAny>> {
    let b = PriorRate::new(delta_o).and_then(|p| PacBound::new(scenario, p, mi)).map_err(to_py)?;
    to_dict(py, &b)
}

#[pyfunction]
fn iid_individual_bound<'py>(py: Python<'py>, n: u64, prior_success: f64, mi: f64) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &bounds::iid_individual_bound(n, prior_success, mi).map_err(to_py)?)
}

#[pyfunction]
fn confidence_threshold(m: u64, gamma: f64, d: usize, r: f64, kappa: f64) -> f64 {
    deterministic::confidence_threshold(m, gamma, d, r, kappa)
}

#[pyfunction]
fn required_m_randomized(r: f64, c: f64, gamma: f64) -> u64 {
    randomized::required_m_randomized(r, c, gamma)
}

#[pyfunction]
#[pyo3(signature = (mechanism, generator, *, seed, m, v, beta, c = None, gamma = 0.05, kappa = 1.0, workers = None))]
#[allow(clippy::too_many_arguments)]
fn analyze_deterministic<'py>(
    py: Python<'py>,
    mechanism: &Bound<'py, PyAny>,
    generator: &Bound<'py, PyAny>,
    seed: u64,
    m: u64,
    v: f64,
    beta: f64,
    c: Option<f64>,
    gamma: f64,
    kappa: f64,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mech = self::mechanism(py, mechanism)?;
    let gen = self::generator(py, generator)?;
    let contract = mech.contract();
    let c = c.unwrap_or_else(|| deterministic::confidence_threshold(m, gamma, contract.output_dim, contract.output_radius, kappa));
    let cfg = DetAnalysisConfig { m, v, beta, c, gamma, kappa };
    let exec = executor(workers)?;
    let a = py
        .detach(|| deterministic::analyze_deterministic(&cfg, &*mech, &*gen, seed, &exec))
        .map_err(to_py)?;
    let cov: Vec<Vec<f64>> = a.covariance.row_iter().map(|r| r.iter().copied().collect()).collect();
    to_dict(
        py,
        &serde_json::json!({
            "certificate": a.certificate,
            "noise": a.noise,
            "output_mean": a.mean,
            "output_covariance": cov,
        }),
    )
}

#[pyfunction]
#[pyo3(signature = (mechanism, generator, *, seed, m, tau, v, c, gamma = 0.05, workers = None))]
#[allow(clippy::too_many_arguments)]
fn analyze_randomized<'py>(
    py: Python<'py>,
    mechanism: &Bound<'py, PyAny>,
    generator: &Bound<'py, PyAny>,
    seed: u64,
    m: u64,
    tau: u64,
    v: f64,
    c: f64,
    gamma: f64,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mech = self::mechanism(py, mechanism)?;
    let gen = self::generator(py, generator)?;
    let cfg = RandAnalysisConfig { m, tau, v, c, gamma };
    let exec = executor(workers)?;
    let a = py
        .detach(|| randomized::analyze_randomized(&cfg, &*mech, &*gen, seed, &exec))
        .map_err(to_py)?;
    to_dict(
        py,
        &serde_json::json!({
            "certificate": a.certificate,
            "noise": a.noise,
            "psi_bar": a.psi.mean,
            "psi_std_error": a.psi.std_error(),
        }),
    )
}

/// Verifies a perturbation proposal over `pool`, a list of row matrices.
#[pyfunction]
#[pyo3(signature = (mechanism, pool, *, seed, m, tau1, tau2, c, beta, tau3 = 1, gamma = 0.05, n_mc = 1000, proposal = None, workers = None))]
#[allow(clippy::too_many_arguments)]
fn verify<'py>(
    py: Python<'py>,
    mechanism: &Bound<'py, PyAny>,
    pool: Vec<Vec<Vec<f64>>>,
    seed: u64,
    m: u64,
    tau1: u64,
    tau2: u64,
    c: f64,
    beta: f64,
    tau3: u64,
    gamma: f64,
    n_mc: u64,
    proposal: Option<&Bound<'py, PyAny>>,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mech = self::mechanism(py, mechanism)?;
    let pool = pool
        .iter()
        .map(|rows| Dataset::from_rows(rows, None))
        .collect::<pacest_core::Result<Vec<_>>>()
        .map_err(to_py)?;
    let spec = match proposal {
        Some(p) => from_dict::<ProposalSpec>(py, p)?,
        None => ProposalSpec::Zero,
    };
    let proposal = spec.build(mech.contract().output_dim).map_err(to_py)?;
    let cfg = VerifyConfig { m, tau1, tau2, tau3, c, beta, gamma, n_mc };
    let exec = executor(workers)?;
    let v = py
        .detach(|| verifier::verify_proposal(&cfg, &*proposal, &*mech, &pool, seed, &exec))
        .map_err(to_py)?;
    to_dict(
        py,
        &serde_json::json!({
            "certificate": v.certificate,
            "psi_bar": v.psi_bar(),
            "std_error": v.std_error,
            "max_term": v.max_term,
        }),
    )
}

#[pyfunction]
#[pyo3(signature = (r, d, v, n = None, delta2 = None))]
fn worst_case_noise<'py>(
    py: Python<'py>,
    r: f64,
    d: usize,
    v: f64,
    n: Option<u64>,
    delta2: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    to_dict(py, &core_worst_case(&WorstCaseQuery { r, d, v, n, delta2 }).map_err(to_py)?)
}

#[pyfunction]
fn noise_gap(eigenvalues: Vec<f64>, n: u64, v: f64) -> PyResult<f64> {
    core_noise_gap(&eigenvalues, n, v).map_err(to_py)
}

#[pymodule]
fn pacest(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PacestError", m.py().get_type::<PacestError>())?;
    m.add_class::<PyMechanism>()?;
    m.add_function(wrap_pyfunction!(invert_kl_bound, m)?)?;
    m.add_function(wrap_pyfunction!(pac_bound, m)?)?;
    m.add_function(wrap_pyfunction!(iid_individual_bound, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(required_m_randomized, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_deterministic, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_randomized, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_noise, m)?)?;
    m.add_function(wrap_pyfunction!(noise_gap, m)?)?;
    Ok(())
}
