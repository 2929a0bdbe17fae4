//! Python bindings: Hamiltonians, the frustration-free decision, ground
//! manifolds, exact diagonalization and variational estimates.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ffspin::cli::{write_sweep_csv, HamiltonianFile};
use ffspin::groundspace::{GroundOptions, GroundSpace as CoreGroundSpace};
use ffspin::model::{build_lattice, named_model, normalize_terms, HamiltonianSpec, Observable, SpinSystem};
use ffspin::numerics::{CMatrix, C64};
use ffspin::oracle::{exact_ground, OracleOptions};
use ffspin::reduction::{reduce, ReduceOptions, ReductionOutcome};
use ffspin::variational::{estimate as core_estimate, lambda_sweep, Family, Method, SweepOptions};
use ffspin::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Parse(_) | Error::Validation { .. } | Error::InvalidSystem(_) | Error::SiteOutOfRange { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<C64>>, dim: usize) -> PyResult<CMatrix> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err(format!("expected a {dim}x{dim} matrix")));
    }
    Ok(CMatrix::from_vec(dim, dim, rows.into_iter().flatten().collect()))
}

/// Parses `[(coeff, "Z0 Z1"), ...]` into an observable.
fn observable(terms: Vec<(C64, String)>) -> PyResult<Observable> {
    let mut obs = Observable { terms: vec![] };
    for (c, s) in terms {
        obs = obs.add(Observable::parse_string(c, &s).map_err(err)?);
    }
    Ok(obs)
}

/// A two-spin Hamiltonian on a spin system.
#[pyclass(name = "Hamiltonian", module = "pyffspin")]
pub struct Hamiltonian {
    spec: HamiltonianSpec,
}

#[pymethods]
impl Hamiltonian {
    /// Empty Hamiltonian on `n_sites` spins with the given edges.
    #[new]
    fn new(n_sites: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(Self { spec: HamiltonianSpec::new(SpinSystem::new(n_sites, edges).map_err(err)?) })
    }

    /// Named model (`xxz`, `tfi`, `heisenberg_ferro`, `singlet_sum`) on a lattice
    /// (`chain`, `square_torus`, `trigonal_torus`).
    #[staticmethod]
    #[pyo3(signature = (model, lattice, dims, lam = 0.0))]
    fn named(model: &str, lattice: &str, dims: Vec<usize>, lam: f64) -> PyResult<Self> {
        let dims = ffspin::cli::lattice_dims(&dims).map_err(err)?;
        let sys = build_lattice(lattice.parse().map_err(err)?, dims).map_err(err)?;
        Ok(Self { spec: named_model(model.parse().map_err(err)?, sys, lam) })
    }

    /// Loads the JSON file format used by the command-line tool.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { spec: HamiltonianFile::parse(text).and_then(|f| f.to_spec()).map_err(err)? })
    }

    /// Explicit-form JSON (the constant shift is not stored).
    fn to_json(&self) -> String {
        HamiltonianFile::explicit(&self.spec).to_json()
    }

    /// Adds a 4x4 term on `(a, b)` (rows indexed by `2 s_a + s_b`).
    fn add_two_spin(&mut self, a: usize, b: usize, h: Vec<Vec<C64>>) -> PyResult<()> {
        self.spec.add_two_spin(a, b, matrix(h, 4)?).map_err(err)
    }

    fn add_single_spin(&mut self, v: usize, h: Vec<Vec<C64>>) -> PyResult<()> {
        self.spec.add_single_spin(v, matrix(h, 2)?).map_err(err)
    }

    #[getter]
    fn n_sites(&self) -> usize {
        self.spec.n_sites()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.spec.system.edges().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Hamiltonian(n_sites={}, terms={})", self.spec.n_sites(), self.spec.two_spin.len())
    }
}

/// Decides frustration-freeness. Returns a dict with `frustration_free`,
/// `ground_dimension`, `n_c`, `components` and `depth`.
#[pyfunction]
#[pyo3(signature = (h, tol = None))]
fn check<'py>(py: Python<'py>, h: &Hamiltonian, tol: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let mut opts = ReduceOptions::default();
    if let Some(t) = tol {
        opts.tol = t;
    }
    let spec = normalize_terms(&h.spec).map_err(err)?;
    let out = PyDict::new(py);
    match reduce(&spec, &opts).map_err(err)? {
        ReductionOutcome::Frustrated { network, .. } => {
            out.set_item("frustration_free", false)?;
            out.set_item("ground_dimension", 0)?;
            out.set_item("depth", network.depth())?;
        }
        ReductionOutcome::CompleteHomogeneous(c) => {
            out.set_item("frustration_free", true)?;
            out.set_item("ground_dimension", c.ground_dimension())?;
            out.set_item("n_c", c.n_c())?;
            out.set_item("components", c.components.len())?;
            out.set_item("depth", c.network.depth())?;
        }
    }
    Ok(out)
}

/// Ground manifold of a frustration-free Hamiltonian.
#[pyclass(name = "GroundSpace", module = "pyffspin")]
pub struct GroundSpace {
    inner: CoreGroundSpace,
}

#[pymethods]
impl GroundSpace {
    /// Raises `RuntimeError` when `h` is frustrated.
    #[new]
    fn new(h: &Hamiltonian) -> PyResult<Self> {
        Ok(Self { inner: CoreGroundSpace::build(&h.spec, &GroundOptions::default()).map_err(err)? })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.model.ground_dimension()
    }

    #[getter]
    fn n_c(&self) -> usize {
        self.inner.outcome.n_c()
    }

    /// Maximal-mixture average of `Σ c·P` for `terms = [(c, "Z0 Z1"), ...]`.
    fn expectation(&self, terms: Vec<(C64, String)>) -> PyResult<f64> {
        self.inner.expectation(&observable(terms)?).map_err(err)
    }

    /// Spanning (non-orthogonal) kernel vectors on the original sites.
    fn basis_states(&self) -> PyResult<Vec<Vec<C64>>> {
        self.inner.basis_states().map_err(err)
    }
}

/// `(E0, degeneracy, lowest energies)` by exact diagonalization.
#[pyfunction]
#[pyo3(signature = (h, k = 1))]
fn exact(h: &Hamiltonian, k: usize) -> PyResult<(f64, usize, Vec<f64>)> {
    let g = exact_ground(&h.spec, k, &OracleOptions::default()).map_err(err)?;
    Ok((g.energy, g.degeneracy, g.energies))
}

/// One estimate: `method` is `symmetric`, `product`, `rotated`, `anderson`
/// or `ed`. Returns a dict with `energy`, `bound_type` and observables.
#[pyfunction]
#[pyo3(signature = (h, method, seed = 0))]
fn estimate<'py>(py: Python<'py>, h: &Hamiltonian, method: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let method: Method = method.parse().map_err(err)?;
    let r = core_estimate(&h.spec, method, &SweepOptions { seed, ..Default::default() }).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("method", r.method.name())?;
    out.set_item("energy", r.energy)?;
    out.set_item("bound_type", r.bound.name())?;
    out.set_item("ground_dim", r.ground_dim)?;
    for (k, v) in &r.observables {
        out.set_item(k, v)?;
    }
    Ok(out)
}

/// λ sweep of a named model, returned as CSV text.
#[pyfunction]
#[pyo3(signature = (model, lattice, dims, lambdas, methods, seed = 0))]
fn sweep(
    model: &str,
    lattice: &str,
    dims: Vec<usize>,
    lambdas: Vec<f64>,
    methods: Vec<String>,
    seed: u64,
) -> PyResult<String> {
    let family = Family {
        model: model.parse().map_err(err)?,
        lattice: lattice.parse().map_err(err)?,
        dims: ffspin::cli::lattice_dims(&dims).map_err(err)?,
    };
    let methods: Vec<Method> = methods.iter().map(|m| m.parse()).collect::<Result<_, _>>().map_err(err)?;
    let rows = lambda_sweep(&family, &lambdas, &methods, &SweepOptions { seed, ..Default::default() });
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows, false).map_err(err)?;
    Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
}

#[pymodule]
fn pyffspin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Hamiltonian>()?;
    m.add_class::<GroundSpace>()?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(exact, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
