use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qaoa_featsel::classify::{evaluate_selection, ForestConfig};
use qaoa_featsel::dataset::{load_dataset as load, split_train_test, DataFormat, SplitSpec, TabularDataset};
use qaoa_featsel::qaoa::{self, build_diagonal_cost, QaoaConfig, QaoaParams, ShotConfig};
use qaoa_featsel::qubo::{
    apply_cardinality_penalty, qubo_from_text, qubo_to_ising, qubo_to_text, QuboProblem,
    SelectionMask,
};
use qaoa_featsel::runner::{self, build_problem, ExperimentConfig, ResultRow, SolverKind};
use qaoa_featsel::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Load { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn mask(bits: &str) -> PyResult<SelectionMask> {
    SelectionMask::from_bitstring(bits).map_err(to_py)
}

/// Feature matrix with an encoded class target.
#[pyclass(name = "Dataset", module = "qaoa_featsel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: TabularDataset,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names().to_vec()
    }

    #[getter]
    fn target(&self) -> Vec<usize> {
        self.inner.target().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[pyo3(signature = (train_fraction = 0.7, seed = 0))]
    fn split(&self, train_fraction: f64, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
        let (train, test) = split_train_test(&self.inner, &SplitSpec { train_fraction, seed }).map_err(to_py)?;
        Ok((PyDataset { inner: train }, PyDataset { inner: test }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_samples={}, n_features={}, n_classes={})",
            self.inner.n_samples(),
            self.inner.n_features(),
            self.inner.n_classes()
        )
    }
}

#[pyfunction]
fn load_dataset(path: &str) -> PyResult<PyDataset> {
    let path = std::path::Path::new(path);
    let inner = load(path, DataFormat::from_path(path)).map_err(to_py)?;
    Ok(PyDataset { inner })
}

/// Symmetric QUBO matrix plus offset.
#[pyclass(name = "Qubo", module = "qaoa_featsel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyQubo {
    inner: QuboProblem,
}

#[pymethods]
impl PyQubo {
    #[new]
    #[pyo3(signature = (matrix, offset = 0.0))]
    fn new(matrix: Vec<Vec<f64>>, offset: f64) -> PyResult<Self> {
        let n = matrix.len();
        if matrix.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("matrix must be square"));
        }
        let q = ndarray::Array2::from_shape_fn((n, n), |(i, j)| matrix[i][j]);
        Ok(Self {
            inner: QuboProblem::new(q, offset).map_err(to_py)?,
        })
    }

    /// Build from a dataset: method is `correlation`, `mutual_info` or `boosting`.
    #[staticmethod]
    #[pyo3(signature = (dataset, method, n_bins = 10, lam = 0.5))]
    fn from_dataset(dataset: &PyDataset, method: &str, n_bins: usize, lam: f64) -> PyResult<Self> {
        let method = method.parse().map_err(to_py)?;
        let inner = build_problem(&dataset.inner, method, n_bins, lam).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: qubo_from_text(text).map_err(to_py)?,
        })
    }

    fn to_text(&self) -> String {
        qubo_to_text(&self.inner)
    }

    fn penalized(&self, k: usize, alpha: f64) -> PyResult<Self> {
        Ok(Self {
            inner: apply_cardinality_penalty(&self.inner, k, alpha).map_err(to_py)?,
        })
    }

    /// Energy of a bitstring mask (character i is x_i).
    fn energy(&self, bits: &str) -> PyResult<f64> {
        let m = mask(bits)?;
        qaoa_featsel::qubo::qubo_energy(&self.inner, &m).map_err(to_py)
    }

    /// `(h, J, constant)` with J as a dense upper-triangular matrix.
    fn to_ising(&self) -> (Vec<f64>, Vec<Vec<f64>>, f64) {
        let ising = qubo_to_ising(&self.inner);
        let j = ising.j.rows().into_iter().map(|r| r.to_vec()).collect();
        (ising.h, j, ising.constant)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.inner.offset()
    }

    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        self.inner.q().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Qubo(n={}, offset={})", self.inner.n(), self.inner.offset())
    }
}

/// Solve with `exhaustive`, `sa`, `sd`, `tabu` or `qaoa`; returns a dict.
#[pyfunction]
#[pyo3(signature = (qubo, solver, seed = 0, depth = 1, shots = 100))]
fn solve<'py>(
    py: Python<'py>,
    qubo: &PyQubo,
    solver: &str,
    seed: u64,
    depth: usize,
    shots: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let solver: SolverKind = solver.parse().map_err(to_py)?;
    let cfg = ExperimentConfig {
        shots,
        ..Default::default()
    };
    let problem = qubo.inner.clone();
    let report = py
        .detach(move || runner::solve_with(&problem, solver, &cfg, depth, seed))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("mask", report.best_mask.to_bitstring())?;
    out.set_item("energy", report.best_energy)?;
    out.set_item("evaluations", report.evaluations)?;
    out.set_item("solver", report.solver_name)?;
    out.set_item("seed", report.seed)?;
    Ok(out)
}

/// Full variational loop; returns mask, energy, angles and the final samples.
#[pyfunction]
#[pyo3(signature = (qubo, depth, shots = 100, seed = 0, max_evals = 500))]
fn run_qaoa<'py>(
    py: Python<'py>,
    qubo: &PyQubo,
    depth: usize,
    shots: usize,
    seed: u64,
    max_evals: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = QaoaConfig::new(depth, ShotConfig { shots, seed });
    cfg.optimizer.max_evals = max_evals;
    let problem = qubo.inner.clone();
    let report = py.detach(move || qaoa::run_qaoa(&problem, &cfg, seed)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("mask", report.solve.best_mask.to_bitstring())?;
    out.set_item("energy", report.solve.best_energy)?;
    out.set_item("gamma", report.best_params.gamma)?;
    out.set_item("beta", report.best_params.beta)?;
    out.set_item("best_objective", report.best_objective)?;
    out.set_item("evaluations", report.solve.evaluations)?;
    out.set_item("shots_used", report.shots_used)?;
    out.set_item("final_samples", report.final_samples)?;
    Ok(out)
}

/// Statevector after the circuit with the given angles.
#[pyfunction]
fn evolve(qubo: &PyQubo, gamma: Vec<f64>, beta: Vec<f64>) -> PyResult<Vec<Complex64>> {
    let params = QaoaParams::new(gamma, beta).map_err(to_py)?;
    let cost = build_diagonal_cost(&qubo.inner).map_err(to_py)?;
    Ok(qaoa::evolve(&cost, &params).amplitudes)
}

/// Test-set accuracy of random forests trained on the selected features.
#[pyfunction]
#[pyo3(signature = (dataset, mask_bits, repeats = 5, seed = 0, n_trees = 100, train_fraction = 0.7))]
fn evaluate<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    mask_bits: &str,
    repeats: usize,
    seed: u64,
    n_trees: usize,
    train_fraction: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = mask(mask_bits)?;
    let forest = ForestConfig {
        n_trees,
        seed,
        ..Default::default()
    };
    let split = SplitSpec { train_fraction, seed };
    let d = dataset.inner.clone();
    let report = py
        .detach(move || evaluate_selection(&d, &m, &split, repeats, &forest))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("mean_accuracy", report.mean_accuracy)?;
    out.set_item("std_accuracy", report.std_accuracy)?;
    out.set_item("per_repeat", report.per_repeat)?;
    out.set_item("mask", report.mask.to_bitstring())?;
    Ok(out)
}

fn row_dict<'py>(py: Python<'py>, r: &ResultRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", r.method.name())?;
    d.set_item("dataset", &r.dataset)?;
    d.set_item("n", r.n)?;
    d.set_item("k", r.k)?;
    d.set_item("solver", r.solver.name())?;
    d.set_item("depth", r.depth)?;
    d.set_item("cv_score", r.cv_score)?;
    d.set_item("mean_accuracy", r.mean_accuracy)?;
    d.set_item("std_accuracy", r.std_accuracy)?;
    d.set_item("selected_mask", r.selected_mask.to_bitstring())?;
    d.set_item("qubo_energy", r.qubo_energy)?;
    d.set_item("wall_time", r.wall_time)?;
    Ok(d)
}

/// Run an experiment grid from a TOML config string. Returns
/// `(rows, depth_rows, failures)`; writes the result files when `out_dir` is set.
#[pyfunction]
#[pyo3(signature = (config_toml, out_dir = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_toml: &str,
    out_dir: Option<String>,
) -> PyResult<(Vec<Bound<'py, PyDict>>, Vec<Bound<'py, PyDict>>, Vec<String>)> {
    let cfg = ExperimentConfig::from_toml_str(config_toml).map_err(to_py)?;
    let out = py
        .detach(|| -> qaoa_featsel::Result<_> {
            let out = runner::run_experiment(&cfg)?;
            if let Some(dir) = &out_dir {
                runner::write_outputs(&out, &cfg, dir)?;
            }
            Ok(out)
        })
        .map_err(to_py)?;
    let rows = out.rows.iter().map(|r| row_dict(py, r)).collect::<PyResult<_>>()?;
    let depth_rows = out.depth_rows.iter().map(|r| row_dict(py, r)).collect::<PyResult<_>>()?;
    let failures = out
        .failures
        .iter()
        .map(|f| format!("{}/{}: {}", f.dataset, f.method, f.error))
        .collect();
    Ok((rows, depth_rows, failures))
}

#[pymodule]
#[pyo3(name = "qaoa_featsel")]
fn qaoa_featsel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyQubo>()?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_qaoa, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
