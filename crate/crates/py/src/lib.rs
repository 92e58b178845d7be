//! Python bindings for the homctl controller-synthesis library.
//!
//! The module mirrors the Rust crate's main surfaces: the tangent-kernel
//! linear algebra, Lie-derivative and decoupling queries against the
//! bundled plants, the induction-motor parameter derivation, the PI
//! regulator, and full scenario simulation returning the trace as plain
//! column lists.
//!
//! Matrices cross the boundary as lists of row lists and vectors as flat
//! lists, so no array library is required on either side; `numpy.array`
//! and `pandas.DataFrame` both accept the shapes directly.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use homctl::scenario::csv_header;
use homctl::{
    plants, AffineSystem, Field, KernelError, MotorParams, RunError, Scenario, ScenarioError,
    SimTrace,
};

// ---------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("matrix needs at least one row"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(PyValueError::new_err("matrix needs at least one column"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("matrix rows have unequal lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn matrix_out(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn kernel_err(e: KernelError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn scenario_err(e: ScenarioError) -> PyErr {
    match e {
        ScenarioError::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Config(msg) => PyValueError::new_err(format!("invalid configuration: {msg}")),
        RunError::Failed(failure) => PyRuntimeError::new_err(failure.to_string()),
    }
}

fn plant_by_name(name: &str) -> PyResult<AffineSystem> {
    plants::by_name(name, &MotorParams::table()).ok_or_else(|| {
        let known: Vec<&str> = plants::catalog().iter().map(|(n, _)| *n).collect();
        PyValueError::new_err(format!(
            "unknown plant `{name}` (bundled: {})",
            known.join(", ")
        ))
    })
}

fn check_state(sys: &AffineSystem, x: &[f64]) -> PyResult<DVector<f64>> {
    if x.len() != sys.state_dim() {
        return Err(PyValueError::new_err(format!(
            "plant `{}` has {} states, got {}",
            sys.name(),
            sys.state_dim(),
            x.len()
        )));
    }
    Ok(DVector::from_row_slice(x))
}

// ---------------------------------------------------------------------
// Tangent-kernel linear algebra
// ---------------------------------------------------------------------

/// Moore-Penrose pseudoinverse; singular values at or below
/// `rank_tol * sigma_max` are treated as zero.
#[pyfunction]
#[pyo3(signature = (a, rank_tol = 1e-9))]
fn pseudoinverse(a: Vec<Vec<f64>>, rank_tol: f64) -> PyResult<Vec<Vec<f64>>> {
    let a = to_matrix(a)?;
    let p = homctl::pseudoinverse(&a, rank_tol).map_err(kernel_err)?;
    Ok(matrix_out(&p))
}

/// Number of singular values above `rank_tol * sigma_max`.
#[pyfunction]
#[pyo3(signature = (a, rank_tol = 1e-9))]
fn numerical_rank(a: Vec<Vec<f64>>, rank_tol: f64) -> PyResult<usize> {
    let a = to_matrix(a)?;
    homctl::numerical_rank(&a, rank_tol).map_err(kernel_err)
}

/// Unit kernel vector of a full-row-rank `m x (m+1)` matrix, oriented so
/// the matrix stacked on the tangent has positive determinant.
#[pyfunction]
#[pyo3(signature = (a, rank_tol = 1e-9))]
fn oriented_nullspace_tangent(a: Vec<Vec<f64>>, rank_tol: f64) -> PyResult<Vec<f64>> {
    let a = to_matrix(a)?;
    let tau = homctl::oriented_nullspace_tangent(&a, rank_tol).map_err(kernel_err)?;
    Ok(tau.iter().copied().collect())
}

/// Tangent solution of `A * tau_tilde = b`: returns
/// `(tau, tau_bar, alpha * tau + tau_bar)`.
#[pyfunction]
#[pyo3(signature = (a, b, alpha = 1.0, rank_tol = 1e-9))]
fn augmented_tangent(
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    alpha: f64,
    rank_tol: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let a = to_matrix(a)?;
    let b = DVector::from_row_slice(&b);
    let sol = homctl::augmented_tangent(&a, &b, alpha, rank_tol).map_err(kernel_err)?;
    let flat = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
    let combined = sol.combined();
    Ok((flat(&sol.tau), flat(&sol.tau_bar), flat(&combined)))
}

// ---------------------------------------------------------------------
// Plant queries
// ---------------------------------------------------------------------

/// The bundled plants as `(name, description)` pairs.
#[pyfunction]
fn list_plants() -> Vec<(String, String)> {
    plants::catalog()
        .iter()
        .map(|(n, d)| (n.to_string(), d.to_string()))
        .collect()
}

/// Lie derivative of output `output` along the drift (default) or along
/// input field `input`, applied after `order - 1` drift derivatives.
/// `order = 0` returns the output itself.
#[pyfunction]
#[pyo3(signature = (plant, x, output, order, input = None))]
fn lie_derivative(
    plant: &str,
    x: Vec<f64>,
    output: usize,
    order: usize,
    input: Option<usize>,
) -> PyResult<f64> {
    let sys = plant_by_name(plant)?;
    let x = check_state(&sys, &x)?;
    if output >= sys.channels() {
        return Err(PyValueError::new_err(format!(
            "plant `{plant}` has {} outputs, got index {output}",
            sys.channels()
        )));
    }
    let field = match input {
        None => Field::Drift,
        Some(i) if i < sys.channels() => Field::Input(i),
        Some(i) => {
            return Err(PyValueError::new_err(format!(
                "plant `{plant}` has {} inputs, got index {i}",
                sys.channels()
            )));
        }
    };
    Ok(sys.lie_derivative(field, output, &x, order))
}

/// Decoupling matrix `A(x)` and drift vector `b(x)` of the plant's
/// input-output linearization at `x`, as `(rows, b)`.
#[pyfunction]
fn decoupling_matrix(plant: &str, x: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let sys = plant_by_name(plant)?;
    let x = check_state(&sys, &x)?;
    let (a, b) = sys.decoupling_matrix(&x);
    Ok((matrix_out(&a), b.iter().copied().collect()))
}

// ---------------------------------------------------------------------
// Induction-motor parameters
// ---------------------------------------------------------------------

/// Equivalent-circuit constants derived from nameplate values.  Starts
/// from the bundled 4 kW machine and applies `overrides` by field name;
/// returns a dict with `tau_r`, `l1`, `r1`, `tau_1`, `mu`, `beta`.
#[pyfunction]
#[pyo3(signature = (overrides = None))]
fn derive_motor_params<'py>(
    py: Python<'py>,
    overrides: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut mp = MotorParams::table();
    if let Some(ov) = overrides {
        for (key, value) in ov.iter() {
            let key: String = key.extract()?;
            let value: f64 = value.extract()?;
            match key.as_str() {
                "rated_power" => mp.rated_power = value,
                "msr" => mp.msr = value,
                "rs" => mp.rs = value,
                "rr" => mp.rr = value,
                "ls" => mp.ls = value,
                "lr" => mp.lr = value,
                "inertia" => mp.inertia = value,
                "pole_pairs" => mp.pole_pairs = value,
                "load_torque" => mp.load_torque = value,
                "phi_floor" => mp.phi_floor = value,
                other => {
                    return Err(PyValueError::new_err(format!(
                        "unknown motor parameter `{other}`"
                    )));
                }
            }
        }
    }
    if let Err(problem) = mp.validate() {
        return Err(PyValueError::new_err(problem));
    }
    let dp = homctl::derive_params(&mp);
    let out = PyDict::new(py);
    out.set_item("tau_r", dp.tau_r)?;
    out.set_item("l1", dp.l1)?;
    out.set_item("r1", dp.r1)?;
    out.set_item("tau_1", dp.tau_1)?;
    out.set_item("mu", dp.mu)?;
    out.set_item("beta", dp.beta)?;
    Ok(out)
}

// ---------------------------------------------------------------------
// PI regulator
// ---------------------------------------------------------------------

/// Proportional-integral regulator with optional symmetric output limit
/// and conditional anti-windup (the integral freezes while the output is
/// clipped).
#[pyclass(name = "PiRegulator")]
struct PyPiRegulator {
    inner: homctl::PiRegulator,
}

#[pymethods]
impl PyPiRegulator {
    #[new]
    #[pyo3(signature = (kp, ki, limit = None))]
    fn new(kp: f64, ki: f64, limit: Option<f64>) -> Self {
        let inner = match limit {
            Some(l) => homctl::PiRegulator::with_limit(kp, ki, l),
            None => homctl::PiRegulator::new(kp, ki),
        };
        PyPiRegulator { inner }
    }

    /// Advances the integral by `error * dt` and returns the regulator
    /// output.
    fn update(&mut self, error: f64, dt: f64) -> f64 {
        self.inner.update(error, dt)
    }

    /// Clears the integral state.
    fn reset(&mut self) {
        self.inner.reset();
    }

    #[getter]
    fn kp(&self) -> f64 {
        self.inner.kp
    }

    #[getter]
    fn ki(&self) -> f64 {
        self.inner.ki
    }

    #[getter]
    fn integral(&self) -> f64 {
        self.inner.integral
    }

    fn __repr__(&self) -> String {
        format!(
            "PiRegulator(kp={}, ki={}, integral={}, limit={:?})",
            self.inner.kp, self.inner.ki, self.inner.integral, self.inner.output_limit
        )
    }
}

// ---------------------------------------------------------------------
// Scenario simulation
// ---------------------------------------------------------------------

fn trace_dict<'py>(py: Python<'py>, trace: &SimTrace) -> PyResult<Bound<'py, PyDict>> {
    let (n, m) = (trace.state_dim, trace.channels);
    let header = csv_header(n, m);
    let names: Vec<&str> = header.split(',').collect();
    let rows = &trace.rows;
    let columns = PyDict::new(py);
    let mut at = 0usize;
    let push = |name: &str, values: Vec<f64>| columns.set_item(name, values);
    push(names[at], rows.iter().map(|r| r.t).collect())?;
    at += 1;
    for i in 0..n {
        push(names[at + i], rows.iter().map(|r| r.x[i]).collect())?;
    }
    at += n;
    for j in 0..m {
        push(names[at + j], rows.iter().map(|r| r.y[j]).collect())?;
    }
    at += m;
    for j in 0..m {
        push(names[at + j], rows.iter().map(|r| r.u[j]).collect())?;
    }
    at += m;
    push(names[at], rows.iter().map(|r| r.lambda).collect())?;
    push(names[at + 1], rows.iter().map(|r| r.lambda_dot).collect())?;
    at += 2;
    for j in 0..m {
        push(names[at + j], rows.iter().map(|r| r.h[j]).collect())?;
    }
    at += m;
    let modes: Vec<String> = rows.iter().map(|r| r.mode.to_string()).collect();
    columns.set_item(names[at], modes)?;
    let sats: Vec<u8> = rows.iter().map(|r| u8::from(r.saturated)).collect();
    columns.set_item(names[at + 1], sats)?;

    let out = PyDict::new(py);
    out.set_item("plant", &trace.plant)?;
    out.set_item("columns", columns)?;
    Ok(out)
}

/// Parses scenario text, runs the simulation, and returns
/// `{"plant": str, "columns": {name: list, ...}}` with one entry per
/// trace column (`t`, `x1..xn`, `y1..ym`, `u1..um`, `lambda`,
/// `lambda_dot`, `H1..Hm`, `mode`, `sat`).
#[pyfunction]
fn simulate<'py>(py: Python<'py>, scenario_text: &str) -> PyResult<Bound<'py, PyDict>> {
    let sc = Scenario::parse_str(scenario_text).map_err(scenario_err)?;
    let outcome = sc.run().map_err(run_err)?;
    trace_dict(py, &outcome.trace)
}

/// [`simulate`] for a scenario file on disk.
#[pyfunction]
fn simulate_file<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyDict>> {
    let sc = Scenario::parse_file(path).map_err(scenario_err)?;
    let outcome = sc.run().map_err(run_err)?;
    trace_dict(py, &outcome.trace)
}

/// Canonical text form of a scenario (round-trips through the parser).
#[pyfunction]
fn canonical_scenario(scenario_text: &str) -> PyResult<String> {
    let sc = Scenario::parse_str(scenario_text).map_err(scenario_err)?;
    Ok(sc.emit())
}

#[pymodule]
fn homctl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pseudoinverse, m)?)?;
    m.add_function(wrap_pyfunction!(numerical_rank, m)?)?;
    m.add_function(wrap_pyfunction!(oriented_nullspace_tangent, m)?)?;
    m.add_function(wrap_pyfunction!(augmented_tangent, m)?)?;
    m.add_function(wrap_pyfunction!(list_plants, m)?)?;
    m.add_function(wrap_pyfunction!(lie_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(decoupling_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(derive_motor_params, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_file, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_scenario, m)?)?;
    m.add_class::<PyPiRegulator>()?;
    Ok(())
}
