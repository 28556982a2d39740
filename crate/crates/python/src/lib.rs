//! Python bindings for the spectracontrol library: grids, thick regions,
//! band-limited fields, operator symbols, and the spectral-inequality,
//! dissipation, observability, and null-control probes built on them.
//! Reports cross the boundary as plain dictionaries mirroring the JSON
//! emitted by the CLI.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use spectracontrol::control::{synthesize_control, ControlProblem};
use spectracontrol::grid::{GridSpec, SpectralField};
use spectracontrol::linalg::VectorNorm;
use spectracontrol::propagator::dissipation_probe;
use spectracontrol::symbol::{check_normal_ellipticity, OperatorSymbol};
use spectracontrol::thick::ThickSet;

fn value_error(e: spectracontrol::error::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty_bound(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_py(py)
        }
    })
}

fn report_to_py<T: serde::Serialize>(py: Python<'_>, report: &T) -> PyResult<PyObject> {
    let value = serde_json::to_value(report)
        .map_err(|e| PyValueError::new_err(format!("report serialization failed: {e}")))?;
    json_to_py(py, &value)
}

/// Periodized grid on [0, period)^dim carrying C^value_dim samples.
#[pyclass]
#[derive(Clone)]
struct Grid {
    inner: GridSpec,
}

#[pymethods]
impl Grid {
    #[new]
    #[pyo3(signature = (dim, points, period, value_dim=1, p=2.0))]
    fn new(dim: usize, points: usize, period: f64, value_dim: usize, p: f64) -> PyResult<Self> {
        let inner =
            GridSpec::new(dim, points, period, value_dim, VectorNorm::L2, p).map_err(value_error)?;
        Ok(Grid { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn points(&self) -> usize {
        self.inner.points
    }

    #[getter]
    fn period(&self) -> f64 {
        self.inner.period
    }

    #[getter]
    fn value_dim(&self) -> usize {
        self.inner.value_dim
    }

    #[getter]
    fn nyquist(&self) -> f64 {
        self.inner.nyquist()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.inner.h()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(dim={}, points={}, period={}, value_dim={})",
            self.inner.dim, self.inner.points, self.inner.period, self.inner.value_dim
        )
    }
}

/// Thick region of grid cells with certified (rho, ell) parameters.
#[pyclass]
#[derive(Clone)]
struct Region {
    inner: ThickSet,
}

#[pymethods]
impl Region {
    /// Axis-aligned periodic stripes, self-certified at their exact density.
    #[staticmethod]
    #[pyo3(signature = (grid, on_width, period, axis=0))]
    fn stripes(grid: PyRef<Grid>, on_width: f64, period: f64, axis: usize) -> PyResult<Self> {
        let inner =
            ThickSet::make_stripes(grid.inner, on_width, period, axis).map_err(value_error)?;
        Ok(Region { inner })
    }

    /// Random union of blocks hitting every ell-window at density >= rho.
    #[staticmethod]
    fn random(grid: PyRef<Grid>, rho: f64, ell: Vec<f64>, seed: u64) -> PyResult<Self> {
        let inner = ThickSet::make_random_thick(grid.inner, rho, &ell, seed).map_err(value_error)?;
        Ok(Region { inner })
    }

    /// The whole grid, certified at density 1.
    #[staticmethod]
    fn full(grid: PyRef<Grid>, ell: Vec<f64>) -> PyResult<Self> {
        let inner = ThickSet::full(grid.inner, &ell).map_err(value_error)?;
        Ok(Region { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = ThickSet::load(std::path::Path::new(path)).map_err(value_error)?;
        Ok(Region { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(value_error)
    }

    /// Sweeps every ell-window translate and stores the verified density.
    fn certify(&mut self, ell: Vec<f64>) -> PyResult<f64> {
        self.inner.certify(&ell).map_err(value_error)
    }

    #[getter]
    fn density(&self) -> f64 {
        self.inner.density()
    }

    #[getter]
    fn count(&self) -> usize {
        self.inner.count()
    }

    /// Certified thickness parameter, None before certification.
    #[getter]
    fn rho(&self) -> Option<f64> {
        self.inner.certified().map(|c| c.rho)
    }

    fn __repr__(&self) -> String {
        format!("Region(count={}, density={:.4})", self.inner.count(), self.inner.density())
    }
}

/// Grid field with spectral coefficients and an optional band certificate.
#[pyclass]
#[derive(Clone)]
struct Field {
    inner: SpectralField,
}

#[pymethods]
impl Field {
    /// Gaussian coefficients on the open band, normalized to unit expected
    /// sample variance.
    #[staticmethod]
    #[pyo3(signature = (grid, band, seed, stream=0))]
    fn random_band_limited(
        grid: PyRef<Grid>,
        band: Vec<f64>,
        seed: u64,
        stream: u64,
    ) -> PyResult<Self> {
        let inner = SpectralField::random_band_limited(grid.inner, &band, seed, stream)
            .map_err(value_error)?;
        Ok(Field { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = SpectralField::load(std::path::Path::new(path)).map_err(value_error)?;
        Ok(Field { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(value_error)
    }

    /// L^p norm; defaults to the grid's configured exponent.
    #[pyo3(signature = (p=None))]
    fn norm(&self, p: Option<f64>) -> f64 {
        match p {
            Some(p) => self.inner.lp_norm_with(p),
            None => self.inner.lp_norm(),
        }
    }

    /// Band certificate, None when the field is not known band-limited.
    #[getter]
    fn band(&self) -> Option<Vec<f64>> {
        self.inner.band().map(|b| b.to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Field(norm={:.6e}, band={:?})", self.inner.lp_norm(), self.inner.band())
    }
}

/// Matrix-valued polynomial symbol a(xi) = sum_alpha a_alpha xi^alpha.
#[pyclass]
#[derive(Clone)]
struct Symbol {
    inner: OperatorSymbol,
}

#[pymethods]
impl Symbol {
    /// The |xi|^2 Laplacian symbol on C^value_dim.
    #[staticmethod]
    #[pyo3(signature = (dim, value_dim=1))]
    fn heat(dim: usize, value_dim: usize) -> Self {
        Symbol { inner: OperatorSymbol::heat(dim, value_dim) }
    }

    /// Parse the JSON declaration {"m":…, "d":…, "n":…, "terms":[…]}.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = OperatorSymbol::from_json(text).map_err(value_error)?;
        Ok(Symbol { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = OperatorSymbol::load(std::path::Path::new(path)).map_err(value_error)?;
        Ok(Symbol { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(value_error)
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn value_dim(&self) -> usize {
        self.inner.value_dim()
    }

    /// Samples normal ellipticity and returns the full report as a dict
    /// (pass, kappa, sector, perturbation, witness, sample counts).
    #[pyo3(signature = (sphere_samples=None, lambda_samples=16))]
    fn check_ellipticity(
        &self,
        py: Python<'_>,
        sphere_samples: Option<usize>,
        lambda_samples: usize,
    ) -> PyResult<PyObject> {
        let spheres = sphere_samples.unwrap_or(256 * self.inner.dim().max(2));
        let report = check_normal_ellipticity(&self.inner, VectorNorm::L2, spheres, lambda_samples)
            .map_err(value_error)?;
        report_to_py(py, &report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Symbol(order={}, dim={}, value_dim={})",
            self.inner.order(),
            self.inner.dim(),
            self.inner.value_dim()
        )
    }
}

/// Resolvent sector constants (M, phi, mu) derived from kappa.
#[pyfunction]
fn sector(py: Python<'_>, kappa: f64) -> PyResult<PyObject> {
    report_to_py(py, &spectracontrol::symbol::derived_sector(kappa))
}

/// Restriction ratio ||1_E f||_p / ||f||_p with the fitted thickness
/// exponent; the field needs a band and the region a certificate.
#[pyfunction]
fn ls_ratio(py: Python<'_>, field: PyRef<Field>, region: PyRef<Region>) -> PyResult<PyObject> {
    let probe = spectracontrol::ls::ls_ratio(&field.inner, &region.inner).map_err(value_error)?;
    report_to_py(py, &probe)
}

/// Derivative bound record for one multi-index alpha.
#[pyfunction]
fn bernstein(py: Python<'_>, field: PyRef<Field>, alpha: Vec<usize>) -> PyResult<PyObject> {
    let record =
        spectracontrol::ls::bernstein_check(&field.inner, &alpha).map_err(value_error)?;
    report_to_py(py, &record)
}

/// Fits ||(I - P_lambda) V_t|| <= c1 exp(-c2 t lambda^m) over the grids.
#[pyfunction]
#[pyo3(signature = (symbol, grid, lambda_grid, t_grid, ensemble=32, seed=0))]
fn dissipation(
    py: Python<'_>,
    symbol: PyRef<Symbol>,
    grid: PyRef<Grid>,
    lambda_grid: Vec<f64>,
    t_grid: Vec<f64>,
    ensemble: usize,
    seed: u64,
) -> PyResult<PyObject> {
    let fit = dissipation_probe(&symbol.inner, grid.inner, &lambda_grid, &t_grid, ensemble, seed)
        .map_err(value_error)?;
    report_to_py(py, &fit)
}

/// Empirical observability constant over a random ensemble.
#[pyfunction]
#[pyo3(signature = (symbol, region, horizon, state_exponent=2.0, time_exponent=2.0, ensemble=32, nodes=128, seed=0))]
#[allow(clippy::too_many_arguments)]
fn observability(
    py: Python<'_>,
    symbol: PyRef<Symbol>,
    region: PyRef<Region>,
    horizon: f64,
    state_exponent: f64,
    time_exponent: f64,
    ensemble: usize,
    nodes: usize,
    seed: u64,
) -> PyResult<PyObject> {
    let estimate = spectracontrol::control::observability_probe(
        &symbol.inner,
        &region.inner,
        horizon,
        state_exponent,
        time_exponent,
        ensemble,
        nodes,
        seed,
    )
    .map_err(value_error)?;
    report_to_py(py, &estimate)
}

/// Runs the staged null-control synthesis and returns the outcome dict
/// (success, initial_norm, terminal_norm, cost, stages).
#[pyfunction]
#[pyo3(signature = (symbol, y0, region, horizon, lambda0, epsilon=1e-6, time_steps=16, time_exponent=2.0))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    py: Python<'_>,
    symbol: PyRef<Symbol>,
    y0: PyRef<Field>,
    region: PyRef<Region>,
    horizon: f64,
    lambda0: f64,
    epsilon: f64,
    time_steps: usize,
    time_exponent: f64,
) -> PyResult<PyObject> {
    let problem = ControlProblem {
        symbol: symbol.inner.clone(),
        y0: y0.inner.clone(),
        set: region.inner.clone(),
        horizon,
        time_exponent,
        epsilon,
        lambda0,
        time_steps,
    };
    let outcome = synthesize_control(&problem).map_err(value_error)?;
    let dict = PyDict::new_bound(py);
    dict.set_item("success", outcome.success)?;
    dict.set_item("initial_norm", outcome.initial_norm)?;
    dict.set_item("terminal_norm", outcome.terminal_norm)?;
    dict.set_item("epsilon", outcome.epsilon)?;
    dict.set_item("cost", outcome.cost)?;
    dict.set_item("approximate", outcome.approximate)?;
    dict.set_item("stages", report_to_py(py, &outcome.stages)?)?;
    dict.set_item("controls", outcome.controls.len())?;
    Ok(dict.into_py(py))
}

#[pymodule]
fn spectracontrol_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Grid>()?;
    m.add_class::<Region>()?;
    m.add_class::<Field>()?;
    m.add_class::<Symbol>()?;
    m.add_function(wrap_pyfunction!(sector, m)?)?;
    m.add_function(wrap_pyfunction!(ls_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(bernstein, m)?)?;
    m.add_function(wrap_pyfunction!(dissipation, m)?)?;
    m.add_function(wrap_pyfunction!(observability, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
