//! Python bindings: grids, masks, fields, assembled operators, nonlinearities,
//! the semilinear solver, Green potentials, hypothesis checks, the majorant
//! and the command runner.

use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use semilab::expr::Expr;
use semilab::field::Field;
use semilab::geometry::{DomainMask, Grid};
use semilab::linalg::LinearSolverParams;
use semilab::nonlinearity::{check_hypotheses, default_t_grid, mask_samples, MajorantPhi, Phi};
use semilab::operator::{assemble, check_m_matrix, AssembledOperator, CoefficientSet, SchemeOptions, SpatialFn};
use semilab::potential::DirichletSolver;
use semilab::solver::{solve_semilinear_dirichlet, SemilinearParams};
use semilab::Error;

create_exception!(semilab_py, SemilabError, PyException);
create_exception!(semilab_py, HypothesisError, SemilabError);
create_exception!(semilab_py, ConvergenceError, SemilabError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Hypothesis(_) | Error::Ellipticity { .. } | Error::MMatrix(_) => {
            HypothesisError::new_err(msg)
        }
        Error::NonConvergence { .. } | Error::NegativeIterate { .. } | Error::LinearSolve(_) => {
            ConvergenceError::new_err(msg)
        }
        _ => SemilabError::new_err(msg),
    }
}

/// Serializes through JSON into Python dicts and lists.
fn to_object<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SemilabError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A number or an expression string in `x1..x3, r`.
fn spatial(arg: &Bound<'_, PyAny>) -> PyResult<SpatialFn> {
    if let Ok(v) = arg.extract::<f64>() {
        return Ok(SpatialFn::Const(v));
    }
    let text: String = arg
        .extract()
        .map_err(|_| PyValueError::new_err("expected a number or an expression string"))?;
    SpatialFn::parse(&text).map_err(to_py)
}

#[pyclass(name = "Grid", module = "semilab_py", frozen)]
struct PyGrid {
    inner: Arc<Grid>,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(shape: Vec<usize>, bounds: Vec<(f64, f64)>) -> PyResult<Self> {
        let g = Grid::new(shape.len(), &shape, &bounds).map_err(to_py)?;
        Ok(Self { inner: Arc::new(g) })
    }

    /// `n` points per axis on `[lo, hi]^dim`.
    #[staticmethod]
    fn cube(dim: usize, n: usize, lo: f64, hi: f64) -> PyResult<Self> {
        let g = Grid::cube(dim, n, lo, hi).map_err(to_py)?;
        Ok(Self { inner: Arc::new(g) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn spacing(&self) -> Vec<f64> {
        self.inner.spacing().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn coords(&self, idx: usize) -> PyResult<Vec<f64>> {
        if idx >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {idx} out of range")));
        }
        Ok(self.inner.coords(idx)[..self.inner.dim()].to_vec())
    }
}

#[pyclass(name = "DomainMask", module = "semilab_py", frozen)]
struct PyMask {
    inner: Arc<DomainMask>,
}

#[pymethods]
impl PyMask {
    /// Interior where `expr` is positive; the whole box when `expr` is `None`.
    #[new]
    #[pyo3(signature = (grid, expr = None))]
    fn new(grid: &PyGrid, expr: Option<&str>) -> PyResult<Self> {
        let g = grid.inner.clone();
        let mask = match expr {
            None => DomainMask::full(g),
            Some(text) => {
                let e = Expr::parse(text).map_err(|e| to_py(e.into()))?;
                let dim = g.dim();
                let flags = (0..g.len())
                    .map(|i| Ok(e.eval(&g.coords(i)[..dim], None)? > 0.0))
                    .collect::<Result<Vec<bool>, semilab::expr::ExprError>>()
                    .map_err(|e| to_py(e.into()))?;
                DomainMask::from_interior(g, &flags)
            }
        }
        .map_err(to_py)?;
        Ok(Self { inner: Arc::new(mask) })
    }

    #[getter]
    fn n_interior(&self) -> usize {
        self.inner.n_interior()
    }

    #[getter]
    fn n_boundary(&self) -> usize {
        self.inner.n_boundary()
    }

    fn interior_indices(&self) -> Vec<usize> {
        self.inner.interior_indices().collect()
    }

    fn is_interior(&self, idx: usize) -> bool {
        idx < self.inner.grid().len() && self.inner.is_interior(idx)
    }
}

#[pyclass(name = "Field", module = "semilab_py", frozen)]
struct PyField {
    inner: Field,
}

#[pymethods]
impl PyField {
    /// Samples a number or expression on the closure of `mask`.
    #[new]
    fn new(mask: &PyMask, value: &Bound<'_, PyAny>) -> PyResult<Self> {
        let f = spatial(value)?.to_field(mask.inner.clone()).map_err(to_py)?;
        Ok(Self { inner: f })
    }

    /// Grid values in row-major order (`nan` off the closure).
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn at(&self, x: Vec<f64>) -> Option<f64> {
        self.inner.at(&x)
    }

    fn interior_max(&self) -> f64 {
        self.inner.interior_max()
    }

    fn interior_min(&self) -> f64 {
        self.inner.interior_min()
    }

    fn max_abs_diff(&self, other: &PyField) -> PyResult<f64> {
        self.inner.max_abs_diff(&other.inner).map_err(to_py)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    #[staticmethod]
    fn from_csv(mask: &PyMask, text: &str) -> PyResult<Self> {
        let f = Field::from_csv(mask.inner.clone(), text).map_err(to_py)?;
        Ok(Self { inner: f })
    }
}

#[pyclass(name = "Operator", module = "semilab_py", frozen)]
struct PyOperator {
    inner: AssembledOperator,
}

#[pymethods]
impl PyOperator {
    /// Assembles `L = a_ij ∂_ij + b_i ∂_i + c` on `mask`. Each coefficient is a
    /// number or an expression; `a` defaults to the identity.
    #[new]
    #[pyo3(signature = (mask, a = None, b = None, c = None, require_m_matrix = false))]
    fn new(
        mask: &PyMask,
        a: Option<Vec<Bound<'_, PyAny>>>,
        b: Option<Vec<Bound<'_, PyAny>>>,
        c: Option<Bound<'_, PyAny>>,
        require_m_matrix: bool,
    ) -> PyResult<Self> {
        let d = mask.inner.grid().dim();
        let mut coeffs = CoefficientSet::laplacian(d);
        if let Some(a) = a {
            let a = a.iter().map(spatial).collect::<PyResult<Vec<_>>>()?;
            coeffs = CoefficientSet::new(d, a, vec![SpatialFn::Const(0.0); d], None).map_err(to_py)?;
        }
        if let Some(b) = b {
            let b = b.iter().map(spatial).collect::<PyResult<Vec<_>>>()?;
            coeffs = coeffs.with_drift(b).map_err(to_py)?;
        }
        if let Some(c) = c {
            coeffs = coeffs.with_reaction(spatial(&c)?);
        }
        let options = SchemeOptions {
            require_m_matrix,
            ..SchemeOptions::default()
        };
        let op = assemble(mask.inner.clone(), &coeffs, options).map_err(to_py)?;
        Ok(Self { inner: op })
    }

    #[getter]
    fn n_unknowns(&self) -> usize {
        self.inner.n_unknowns()
    }

    fn m_matrix_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_object(py, &check_m_matrix(&self.inner))
    }

    /// `H_D f`.
    fn harmonic_extension(&self, f: &PyField) -> PyResult<PyField> {
        let s = DirichletSolver::new(&self.inner, LinearSolverParams::default()).map_err(to_py)?;
        Ok(PyField {
            inner: s.harmonic_extension(&f.inner).map_err(to_py)?,
        })
    }

    /// `G_D g`.
    fn green_apply(&self, g: &PyField) -> PyResult<PyField> {
        let s = DirichletSolver::new(&self.inner, LinearSolverParams::default()).map_err(to_py)?;
        Ok(PyField {
            inner: s.green_apply(&g.inner).map_err(to_py)?,
        })
    }
}

#[pyclass(name = "Phi", module = "semilab_py", frozen)]
struct PyPhi {
    inner: Phi,
}

#[pymethods]
impl PyPhi {
    #[staticmethod]
    fn zero() -> Self {
        Self { inner: Phi::zero() }
    }

    /// `p(x)·t^γ`.
    #[staticmethod]
    fn power(p: &Bound<'_, PyAny>, gamma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: Phi::power(spatial(p)?, gamma),
        })
    }

    /// `p(x)·t`.
    #[staticmethod]
    fn linear(p: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self {
            inner: Phi::linear(spatial(p)?),
        })
    }

    /// `p(x)·min(t, 1)`.
    #[staticmethod]
    fn min_one(p: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self {
            inner: Phi::min_one(spatial(p)?),
        })
    }

    /// An expression in `x1..x3, r, t`.
    #[staticmethod]
    fn expr(text: &str) -> PyResult<Self> {
        let e = Expr::parse(text).map_err(|e| to_py(e.into()))?;
        Ok(Self { inner: Phi::expr(e) })
    }

    fn __call__(&self, x: Vec<f64>, t: f64) -> PyResult<f64> {
        self.inner.eval(0, &x, t).map_err(to_py)
    }

    /// Sampled hypothesis report on `mask` with optional density `p`.
    #[pyo3(signature = (mask, p = None))]
    fn check<'py>(
        &self,
        py: Python<'py>,
        mask: &PyMask,
        p: Option<Bound<'_, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let p = p.as_ref().map(spatial).transpose()?;
        let samples = mask_samples(&mask.inner, 512);
        let rep = check_hypotheses(&self.inner, p.as_ref(), &samples, &default_t_grid())
            .map_err(to_py)?;
        to_object(py, &rep)
    }

    /// The concave majorant `φ₁` with density `p` on `mask`, and its report.
    fn majorant<'py>(
        &self,
        py: Python<'py>,
        mask: &PyMask,
        p: &Bound<'_, PyAny>,
    ) -> PyResult<(PyPhi, Bound<'py, PyAny>)> {
        let pf = spatial(p)?.to_field(mask.inner.clone()).map_err(to_py)?;
        let maj = MajorantPhi::build_default(&self.inner, &pf).map_err(to_py)?;
        let report = to_object(py, maj.report())?;
        Ok((PyPhi { inner: maj.into_phi() }, report))
    }
}

/// Solves `L u = φ(x, u)` with `u = f` on the boundary; `f` is a number or a
/// `Field`. Returns the solution and the solver report.
#[pyfunction]
#[pyo3(signature = (op, phi, f, tolerance = 1e-10))]
fn solve<'py>(
    py: Python<'py>,
    op: &PyOperator,
    phi: &PyPhi,
    f: &Bound<'py, PyAny>,
    tolerance: f64,
) -> PyResult<(PyField, Bound<'py, PyAny>)> {
    let mask = op.inner.mask().clone();
    let data = if let Ok(c) = f.extract::<f64>() {
        Field::constant(mask, c)
    } else {
        f.cast::<PyField>()
            .map_err(|_| PyValueError::new_err("boundary data must be a number or a Field"))?
            .get()
            .inner
            .clone()
    };
    let params = SemilinearParams {
        tolerance,
        ..SemilinearParams::default()
    };
    let (u, report) = py
        .detach(|| solve_semilinear_dirichlet(&op.inner, &phi.inner, &data, &params))
        .map_err(to_py)?;
    Ok((PyField { inner: u }, to_object(py, &report)?))
}

/// Parses and re-prints an expression in canonical form.
#[pyfunction]
fn normalize_expr(text: &str) -> PyResult<String> {
    Ok(Expr::parse(text).map_err(|e| to_py(e.into()))?.to_string())
}

#[pyfunction]
#[pyo3(signature = (text, x, t = None))]
fn eval_expr(text: &str, x: Vec<f64>, t: Option<f64>) -> PyResult<f64> {
    let e = Expr::parse(text).map_err(|e| to_py(e.into()))?;
    e.eval(&x, t).map_err(|e| to_py(e.into()))
}

/// Runs a CLI command on a config file and returns its exit status.
#[pyfunction]
#[pyo3(signature = (command, config, out, seed = None))]
fn run_command(py: Python<'_>, command: &str, config: &str, out: &str, seed: Option<u64>) -> i32 {
    let mut args = vec![
        "semilab".to_string(),
        command.to_string(),
        "--config".into(),
        config.into(),
        "--out".into(),
        out.into(),
    ];
    if let Some(s) = seed {
        args.extend(["--seed".to_string(), s.to_string()]);
    }
    py.detach(|| semilab::cli::run(args))
}

#[pymodule]
fn semilab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyMask>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyPhi>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_expr, m)?)?;
    m.add_function(wrap_pyfunction!(eval_expr, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    m.add("SemilabError", m.py().get_type::<SemilabError>())?;
    m.add("HypothesisError", m.py().get_type::<HypothesisError>())?;
    m.add("ConvergenceError", m.py().get_type::<ConvergenceError>())?;
    Ok(())
}
