//! Python bindings: the main types (claim laws, intensity models, problem
//! data, value tables) and operations (solve, Monte Carlo estimation,
//! optimality verification, retention choice, admissibility scans) of the
//! jump-risk control toolkit.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use jumprev::insurance::{InsuranceProblem, PremiumRule};
use jumprev::prevention::{
    check_convexity_conditions, validate_spec, CostFn, Effort, ImpactFn, PreventionSpec,
    StrategyFunction,
};
use jumprev::risk_models::{
    pps_gate_scan, ClaimDistribution, ExcitationMap, IntensityModel, PPS_PHI_THRESHOLD,
};
use jumprev::simulate::{estimate_expected_utility, time_change_residuals, EstimatorMode};
use jumprev::solver::{bellman_residual_check, value_function_constant, ValueFunctionTable};
use jumprev::stats::ks_test_unit_exponential;
use jumprev::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. }
        | Error::Precondition { .. }
        | Error::Config { .. }
        | Error::NotApplicable { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Claim laws
// ---------------------------------------------------------------------------

/// Distribution of a single claim size.
#[pyclass(name = "ClaimLaw", from_py_object)]
#[derive(Clone)]
struct PyClaimLaw {
    inner: ClaimDistribution,
}

#[pymethods]
impl PyClaimLaw {
    /// Degenerate law at `z0 > 0`.
    #[staticmethod]
    fn point_mass(z0: f64) -> PyResult<Self> {
        Ok(Self { inner: ClaimDistribution::point_mass(z0).map_err(py_err)? })
    }

    /// Exponential law with the given rate (mean `1 / rate`).
    #[staticmethod]
    fn exponential(rate: f64) -> PyResult<Self> {
        Ok(Self { inner: ClaimDistribution::exponential(rate).map_err(py_err)? })
    }

    /// Uniform law on `[lo, hi]`, `0 <= lo < hi`.
    #[staticmethod]
    fn uniform(lo: f64, hi: f64) -> PyResult<Self> {
        Ok(Self { inner: ClaimDistribution::uniform(lo, hi).map_err(py_err)? })
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    /// `E[e^{s Z}]`; raises when `s` leaves the mgf domain.
    fn mgf(&self, s: f64) -> PyResult<f64> {
        self.inner.mgf(s).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

// ---------------------------------------------------------------------------
// Intensity models
// ---------------------------------------------------------------------------

/// Claim-arrival intensity model.
#[pyclass(name = "Model", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: IntensityModel,
}

impl PyModel {
    fn validated(inner: IntensityModel) -> PyResult<Self> {
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }
}

#[pymethods]
impl PyModel {
    /// Deterministic constant intensity.
    #[staticmethod]
    fn constant(lam: f64) -> PyResult<Self> {
        Self::validated(IntensityModel::Constant { lambda: lam })
    }

    /// Markov-modulated intensity: generator rows `q`, per-state `levels`,
    /// starting state `initial`.
    #[staticmethod]
    fn markov_modulated(q: Vec<Vec<f64>>, levels: Vec<f64>, initial: usize) -> PyResult<Self> {
        Self::validated(IntensityModel::MarkovModulated { q, levels, initial })
    }

    /// Shot-noise intensity: exogenous shocks at rate `shock_rate` with
    /// sizes from `shock_law`, decaying at `alpha` toward `beta`.
    #[staticmethod]
    fn shot_noise_cox(
        beta: f64,
        alpha: f64,
        lambda0: f64,
        shock_rate: f64,
        shock_law: PyClaimLaw,
    ) -> PyResult<Self> {
        Self::validated(IntensityModel::ShotNoiseCox {
            beta,
            alpha,
            lambda0,
            shock_rate,
            shock_law: shock_law.inner,
        })
    }

    /// Self-exciting intensity: each claim of size `z` adds
    /// `excitation_c * z` (optionally capped) on top of the shot-noise
    /// dynamics.
    #[staticmethod]
    #[pyo3(signature = (beta, alpha, lambda0, shock_rate, shock_law, excitation_c, excitation_cap=None))]
    fn contagion(
        beta: f64,
        alpha: f64,
        lambda0: f64,
        shock_rate: f64,
        shock_law: PyClaimLaw,
        excitation_c: f64,
        excitation_cap: Option<f64>,
    ) -> PyResult<Self> {
        let excitation = match excitation_cap {
            Some(cap) => ExcitationMap::CappedLinear { c: excitation_c, cap },
            None => ExcitationMap::Linear { c: excitation_c },
        };
        Self::validated(IntensityModel::Contagion {
            beta,
            alpha,
            lambda0,
            shock_rate,
            shock_law: shock_law.inner,
            excitation,
        })
    }

    /// Uniform upper bound on the intensity, when the model has one.
    fn uniform_bound(&self) -> Option<f64> {
        self.inner.uniform_bound()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

// ---------------------------------------------------------------------------
// Problem data
// ---------------------------------------------------------------------------

fn parse_impact(which: &str, family: &str, alpha: Option<f64>, slope: Option<f64>) -> PyResult<ImpactFn> {
    let need = |opt: Option<f64>, name: &str| {
        opt.ok_or_else(|| PyValueError::new_err(format!("{which} family `{family}` needs {name}")))
    };
    match family {
        "exp_decay" => Ok(ImpactFn::ExpDecay { alpha: need(alpha, "alpha")? }),
        "hyperbolic" => Ok(ImpactFn::Hyperbolic),
        "linear_down" => Ok(ImpactFn::LinearDown),
        "one" => Ok(ImpactFn::One),
        "affine_up" => Ok(ImpactFn::AffineUp { slope: need(slope, "slope")? }),
        other => Err(PyValueError::new_err(format!(
            "unknown impact family `{other}` for {which}; expected exp_decay, hyperbolic, linear_down, one, or affine_up"
        ))),
    }
}

fn parse_cost(which: &str, family: &str, scale: f64, intercept: f64, slope: f64) -> PyResult<CostFn> {
    match family {
        "quadratic" => Ok(CostFn::Quadratic { scale }),
        "shifted_quadratic" => Ok(CostFn::ShiftedQuadratic { scale }),
        "affine" => Ok(CostFn::Affine { intercept, slope }),
        "zero" => Ok(CostFn::Zero),
        other => Err(PyValueError::new_err(format!(
            "unknown cost family `{other}` for {which}; expected quadratic, shifted_quadratic, affine, or zero"
        ))),
    }
}

/// Effort-control problem data: risk aversion, horizon, impact and cost
/// shapes for the frequency (1) and severity (2) channels.
#[pyclass(name = "Problem", skip_from_py_object)]
#[derive(Clone)]
struct PyProblem {
    spec: PreventionSpec,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (
        eta, horizon, r=0.0, x0=0.0, zeta1=1.0, zeta2=1.0,
        gamma1="exp_decay", gamma1_alpha=None, gamma1_slope=None,
        gamma2="linear_down", gamma2_alpha=None, gamma2_slope=None,
        c1="quadratic", c1_scale=1.0, c1_intercept=0.0, c1_slope=0.0,
        c2="quadratic", c2_scale=1.0, c2_intercept=0.0, c2_slope=0.0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        eta: f64,
        horizon: f64,
        r: f64,
        x0: f64,
        zeta1: f64,
        zeta2: f64,
        gamma1: &str,
        gamma1_alpha: Option<f64>,
        gamma1_slope: Option<f64>,
        gamma2: &str,
        gamma2_alpha: Option<f64>,
        gamma2_slope: Option<f64>,
        c1: &str,
        c1_scale: f64,
        c1_intercept: f64,
        c1_slope: f64,
        c2: &str,
        c2_scale: f64,
        c2_intercept: f64,
        c2_slope: f64,
    ) -> PyResult<Self> {
        let spec = PreventionSpec {
            zeta1,
            zeta2,
            gamma1: parse_impact("gamma1", gamma1, gamma1_alpha, gamma1_slope)?,
            gamma2: parse_impact("gamma2", gamma2, gamma2_alpha, gamma2_slope)?,
            c1: parse_cost("c1", c1, c1_scale, c1_intercept, c1_slope)?,
            c2: parse_cost("c2", c2, c2_scale, c2_intercept, c2_slope)?,
            eta,
            r,
            horizon,
            x0,
        };
        let problems = validate_spec(&spec);
        if !problems.is_empty() {
            return Err(PyValueError::new_err(problems.join("; ")));
        }
        Ok(Self { spec })
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.spec)
    }
}

// ---------------------------------------------------------------------------
// Value table
// ---------------------------------------------------------------------------

/// Backward value construction on a uniform grid, with the optimal effort
/// paths recorded node by node.
#[pyclass(name = "ValueTable")]
struct PyValueTable {
    table: ValueFunctionTable,
    spec: PreventionSpec,
}

#[pymethods]
impl PyValueTable {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.table.times.clone()
    }

    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.table.phi.clone()
    }

    #[getter]
    fn u1(&self) -> Vec<f64> {
        self.table.u1.clone()
    }

    #[getter]
    fn u2(&self) -> Vec<f64> {
        self.table.u2.clone()
    }

    #[getter]
    fn psi_star(&self) -> Vec<f64> {
        self.table.psi_star.clone()
    }

    /// Interpolated `phi(t)`.
    fn phi_at(&self, t: f64) -> f64 {
        self.table.phi_at(t)
    }

    /// The optimized objective `e^{-eta x0 e^{rT}} phi(0)`.
    fn value(&self) -> f64 {
        self.table.objective_value(&self.spec)
    }

    fn __repr__(&self) -> String {
        format!(
            "ValueTable(nodes={}, phi0={:.6}, minimizer={:?})",
            self.table.times.len(),
            self.table.phi[0],
            self.table.minimizer
        )
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Solve the constant-intensity problem on `grid` uniform intervals.
#[pyfunction]
#[pyo3(signature = (problem, lam, claims, grid=512))]
fn solve(problem: &PyProblem, lam: f64, claims: &PyClaimLaw, grid: usize) -> PyResult<PyValueTable> {
    let table = value_function_constant(&problem.spec, lam, &claims.inner, grid).map_err(py_err)?;
    Ok(PyValueTable { table, spec: problem.spec.clone() })
}

fn mode_from(mode: &str) -> PyResult<EstimatorMode> {
    match mode {
        "direct" => Ok(EstimatorMode::Direct),
        "weighted" => Ok(EstimatorMode::Weighted),
        other => Err(PyValueError::new_err(format!(
            "unknown estimator mode `{other}`; expected direct or weighted"
        ))),
    }
}

/// Monte Carlo estimate of `E[e^{-eta X_T}]` under a constant effort pair;
/// returns `(estimate, stderr)`.
#[pyfunction]
#[pyo3(signature = (model, claims, problem, u1, u2, n_paths, mode="direct", seed=1))]
#[allow(clippy::too_many_arguments)]
fn estimate_utility(
    model: &PyModel,
    claims: &PyClaimLaw,
    problem: &PyProblem,
    u1: f64,
    u2: f64,
    n_paths: usize,
    mode: &str,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let strategy = StrategyFunction::Constant(Effort::new(u1, u2));
    let result = estimate_expected_utility(
        &model.inner,
        &claims.inner,
        &strategy,
        &problem.spec,
        n_paths,
        mode_from(mode)?,
        seed,
    )
    .map_err(py_err)?;
    Ok((result.estimate, result.stderr))
}

/// Monte Carlo estimate of `E[e^{-eta X_T}]` under the tabled optimal
/// strategy; returns `(estimate, stderr)`.
#[pyfunction]
#[pyo3(signature = (model, claims, problem, table, n_paths, mode="direct", seed=1))]
fn estimate_utility_table(
    model: &PyModel,
    claims: &PyClaimLaw,
    problem: &PyProblem,
    table: &PyValueTable,
    n_paths: usize,
    mode: &str,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let strategy = table.table.to_strategy();
    let result = estimate_expected_utility(
        &model.inner,
        &claims.inner,
        &strategy,
        &problem.spec,
        n_paths,
        mode_from(mode)?,
        seed,
    )
    .map_err(py_err)?;
    Ok((result.estimate, result.stderr))
}

/// Drift test of the optimality characterization at the tabled strategy
/// (or a constant override): the monitored process must be a martingale
/// at the optimum and a submartingale elsewhere.
#[pyfunction]
#[pyo3(signature = (model, claims, problem, table, n_paths=20_000, intervals=20, seed=1, u1=None, u2=None))]
#[allow(clippy::too_many_arguments)]
fn verify_martingale<'py>(
    py: Python<'py>,
    model: &PyModel,
    claims: &PyClaimLaw,
    problem: &PyProblem,
    table: &PyValueTable,
    n_paths: usize,
    intervals: usize,
    seed: u64,
    u1: Option<f64>,
    u2: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let strategy = match (u1, u2) {
        (None, None) => table.table.to_strategy(),
        (a, b) => StrategyFunction::Constant(Effort::new(a.unwrap_or(0.0), b.unwrap_or(0.0))),
    };
    let report = bellman_residual_check(
        &model.inner,
        &claims.inner,
        &problem.spec,
        &table.table,
        &strategy,
        n_paths,
        intervals,
        seed,
    )
    .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("max_abs_drift_z", report.max_abs_drift_z())?;
    out.set_item("min_drift_z", report.min_drift_z())?;
    out.set_item("total_drift_mean", report.total_drift_mean)?;
    out.set_item("total_drift_stderr", report.total_drift_stderr)?;
    out.set_item("terminal_estimate", report.terminal_estimate)?;
    out.set_item("direct_estimate", report.direct_estimate)?;
    out.set_item("martingale_pass", report.martingale_pass())?;
    out.set_item("submartingale_pass", report.submartingale_pass())?;
    out.set_item("drift_significant", report.drift_significant())?;
    out.set_item("terminal_identity_pass", report.terminal_identity_pass())?;
    Ok(out)
}

/// Optimal proportional retention against an expected-value premium;
/// returns the scanned curve and its minimizer.
#[pyfunction]
#[pyo3(signature = (problem, lam, claims, loading, reference_intensity, refund_fraction=0.0, grid=256))]
#[allow(clippy::too_many_arguments)]
fn optimal_retention<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    lam: f64,
    claims: &PyClaimLaw,
    loading: f64,
    reference_intensity: f64,
    refund_fraction: f64,
    grid: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let ins = InsuranceProblem::new(
        problem.spec.clone(),
        lam,
        claims.inner.clone(),
        PremiumRule::ExpectedValue { loading, reference_intensity },
        refund_fraction,
        grid,
    )
    .map_err(py_err)?;
    let curve = ins.optimal_retention().map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("theta_star", curve.theta_star)?;
    out.set_item("objective_star", curve.objective_star)?;
    out.set_item("mean_effort_star", curve.mean_effort_star)?;
    out.set_item("thetas", curve.points.iter().map(|p| p.theta).collect::<Vec<_>>())?;
    out.set_item("premiums", curve.points.iter().map(|p| p.premium).collect::<Vec<_>>())?;
    out.set_item("objectives", curve.points.iter().map(|p| p.objective).collect::<Vec<_>>())?;
    Ok(out)
}

/// Sufficient convexity conditions for the pointwise effort optimization.
#[pyfunction]
#[pyo3(signature = (problem, intensity_bound=None))]
fn convexity_conditions<'py>(
    py: Python<'py>,
    problem: &PyProblem,
    intensity_bound: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let report = check_convexity_conditions(&problem.spec, intensity_bound);
    let out = PyDict::new(py);
    out.set_item("applicable", report.applicable)?;
    out.set_item("not_applicable_reason", report.not_applicable_reason.clone())?;
    out.set_item("all_pass", report.all_pass())?;
    out.set_item("cost_convexity", report.cost_convexity.passed)?;
    out.set_item("log_convexity", report.log_convexity.passed)?;
    out.set_item("curvature_bound", report.curvature_bound.passed)?;
    out.set_item("curvature_first_violation", report.curvature_bound.first_violation)?;
    Ok(out)
}

/// Scan the existence gate over a geometric grid at margin `phi`.
#[pyfunction]
fn gate_scan<'py>(py: Python<'py>, phi: f64) -> PyResult<Bound<'py, PyDict>> {
    let scan = pps_gate_scan(phi);
    let out = PyDict::new(py);
    out.set_item("phi", scan.phi)?;
    out.set_item("min_beta", scan.min_beta)?;
    out.set_item("min_value", scan.min_value)?;
    out.set_item("admissible_beta", scan.admissible_beta)?;
    Ok(out)
}

/// Largest margin `phi` at which the existence gate can still drop below
/// one half.
#[pyfunction]
fn gate_threshold() -> f64 {
    PPS_PHI_THRESHOLD
}

/// Time-change goodness of fit: compensator increments between simulated
/// claims against the unit exponential law.
#[pyfunction]
#[pyo3(signature = (model, claims, events_per_path=5, n_paths=2000, seed=1))]
fn time_change_ks<'py>(
    py: Python<'py>,
    model: &PyModel,
    claims: &PyClaimLaw,
    events_per_path: usize,
    n_paths: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let taus = time_change_residuals(&model.inner, &claims.inner, events_per_path, n_paths, seed);
    let ks = ks_test_unit_exponential(&taus);
    let out = PyDict::new(py);
    out.set_item("n", ks.n)?;
    out.set_item("statistic", ks.statistic)?;
    out.set_item("rejects_at_1pct", ks.rejects_at_1pct())?;
    Ok(out)
}

#[pymodule]
fn jumprev_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClaimLaw>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyValueTable>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_utility, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_utility_table, m)?)?;
    m.add_function(wrap_pyfunction!(verify_martingale, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_retention, m)?)?;
    m.add_function(wrap_pyfunction!(convexity_conditions, m)?)?;
    m.add_function(wrap_pyfunction!(gate_scan, m)?)?;
    m.add_function(wrap_pyfunction!(gate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(time_change_ks, m)?)?;
    Ok(())
}
