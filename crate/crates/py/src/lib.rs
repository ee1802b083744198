//! Python bindings. Networks are passed as `(n, edges)`, panels as a list of
//! rows (one row per time step). Structured results come back as dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use netar_core::dgp::{simulate as simulate_panel, CopulaSpec, SimConfig};
use netar_core::lintest::lm_test;
use netar_core::model::{Domain, Family, ModelSpec};
use netar_core::netgraph::{gen_er as er, gen_sbm as sbm, row_normalize, Network};
use netar_core::nuisance::{default_grid, lm_profile, profile_test, Aggregate, GammaGrid, PValueMethod};
use netar_core::panel::Panel;
use netar_core::qmle::{fit_linear, ols_fit_linear};
use netar_core::studio::{report_json, run_mc_study, StudyConfig};

fn err(e: netar_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn domain(family: &str) -> PyResult<Domain> {
    match family.to_ascii_lowercase().as_str() {
        "pnar" | "count" => Ok(Domain::Count),
        "nar" | "continuous" => Ok(Domain::Continuous),
        other => Err(PyValueError::new_err(format!("unknown family '{other}' (pnar or nar)"))),
    }
}

fn alternative(alt: &str) -> PyResult<Family> {
    match alt.to_ascii_lowercase().as_str() {
        "drift" => Ok(Family::InterceptDrift),
        "stnar" => Ok(Family::Stnar),
        "tnar" => Ok(Family::Tnar),
        other => Err(PyValueError::new_err(format!("unknown alternative '{other}'"))),
    }
}

fn to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (value.to_string(),))?.unbind())
}

fn inputs(panel: Vec<Vec<f64>>, n: usize, edges: Vec<(usize, usize)>, family: &str) -> PyResult<(Panel, Network)> {
    let panel = Panel::from_rows(&panel, domain(family)?).map_err(err)?;
    let net = row_normalize(&edges, n).map_err(err)?;
    Ok((panel, net))
}

/// Stochastic block model edges.
#[pyfunction]
fn gen_sbm(n: usize, k: usize, seed: u64) -> PyResult<Vec<(usize, usize)>> {
    Ok(sbm(n, k, seed).map_err(err)?.edges())
}

/// Erdos-Renyi edges; `p` defaults to the package default for `n`.
#[pyfunction]
#[pyo3(signature = (n, seed, p=None))]
fn gen_er(n: usize, seed: u64, p: Option<f64>) -> PyResult<Vec<(usize, usize)>> {
    Ok(er(n, p, seed).map_err(err)?.edges())
}

/// Dense row-normalized weight matrix.
#[pyfunction]
fn weights(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Vec<Vec<f64>>> {
    Ok(row_normalize(&edges, n).map_err(err)?.dense_w())
}

/// Simulates a panel and returns it as a list of rows.
#[pyfunction]
#[pyo3(signature = (n, edges, family, theta, t, seed, spec="linear", copula="indep", burn_in=300, sigma=1.0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    n: usize,
    edges: Vec<(usize, usize)>,
    family: &str,
    theta: [f64; 3],
    t: usize,
    seed: u64,
    spec: &str,
    copula: &str,
    burn_in: usize,
    sigma: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let net = row_normalize(&edges, n).map_err(err)?;
    let spec = ModelSpec::parse(spec, domain(family)?, theta).map_err(err)?;
    let cop: CopulaSpec = copula.parse().map_err(err)?;
    let cfg = SimConfig::new(t, seed).burn_in(burn_in).sigma(sigma);
    let panel = simulate_panel(&spec, &net, &cop, &cfg).map_err(err)?;
    Ok((0..panel.t()).map(|s| panel.at(s).to_vec()).collect())
}

/// Fits the linear model (QMLE for counts, least squares for continuous).
#[pyfunction]
fn fit(py: Python<'_>, panel: Vec<Vec<f64>>, n: usize, edges: Vec<(usize, usize)>, family: &str) -> PyResult<Py<PyAny>> {
    let (panel, net) = inputs(panel, n, edges, family)?;
    let fit = match panel.domain() {
        Domain::Count => fit_linear(&panel, &net),
        Domain::Continuous => ols_fit_linear(&panel, &net),
    }
    .map_err(err)?;
    to_py(py, &fit.to_json())
}

/// Chi-square quasi-score test against the intercept-drift model.
#[pyfunction]
fn score_test(py: Python<'_>, panel: Vec<Vec<f64>>, n: usize, edges: Vec<(usize, usize)>, family: &str) -> PyResult<Py<PyAny>> {
    let (panel, net) = inputs(panel, n, edges, family)?;
    to_py(py, &lm_test(&panel, &net, Family::InterceptDrift).map_err(err)?.to_json())
}

/// Sup/average score test over a nuisance grid (`grid` as "lo:hi:n" or None for the default).
#[pyfunction]
#[pyo3(signature = (panel, n, edges, family, alt, grid=None, method="davies", boot_reps=499, agg="sup", seed=0))]
#[allow(clippy::too_many_arguments)]
fn sup_test(
    py: Python<'_>,
    panel: Vec<Vec<f64>>,
    n: usize,
    edges: Vec<(usize, usize)>,
    family: &str,
    alt: &str,
    grid: Option<&str>,
    method: &str,
    boot_reps: usize,
    agg: &str,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let (panel, net) = inputs(panel, n, edges, family)?;
    let alt = alternative(alt)?;
    let grid = match grid {
        Some(text) => GammaGrid::parse_range(text),
        None => default_grid(alt, Some(&panel), Some(&net)),
    }
    .map_err(err)?;
    let method: PValueMethod = method.parse().map_err(err)?;
    let agg: Aggregate = agg.parse().map_err(err)?;
    let profile = lm_profile(&panel, &net, alt, &grid).map_err(err)?;
    let result = profile_test(&profile, method, agg, boot_reps, seed).map_err(err)?;
    to_py(py, &profile.to_json(&result))
}

/// Runs a Monte Carlo study from a JSON config string and returns the report.
#[pyfunction]
fn mc_run(py: Python<'_>, config: &str) -> PyResult<Py<PyAny>> {
    let cfg: StudyConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = py.detach(|| run_mc_study(&cfg)).map_err(err)?;
    to_py(py, &report_json(&out, true))
}

#[pymodule]
fn netar(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(gen_sbm, m)?)?;
    m.add_function(wrap_pyfunction!(gen_er, m)?)?;
    m.add_function(wrap_pyfunction!(weights, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(score_test, m)?)?;
    m.add_function(wrap_pyfunction!(sup_test, m)?)?;
    m.add_function(wrap_pyfunction!(mc_run, m)?)?;
    Ok(())
}
