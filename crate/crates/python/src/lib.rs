//! Python bindings: load bundled or user files, run the closed loop and the
//! diagnostic harnesses. Results come back as plain dicts and lists.

use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use gridshaper::checks;
use gridshaper::controller::{ControllerConfig, ControllerContext};
use gridshaper::network::{validate_topology, NetworkData, NetworkModel};
use gridshaper::scenario::{gen_scenario as generate, GenParams, Scenario};
use gridshaper::simulator::{self, SimulationOptions};

fn err(e: gridshaper::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts through JSON so nested structs arrive as dicts.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn load(scenario: &Path, network: Option<PathBuf>, config: Option<PathBuf>) -> PyResult<(NetworkModel, ControllerContext, Scenario)> {
    let sc = Scenario::from_path(scenario).map_err(err)?;
    let dir = scenario.parent().unwrap_or(Path::new("."));
    let net = network
        .or_else(|| sc.network.as_ref().map(|p| dir.join(p)))
        .ok_or_else(|| PyValueError::new_err("no network given and the scenario names none"))?;
    let model = NetworkModel::from_path(&net).map_err(err)?;
    let (cfg, base) = match config.or_else(|| sc.config.as_ref().map(|p| dir.join(p))) {
        Some(p) => (ControllerConfig::from_path(&p).map_err(err)?, p.parent().map(Path::to_path_buf)),
        None => (ControllerConfig::default(), None),
    };
    let ctx = ControllerContext::new(&model, &cfg, base.as_deref()).map_err(err)?;
    Ok((model, ctx, sc))
}

/// Topology problems of a network file; empty when the feeder is a valid radial tree.
#[pyfunction]
fn validate_network(path: PathBuf) -> PyResult<Vec<String>> {
    let data = NetworkData::from_path(&path).map_err(err)?;
    Ok(validate_topology(&data).iter().map(ToString::to_string).collect())
}

/// Runs a scenario through the controller and returns its metrics. With `out`,
/// the trace files are written there as well.
#[pyfunction]
#[pyo3(signature = (scenario, network=None, config=None, out=None, check_candidates=false))]
fn run_scenario(
    py: Python<'_>,
    scenario: PathBuf,
    network: Option<PathBuf>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    check_candidates: bool,
) -> PyResult<Py<PyAny>> {
    let (model, ctx, sc) = load(&scenario, network, config)?;
    let options = SimulationOptions {
        check_candidates,
        audit_delays: false,
    };
    let (trace, metrics) = py
        .detach(|| simulator::run(&model, &ctx, &sc, options))
        .map_err(err)?;
    if let Some(dir) = out {
        simulator::export_trace(&model, &trace, &metrics, &dir).map_err(err)?;
    }
    to_py(py, &metrics)
}

/// Peak demand with every load drawing at its nominal rate from arrival.
#[pyfunction]
#[pyo3(signature = (scenario, network=None))]
fn baseline(py: Python<'_>, scenario: PathBuf, network: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let (model, ctx, sc) = load(&scenario, network, None)?;
    let b = simulator::uncontrolled_baseline(&model, &sc, ctx.dt()).map_err(err)?;
    to_py(py, &b)
}

/// Relaxed versus exact DistFlow on `count` random radial feeders.
#[pyfunction]
#[pyo3(signature = (seed=0, count=20, max_buses=10))]
fn oracle_agreement(py: Python<'_>, seed: u64, count: u64, max_buses: usize) -> PyResult<Py<PyAny>> {
    let cases = py
        .detach(|| checks::oracle_agreement(seed..seed + count, max_buses))
        .map_err(err)?;
    to_py(py, &cases)
}

/// Random request schedule as a JSON document.
#[pyfunction]
#[pyo3(signature = (seed, buses, steps=60, intensity=1.0))]
fn gen_scenario(seed: u64, buses: Vec<usize>, steps: usize, intensity: f64) -> PyResult<String> {
    let params = GenParams {
        seed,
        buses,
        steps,
        intensity,
        ..GenParams::default()
    };
    Ok(generate(&params).map_err(err)?.to_json())
}

#[pymodule]
fn gridshaper_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate_network, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(gen_scenario, m)?)?;
    Ok(())
}
