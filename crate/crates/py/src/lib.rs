//! Python bindings: networks, single-query bounds, PGD and whole cascade runs.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use crv_core::cascade::{oracle_labels, parse_stages, Timing};
use crv_core::{
    AttackConfig, CascadeConfig, CascadeReport, CrvError, Dataset, GenConfig, InputRegion, MarginObjective,
    RelaxationChoice, SolverConfig, SubmethodLadder,
};

fn py_err(e: CrvError) -> PyErr {
    match e {
        CrvError::Io { .. } => PyIOError::new_err(e.to_string()),
        CrvError::Numeric(_) | CrvError::Soundness(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// One-hidden-layer ReLU classifier.
#[pyclass(name = "Network", frozen)]
struct PyNetwork {
    inner: crv_core::Network,
}

#[pymethods]
impl PyNetwork {
    /// Weights are given as lists of rows; `domain` clips every input box.
    #[new]
    #[pyo3(signature = (w1, b1, w2, b2, domain=None))]
    fn new(
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<Vec<f64>>,
        b2: Vec<f64>,
        domain: Option<(f64, f64)>,
    ) -> PyResult<Self> {
        let inner = crv_core::Network::from_rows(&w1, &b1, &w2, &b2, domain).map_err(py_err)?;
        Ok(PyNetwork { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = crv_core::Network::from_json(text).map_err(py_err)?;
        Ok(PyNetwork { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = crv_core::model::load_network(path).map_err(py_err)?;
        Ok(PyNetwork { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.inner.hidden_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        crv_core::forward(&self.inner, &x).map_err(py_err)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        Ok(crv_core::predicted_label(&self.forward(x)?))
    }

    /// `f(x)[y_adv] - f(x)[y]`.
    fn margin(&self, x: Vec<f64>, y: usize, y_adv: usize) -> PyResult<f64> {
        let obj = crv_core::margin_query(&self.inner, y, y_adv).map_err(py_err)?;
        obj.evaluate(&self.inner, &x).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(d={}, m={}, classes={})",
            self.inner.input_dim(),
            self.inner.hidden_dim(),
            self.inner.num_classes()
        )
    }
}

fn query(
    net: &PyNetwork,
    x: &[f64],
    epsilon: f64,
    y: usize,
    y_adv: usize,
) -> PyResult<(InputRegion, MarginObjective, crv_core::LayerBounds)> {
    let region = InputRegion::new(&net.inner, x, epsilon).map_err(py_err)?;
    let obj = crv_core::margin_query(&net.inner, y, y_adv).map_err(py_err)?;
    let bounds = crv_core::preactivation_bounds(&net.inner, &region).map_err(py_err)?;
    Ok((region, obj, bounds))
}

/// Closed-form linear upper bound on the margin over the box.
#[pyfunction]
#[pyo3(signature = (net, x, epsilon, y, y_adv, rule="adaptive"))]
fn lp_bound(net: &PyNetwork, x: Vec<f64>, epsilon: f64, y: usize, y_adv: usize, rule: &str) -> PyResult<f64> {
    let rule = match rule {
        "adaptive" => RelaxationChoice::AdaptiveZeroOne,
        "parallel" => RelaxationChoice::ParallelToChord,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown rule `{other}` (adaptive, parallel)"
            )))
        }
    };
    let (region, obj, bounds) = query(net, &x, epsilon, y, y_adv)?;
    let r = crv_core::lp_bound(&net.inner, &region, &obj, &bounds, rule).map_err(py_err)?;
    Ok(r.bound)
}

/// Certified SDP upper bound at one level of the default ladder.
#[pyfunction]
#[pyo3(signature = (net, x, epsilon, y, y_adv, level=3))]
fn sdp_bound(net: &PyNetwork, x: Vec<f64>, epsilon: f64, y: usize, y_adv: usize, level: usize) -> PyResult<f64> {
    let (region, obj, bounds) = query(net, &x, epsilon, y, y_adv)?;
    let r = crv_core::sdp_bound(
        &net.inner,
        &region,
        &obj,
        &bounds,
        &SubmethodLadder::default(),
        level,
        &SolverConfig::default(),
    )
    .map_err(py_err)?;
    Ok(r.bound)
}

/// Worst-case margin by activation-pattern enumeration, with the maximizer.
#[pyfunction]
fn exact_margin(net: &PyNetwork, x: Vec<f64>, epsilon: f64, y: usize, y_adv: usize) -> PyResult<(f64, Vec<f64>)> {
    let (region, obj, _) = query(net, &x, epsilon, y, y_adv)?;
    let r = crv_core::exact_margin(&net.inner, &region, &obj).map_err(py_err)?;
    Ok((r.l_star, r.witness))
}

/// Untargeted PGD; returns (success, adversarial point or None, best margin).
#[pyfunction]
#[pyo3(signature = (net, x, epsilon, y, steps=200, restarts=5, seed=0))]
fn pgd(
    net: &PyNetwork,
    x: Vec<f64>,
    epsilon: f64,
    y: usize,
    steps: usize,
    restarts: usize,
    seed: u64,
) -> PyResult<(bool, Option<Vec<f64>>, f64)> {
    let region = InputRegion::new(&net.inner, &x, epsilon).map_err(py_err)?;
    let cfg = AttackConfig {
        steps,
        restarts,
        seed,
        ..AttackConfig::default()
    };
    let r = crv_core::pgd_attack(&net.inner, &region, y, &cfg).map_err(py_err)?;
    Ok((r.success, r.adversarial_point, r.achieved_margin))
}

/// Seeded synthetic network and labelled points.
#[pyfunction]
#[pyo3(signature = (seed=0, d=3, m=6, classes=3, size=100))]
fn generate(
    seed: u64,
    d: usize,
    m: usize,
    classes: usize,
    size: usize,
) -> PyResult<(PyNetwork, Vec<Vec<f64>>, Vec<usize>)> {
    let cfg = GenConfig {
        seed,
        d,
        m,
        classes,
        size,
        ..GenConfig::default()
    };
    let (net, data, _) = crv_core::generate_benchmark(&cfg).map_err(py_err)?;
    let (points, labels) = data.points.into_iter().unzip();
    Ok((PyNetwork { inner: net }, points, labels))
}

/// Runs a cascade over labelled points and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (net, points, labels, epsilon, cascade="lin,sr(sdp:1,sdp:2,sdp:3)", fsr=false, attack=false, oracle=false, cost_units=true))]
#[allow(clippy::too_many_arguments)]
fn crv_verify(
    py: Python<'_>,
    net: &PyNetwork,
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    epsilon: f64,
    cascade: &str,
    fsr: bool,
    attack: bool,
    oracle: bool,
    cost_units: bool,
) -> PyResult<String> {
    if points.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut cfg = CascadeConfig {
        stages: parse_stages(cascade).map_err(py_err)?,
        run_attack: attack,
        timing: if cost_units { Timing::CostUnits } else { Timing::Wall },
        ..CascadeConfig::default()
    };
    cfg.fsr.enabled = fsr;
    cfg.validate().map_err(py_err)?;
    let data = Dataset::new("python", points.into_iter().zip(labels).collect());
    let net = &net.inner;
    let report = py
        .detach(|| -> crv_core::Result<CascadeReport> {
            let mut run = crv_core::crv_verify(net, &data, epsilon, &cfg)?;
            if oracle {
                run.apply_oracle(&oracle_labels(net, &data, epsilon)?)?;
            }
            Ok(CascadeReport::new(&cfg, net, &data, vec![run]))
        })
        .map_err(py_err)?;
    Ok(report.to_json())
}

#[pymodule]
fn crv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(lp_bound, m)?)?;
    m.add_function(wrap_pyfunction!(sdp_bound, m)?)?;
    m.add_function(wrap_pyfunction!(exact_margin, m)?)?;
    m.add_function(wrap_pyfunction!(pgd, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(crv_verify, m)?)?;
    Ok(())
}
