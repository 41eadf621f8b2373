//! Python bindings: graph generation, spectra, complexity tables, Node2Vec
//! steps and the experiment runner. Structured results come back as plain
//! dicts and lists.

use ::geomem::analysis::complexity_row;
use ::geomem::cli::{
    load_target, preset, run_experiment, run_preset, verify, ExperimentConfig, PRESET_NAMES,
};
use ::geomem::graph::{generate, laplacian, spectrum, Graph, TopologyTag};
use ::geomem::models::n2v_init;
use ::geomem::tensor::Tensor;
use ::geomem::GeomemError;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;
use std::path::Path;

fn err(e: GeomemError) -> PyErr {
    match e {
        GeomemError::Numeric { .. } => PyArithmeticError::new_err(e.to_string()),
        GeomemError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (_, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(xs) => {
            let items = xs
                .iter()
                .map(|x| to_py(py, x))
                .collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, x) in map {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Accepts a JSON string or any JSON-serialisable Python object.
fn json_text(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.extract::<String>() {
        return Ok(s);
    }
    obj.py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn graph(topology: &str, seed: u64) -> PyResult<Graph> {
    let tag: TopologyTag = topology.parse().map_err(err)?;
    generate(tag, seed).map_err(err)
}

/// Generates a graph, e.g. `generate_graph("path_star(4,4)")`.
#[pyfunction]
#[pyo3(signature = (topology, seed = 0))]
fn generate_graph<'py>(py: Python<'py>, topology: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let g = graph(topology, seed)?;
    let out = serialize(py, &g)?;
    out.set_item("hash", g.content_hash())?;
    out.set_item("text", g.to_text())?;
    Ok(out)
}

/// `L = (I − D⁻¹A) + (I − D⁻¹A)ᵀ` as a list of rows.
#[pyfunction]
#[pyo3(signature = (topology, seed = 0))]
fn laplacian_matrix(topology: &str, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&laplacian(&graph(topology, seed)?).map_err(err)?))
}

/// Eigenvalues of `−L` in descending order and the matching eigenvectors
/// (one list per eigenvector).
#[pyfunction]
#[pyo3(signature = (topology, seed = 0))]
fn laplacian_spectrum(topology: &str, seed: u64) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let eig = spectrum(&laplacian(&graph(topology, seed)?).map_err(err)?).map_err(err)?;
    Ok((eig.values, rows(&eig.vectors.transpose())))
}

/// Closed-form bit and ℓ2 memory costs of a graph.
#[pyfunction]
#[pyo3(signature = (topology, m, delta, seed = 0))]
fn complexity<'py>(
    py: Python<'py>,
    topology: &str,
    m: usize,
    delta: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let row = complexity_row(&graph(topology, seed)?, m, delta).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("graph", row.graph)?;
    d.set_item("assoc_bits", row.assoc_bits)?;
    d.set_item("assoc_bits_both", row.assoc_bits_both)?;
    d.set_item("geom_bits", row.geom_bits)?;
    d.set_item("assoc_l2", row.assoc_l2)?;
    d.set_item("geom_l2", row.geom_l2)?;
    Ok(d.into_any())
}

/// Runs the Node2Vec flow `V ← V + η·C·V` from a Gaussian init and returns
/// the final embedding rows.
#[pyfunction]
#[pyo3(signature = (topology, m, scale, eta, steps, seed = 0))]
fn node2vec(
    topology: &str,
    m: usize,
    scale: f64,
    eta: f64,
    steps: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let g = graph(topology, seed)?;
    let r = g.random_walk().map_err(err)?;
    let mut s = n2v_init(g.n_nodes, m, scale, seed).map_err(err)?;
    for _ in 0..steps {
        s.step_with(&r, eta).map_err(err)?;
    }
    Ok(rows(&s.v))
}

/// The coefficient matrix `C = (R − P) + (R − P)ᵀ` of an embedding.
#[pyfunction]
#[pyo3(signature = (topology, embedding, seed = 0))]
fn node2vec_coefficient(
    topology: &str,
    embedding: Vec<Vec<f64>>,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let g = graph(topology, seed)?;
    let s = ::geomem::models::Node2Vec {
        v: Tensor::from_rows(&embedding).map_err(err)?,
    };
    Ok(rows(
        &s.coefficient(&g.random_walk().map_err(err)?).map_err(err)?,
    ))
}

/// Names of the built-in presets.
#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

/// A built-in preset as a dict.
#[pyfunction]
fn get_preset<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
    serialize(py, &preset(name).map_err(err)?)
}

/// Runs one experiment config (dict or JSON string) into `out_dir`.
#[pyfunction]
fn run_config<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyAny>,
    out_dir: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: ExperimentConfig = serde_json::from_str(&json_text(config)?)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let summary = py
        .detach(|| run_experiment(&cfg, Path::new(out_dir)))
        .map_err(err)?;
    serialize(py, &summary)
}

/// Runs a preset name or preset/config JSON path; returns the run summaries.
#[pyfunction]
fn run<'py>(py: Python<'py>, target: &str, out_dir: &str) -> PyResult<Bound<'py, PyAny>> {
    let p = load_target(target).map_err(err)?;
    let rows = py
        .detach(|| run_preset(&p, Path::new(out_dir)))
        .map_err(err)?;
    serialize(py, &rows)
}

/// Re-hashes a run or preset directory; returns the number of files checked.
#[pyfunction]
fn verify_dir(dir: &str) -> PyResult<usize> {
    verify(Path::new(dir)).map_err(err)
}

#[pymodule]
#[pyo3(name = "geomem")]
fn geomem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(generate_graph, m)?)?;
    m.add_function(wrap_pyfunction!(laplacian_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(laplacian_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(complexity, m)?)?;
    m.add_function(wrap_pyfunction!(node2vec, m)?)?;
    m.add_function(wrap_pyfunction!(node2vec_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(get_preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify_dir, m)?)?;
    Ok(())
}
