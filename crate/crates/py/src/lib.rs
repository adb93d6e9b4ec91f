//! Python bindings: datasets, fitting, prediction, and the small exact
//! helpers that are handy for checking results from notebooks. Rows are
//! Python lists; categorical values are 0-based level indices here, matching
//! the core library rather than the CSV convention.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sign_core::config::{Hyperparams, McmcConfig, SignConfig};
use sign_core::data::{CatCol, Schema};
use sign_core::io::TraceFile;
use sign_core::partition::PyParams;
use sign_core::sign::SignReport;
use sign_core::{predict, synth, Predictor, Standardizer};
use std::path::Path;

fn to_py_err(e: sign_core::Error) -> PyErr {
    use sign_core::Error as E;
    match &e {
        E::Io { .. } => PyIOError::new_err(e.to_string()),
        E::State(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn columns_from_rows<T: Copy>(rows: &[Vec<T>], width: usize, what: &str) -> PyResult<Vec<Vec<T>>> {
    let mut cols: Vec<Vec<T>> = (0..width).map(|_| Vec::with_capacity(rows.len())).collect();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(PyValueError::new_err(format!(
                "{what} row {i} has {} values, expected {width}",
                row.len()
            )));
        }
        for (c, &v) in row.iter().enumerate() {
            cols[c].push(v);
        }
    }
    Ok(cols)
}

fn rows_from_columns<T: Copy>(cols: &[Vec<T>], n: usize) -> Vec<Vec<T>> {
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

/// In-memory dataset: outcomes, continuous rows, categorical rows.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    schema: Schema,
    data: sign_core::Dataset,
    labels: Option<Vec<usize>>,
}

#[pymethods]
impl PyDataset {
    /// Build a dataset from row-major lists. Categorical levels counts are
    /// inferred as max value + 1 unless given explicitly.
    #[new]
    #[pyo3(signature = (z, w, u, levels = None))]
    fn new(
        z: Vec<u8>,
        w: Vec<Vec<f64>>,
        u: Vec<Vec<usize>>,
        levels: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        let n = z.len();
        if w.len() != n || u.len() != n {
            return Err(PyValueError::new_err(format!(
                "z, w, u must agree in length, got {n}, {}, {}",
                w.len(),
                u.len()
            )));
        }
        let p = w.first().map_or(0, Vec::len);
        let q = u.first().map_or(0, Vec::len);
        let w_cols = columns_from_rows(&w, p, "continuous")?;
        let u_cols = columns_from_rows(&u, q, "categorical")?;
        let levels = match levels {
            Some(l) if l.len() != q => {
                return Err(PyValueError::new_err(format!(
                    "levels has {} entries for {q} categorical columns",
                    l.len()
                )))
            }
            Some(l) => l,
            None => u_cols
                .iter()
                .map(|c| c.iter().max().map_or(2, |&m| (m + 1).max(2)))
                .collect(),
        };
        let schema = Schema {
            response: "z".into(),
            continuous: (1..=p).map(|j| format!("w{j}")).collect(),
            categorical: (1..=q)
                .map(|j| CatCol { name: format!("u{j}"), levels: levels[j - 1] })
                .collect(),
        };
        let data = sign_core::Dataset { z, w: w_cols, u: u_cols };
        data.validate_against(&schema, true).map_err(to_py_err)?;
        Ok(PyDataset { schema, data, labels: None })
    }

    #[getter]
    fn z(&self) -> Vec<u8> {
        self.data.z.clone()
    }

    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        rows_from_columns(&self.data.w, self.data.n())
    }

    #[getter]
    fn u(&self) -> Vec<Vec<usize>> {
        rows_from_columns(&self.data.u, self.data.n())
    }

    /// True cluster per observation when the generator defines one.
    #[getter]
    fn labels(&self) -> Option<Vec<usize>> {
        self.labels.clone()
    }

    fn __len__(&self) -> usize {
        self.data.n()
    }

    fn schema_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.schema)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// A fitted model: the retained posterior draws plus, when it came from
/// fit(), the estimated partition and the run report.
#[pyclass(name = "Model")]
struct PyModel {
    tf: TraceFile,
    labels: Option<Vec<usize>>,
    report: Option<SignReport>,
}

#[pymethods]
impl PyModel {
    /// Estimated cluster per training observation (absent on loaded models).
    fn labels(&self) -> Option<Vec<usize>> {
        self.labels.clone()
    }

    #[getter]
    fn n_clusters(&self) -> Option<usize> {
        self.report.as_ref().map(|r| r.n_clusters)
    }

    fn report_json(&self) -> PyResult<Option<String>> {
        self.report
            .as_ref()
            .map(|r| {
                serde_json::to_string_pretty(r)
                    .map_err(|e| PyRuntimeError::new_err(e.to_string()))
            })
            .transpose()
    }

    /// Class-1 probability for each row.
    #[pyo3(signature = (w, u, seed = 0))]
    fn predict(&self, w: Vec<Vec<f64>>, u: Vec<Vec<usize>>, seed: u64) -> PyResult<Vec<f64>> {
        let n = w.len().max(u.len());
        if !w.is_empty() && !u.is_empty() && w.len() != u.len() {
            return Err(PyValueError::new_err(format!(
                "w has {} rows, u has {}",
                w.len(),
                u.len()
            )));
        }
        if n == 0 {
            return Ok(vec![]);
        }
        let p = self.tf.trace.schema.p();
        let q = self.tf.trace.schema.q();
        let w = if w.is_empty() && p == 0 { vec![vec![]; n] } else { w };
        let u = if u.is_empty() && q == 0 { vec![vec![]; n] } else { u };
        let mut data = sign_core::Dataset {
            z: vec![],
            w: columns_from_rows(&w, p, "continuous")?,
            u: columns_from_rows(&u, q, "categorical")?,
        };
        if let Some(s) = &self.tf.standardize {
            s.apply(&mut data).map_err(to_py_err)?;
        }
        let predictor = Predictor::new(&self.tf.trace, seed).map_err(to_py_err)?;
        predictor.predict_dataset(&data).map_err(to_py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.tf.save(Path::new(path)).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<PyModel> {
        let tf = TraceFile::load(Path::new(path)).map_err(to_py_err)?;
        Ok(PyModel { tf, labels: None, report: None })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(draws={}, n_obs={}, clusters={:?})",
            self.tf.trace.draws.len(),
            self.tf.trace.n_obs,
            self.n_clusters()
        )
    }
}

/// log EPPF of a partition with the given cluster sizes.
#[pyfunction]
fn log_eppf(sizes: Vec<u64>, alpha: f64, discount: f64) -> PyResult<f64> {
    let py = PyParams::new(alpha, discount).map_err(to_py_err)?;
    sign_core::partition::py_log_eppf(&sizes, &py).map_err(to_py_err)
}

/// Unnormalized log weights for placing a block of `item_size` observations
/// into each existing cluster or a new one (last entry).
#[pyfunction]
fn block_membership_log_weights(
    item_size: u64,
    cluster_sizes: Vec<u64>,
    alpha: f64,
    discount: f64,
) -> PyResult<Vec<f64>> {
    let py = PyParams::new(alpha, discount).map_err(to_py_err)?;
    sign_core::partition::block_membership_log_weights(item_size, &cluster_sizes, &py)
        .map_err(to_py_err)
}

/// All partitions of n items as canonical label vectors.
#[pyfunction]
fn enumerate_partitions(n: usize) -> Vec<Vec<usize>> {
    synth::enumerate_partitions(n)
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    predict::auc(&scores, &labels).map_err(to_py_err)
}

/// Reference generators: kind is "sim1" (five Gaussian clusters) or "sim2"
/// (one population, nonlinear response).
#[pyfunction]
#[pyo3(signature = (kind, n, seed = 0))]
fn simulate(kind: &str, n: usize, seed: u64) -> PyResult<PyDataset> {
    let sim = match kind {
        "sim1" => synth::gen_sim1(n, seed).map_err(to_py_err)?,
        "sim2" => synth::gen_sim2(n, seed).map_err(to_py_err)?,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown generator {other:?}, expected \"sim1\" or \"sim2\""
            )))
        }
    };
    Ok(PyDataset { schema: sim.schema, data: sim.data, labels: sim.labels })
}

#[pyfunction]
#[pyo3(signature = (
    data, *, n_iter = 10_000, burn_frac = 0.5, thin = 5, max_items_per_shard = 250,
    workers = 0, seed = 0, alpha = 1.0, discount = 0.5, tau_beta = 1.0,
    standardize = false
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    data: &PyDataset,
    n_iter: usize,
    burn_frac: f64,
    thin: usize,
    max_items_per_shard: usize,
    workers: usize,
    seed: u64,
    alpha: f64,
    discount: f64,
    tau_beta: f64,
    standardize: bool,
) -> PyResult<PyModel> {
    let hyper = Hyperparams {
        py: PyParams::new(alpha, discount).map_err(to_py_err)?,
        tau_beta,
        ..Hyperparams::default()
    };
    let cfg = SignConfig {
        max_items_per_shard,
        workers,
        seed,
        mcmc: McmcConfig { n_iter, burn_frac, thin, seed },
        ..SignConfig::default()
    };
    let mut train = data.data.clone();
    let standardizer = if standardize {
        let s = Standardizer::fit(&train);
        s.apply(&mut train).map_err(to_py_err)?;
        Some(s)
    } else {
        None
    };
    let fit = sign_core::run_sign(&train, &data.schema, &hyper, &cfg).map_err(to_py_err)?;
    Ok(PyModel {
        tf: TraceFile::new(fit.trace, standardizer),
        labels: Some(fit.labels),
        report: Some(fit.report),
    })
}

#[pymodule]
fn signpy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(log_eppf, m)?)?;
    m.add_function(wrap_pyfunction!(block_membership_log_weights, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_partitions, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    Ok(())
}
