//! Python bindings: the projection primitives plus a session object that
//! drives the full compression pipeline from a run-config JSON string.

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use admm_compress::config::{ModelConfig, RunConfig};
use admm_compress::error::Error;
use admm_compress::model::CompressedModel;
use admm_compress::nn::Network;
use admm_compress::pipeline;
use admm_compress::projection;
use admm_compress::tensor::{PruneMask, WeightTensor};
use admm_compress::{checkpoint, data};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(err) => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn tensor_from(values: Vec<f32>) -> WeightTensor {
    WeightTensor::from_vec(values)
}

fn mask_from(keep: Vec<bool>) -> PyResult<PruneMask> {
    let n = keep.len();
    PruneMask::new(vec![n], keep).map_err(to_py_err)
}

/// Keep the `alpha` largest-magnitude entries; returns (values, mask).
#[pyfunction]
fn project_sparsity(values: Vec<f32>, alpha: usize) -> PyResult<(Vec<f32>, Vec<bool>)> {
    let (t, mask) = projection::project_sparsity(&tensor_from(values), alpha).map_err(to_py_err)?;
    Ok((t.into_data(), mask.keep().to_vec()))
}

/// Map surviving entries to the nearest level of {±q, ..., ±(m/2)q}.
#[pyfunction]
fn project_quantize(values: Vec<f32>, keep: Vec<bool>, m: usize, q: f32) -> PyResult<Vec<f32>> {
    let spec = projection::QuantSpec::new(m, q).map_err(to_py_err)?;
    let mask = mask_from(keep)?;
    Ok(projection::project_quantize(&tensor_from(values), &spec, &mask).into_data())
}

/// Interval minimizing the total squared quantization error.
#[pyfunction]
fn fit_interval(values: Vec<f32>, keep: Vec<bool>, m: usize) -> PyResult<f32> {
    let mask = mask_from(keep)?;
    projection::fit_interval(&tensor_from(values), &mask, m).map_err(to_py_err)
}

/// Quantization levels for (m, q), ascending.
#[pyfunction]
fn quant_levels(m: usize, q: f32) -> PyResult<Vec<f32>> {
    Ok(projection::QuantSpec::new(m, q).map_err(to_py_err)?.levels())
}

/// Seeded 1-D k-means centroids over the surviving entries.
#[pyfunction]
fn init_centroids(values: Vec<f32>, keep: Vec<bool>, m: usize, seed: u64) -> PyResult<Vec<f32>> {
    let mask = mask_from(keep)?;
    Ok(projection::init_centroids(&tensor_from(values), &mask, m, seed)
        .map_err(to_py_err)?
        .centroids)
}

/// One assign-and-average round; returns (values, centroids, assignment).
#[pyfunction]
fn project_cluster(
    values: Vec<f32>,
    keep: Vec<bool>,
    m: usize,
    centroids: Vec<f32>,
) -> PyResult<(Vec<f32>, Vec<f32>, Vec<u32>)> {
    let spec = projection::ClusterSpec::new(m, centroids).map_err(to_py_err)?;
    let mask = mask_from(keep)?;
    let (t, spec) =
        projection::project_cluster(&tensor_from(values), &spec, &mask).map_err(to_py_err)?;
    Ok((t.into_data(), spec.centroids, spec.assignment))
}

/// A loaded run configuration plus its data and model, driving the same
/// pipeline stages as the CLI.
#[pyclass]
struct Session {
    cfg: RunConfig,
    net: Option<Network>,
    train: data::Dataset,
    test: data::Dataset,
    masks: Option<Vec<PruneMask>>,
    codebooks: Vec<admm_compress::model::Codebook>,
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (config_json, data_dir = None))]
    fn new(config_json: &str, data_dir: Option<&str>) -> PyResult<Self> {
        let cfg = RunConfig::parse(config_json).map_err(to_py_err)?;
        if matches!(cfg.model, ModelConfig::LeastSquares { .. }) {
            return Err(PyValueError::new_err(
                "least-squares configs run through run_toy()",
            ));
        }
        let dir = Path::new(data_dir.unwrap_or("data/mnist"));
        let (train, test) = pipeline::load_data(&cfg.data, dir, cfg.seed).map_err(to_py_err)?;
        let net = pipeline::build_network(&cfg.model, cfg.seed).map_err(to_py_err)?;
        Ok(Self {
            cfg,
            net: Some(net),
            train,
            test,
            masks: None,
            codebooks: Vec::new(),
        })
    }

    fn train_baseline(&mut self) -> PyResult<f64> {
        let net = self.net.as_mut().expect("network present");
        pipeline::train_baseline(net, &self.train, &self.test, &self.cfg.train.clone(), self.cfg.seed)
            .map_err(to_py_err)
    }

    fn accuracy(&self) -> PyResult<f64> {
        pipeline::evaluate(self.net.as_ref().unwrap(), &self.test).map_err(to_py_err)
    }

    fn prune(&mut self) -> PyResult<f64> {
        let mut net = self.net.take().unwrap();
        let run = pipeline::run_prune(&self.cfg, &mut net, &self.train, &self.test)
            .map_err(to_py_err)?;
        self.masks = Some(run.outcome.masks);
        self.net = Some(net);
        Ok(run.accuracy_after)
    }

    fn quantize(&mut self) -> PyResult<f64> {
        let masks = self
            .masks
            .clone()
            .ok_or_else(|| PyValueError::new_err("prune before quantize"))?;
        let mut net = self.net.take().unwrap();
        let run = pipeline::run_quantize(&self.cfg, &mut net, &masks, &self.train, &self.test)
            .map_err(to_py_err)?;
        self.codebooks = run.codebooks;
        self.net = Some(net);
        Ok(run.accuracy_after)
    }

    fn cluster(&mut self) -> PyResult<f64> {
        let masks = self
            .masks
            .clone()
            .ok_or_else(|| PyValueError::new_err("prune before cluster"))?;
        let mut net = self.net.take().unwrap();
        let run = pipeline::run_cluster(&self.cfg, &mut net, &masks, &self.train, &self.test)
            .map_err(to_py_err)?;
        self.codebooks = run.codebooks;
        self.net = Some(net);
        Ok(run.accuracy_after)
    }

    fn nonzeros(&self) -> Vec<usize> {
        self.net
            .as_ref()
            .unwrap()
            .params()
            .iter()
            .map(|p| p.weights.count_nonzero())
            .collect()
    }

    fn weight_counts(&self) -> Vec<usize> {
        self.net
            .as_ref()
            .unwrap()
            .params()
            .iter()
            .map(|p| p.weights.numel())
            .collect()
    }

    /// Pack the finalized model; returns the .admmc byte stream.
    fn pack(&self) -> PyResult<Vec<u8>> {
        if self.codebooks.is_empty() {
            return Err(PyValueError::new_err("quantize or cluster before pack"));
        }
        let net = self.net.as_ref().unwrap();
        let masks = pipeline::masks_from_zeros(net);
        let model = CompressedModel::from_network(net, &masks, &self.codebooks)
            .map_err(to_py_err)?;
        Ok(model.encode())
    }

    /// Decode a packed stream and evaluate it on this session's test set.
    fn unpack_and_eval(&self, bytes: Vec<u8>) -> PyResult<f64> {
        let model = CompressedModel::decode(&bytes).map_err(to_py_err)?;
        let net = model.to_network().map_err(to_py_err)?;
        pipeline::evaluate(&net, &self.test).map_err(to_py_err)
    }

    fn save_checkpoint(&self, path: &str) -> PyResult<()> {
        checkpoint::save(self.net.as_ref().unwrap(), Path::new(path)).map_err(to_py_err)
    }

    fn load_checkpoint(&mut self, path: &str) -> PyResult<()> {
        self.net = Some(checkpoint::load(Path::new(path)).map_err(to_py_err)?);
        Ok(())
    }

    /// Compression ratio report for the packed model, as a JSON string.
    fn ratio_report(&self) -> PyResult<String> {
        let net = self.net.as_ref().unwrap();
        let masks = pipeline::masks_from_zeros(net);
        let model = CompressedModel::from_network(net, &masks, &self.codebooks)
            .map_err(to_py_err)?;
        let report =
            admm_compress::model::compute_ratios(&model.layer_stats(), true).map_err(to_py_err)?;
        Ok(serde_json::to_string_pretty(&report).expect("report serializes"))
    }
}

/// Runs a least-squares toy config and returns
/// (achieved_objective, oracle_objective).
#[pyfunction]
fn run_toy(config_json: &str) -> PyResult<(f64, f64)> {
    let cfg = RunConfig::parse(config_json).map_err(to_py_err)?;
    let run = pipeline::run_toy(&cfg).map_err(to_py_err)?;
    Ok((run.achieved_objective, run.oracle_objective))
}

#[pymodule]
#[pyo3(name = "admm_compress")]
fn admm_compress_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(project_sparsity, m)?)?;
    m.add_function(wrap_pyfunction!(project_quantize, m)?)?;
    m.add_function(wrap_pyfunction!(fit_interval, m)?)?;
    m.add_function(wrap_pyfunction!(quant_levels, m)?)?;
    m.add_function(wrap_pyfunction!(init_centroids, m)?)?;
    m.add_function(wrap_pyfunction!(project_cluster, m)?)?;
    m.add_function(wrap_pyfunction!(run_toy, m)?)?;
    m.add_class::<Session>()?;
    Ok(())
}
