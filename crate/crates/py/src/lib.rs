//! Python bindings: datasets, networks, the loss functions, the joint
//! training loops, and the dynamic-evaluation protocols.
//!
//! Build with `cargo build --release -p sila-py`, then import the produced
//! `libsila_py.so` as `sila_py` (see `python/smoke_test.py`).

use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sila_core::autodiff::Tape;
use sila_core::data::{self, Split};
use sila_core::dynamic_eval::{self, BudgetProfile};
use sila_core::error::SilaError;
use sila_core::losses::{self, LossWeights};
use sila_core::models::{self, MultiExitSpec, NetworkSpec, ParameterSet};
use sila_core::training::{self, LossMode, TrainConfig};

fn py_err(err: SilaError) -> PyErr {
    PyValueError::new_err(format!("[{}] {err}", err.category()))
}

fn parse_split(split: &str) -> PyResult<Split> {
    match split {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!("unknown split {other:?}"))),
    }
}

fn flatten(rows: &[Vec<f64>], what: &str) -> PyResult<(usize, usize, Vec<f64>)> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what}: empty matrix")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: ragged matrix")));
    }
    Ok((rows.len(), cols, rows.iter().flatten().copied().collect()))
}

fn unflatten(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    flat.chunks(cols).map(|c| c.to_vec()).collect()
}

/// Labelled feature matrix.
#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (features, labels, classes, split="train"))]
    fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        classes: usize,
        split: &str,
    ) -> PyResult<Self> {
        let (_, cols, flat) = flatten(&features, "features")?;
        let inner = data::Dataset::new(flat, cols, labels, classes, parse_split(split)?)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn split(&self) -> String {
        self.inner.split().to_string()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        unflatten(self.inner.features(), self.inner.dim())
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        self.inner.to_csv(Path::new(path)).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, classes=None, split="train"))]
    fn from_csv(path: &str, classes: Option<usize>, split: &str) -> PyResult<Self> {
        let inner = data::Dataset::from_csv(Path::new(path), classes, parse_split(split)?)
            .map_err(py_err)?;
        Ok(Self { inner })
    }
}

/// Class-balanced Gaussian blobs split 70/15/15.
#[pyfunction]
fn generate_blobs(
    classes: usize,
    per_class: usize,
    center_spread: f64,
    noise_std: f64,
    dim: usize,
    seed: u64,
) -> PyResult<(PyDataset, PyDataset, PyDataset)> {
    let spec = data::BlobSpec {
        classes,
        per_class,
        center_spread,
        noise_std,
        dim,
        seed,
    };
    let (train, validation, test) = data::generate_blobs(&spec).map_err(py_err)?;
    Ok((
        PyDataset { inner: train },
        PyDataset { inner: validation },
        PyDataset { inner: test },
    ))
}

/// Load an IDX image/label file pair (features scaled to [0, 1]).
#[pyfunction]
#[pyo3(signature = (images, labels, split="train"))]
fn load_mnist_idx(images: &str, labels: &str, split: &str) -> PyResult<PyDataset> {
    let inner = data::load_mnist_idx(Path::new(images), Path::new(labels), parse_split(split)?)
        .map_err(py_err)?;
    Ok(PyDataset { inner })
}

/// Plain feedforward classifier.
#[pyclass(name = "Network", skip_from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    spec: NetworkSpec,
    params: ParameterSet,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn build(input_dim: usize, hidden: Vec<usize>, classes: usize, seed: u64) -> PyResult<Self> {
        let spec = NetworkSpec::new(input_dim, hidden, classes);
        let params = models::build_network(&spec, seed).map_err(py_err)?;
        Ok(Self { spec, params })
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }

    fn forward(&self, batch: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let (rows, cols, flat) = flatten(&batch, "batch")?;
        let mut tape = Tape::new();
        let x = tape.constant(&[rows, cols], flat).map_err(py_err)?;
        let staged = self.params.stage_frozen(&mut tape).map_err(py_err)?;
        let z = staged.forward(&mut tape, x).map_err(py_err)?;
        Ok(unflatten(tape.values(z), self.spec.classes))
    }

    fn penultimate_features(&self, batch: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let (rows, cols, flat) = flatten(&batch, "batch")?;
        let mut tape = Tape::new();
        let x = tape.constant(&[rows, cols], flat).map_err(py_err)?;
        let staged = self.params.stage_frozen(&mut tape).map_err(py_err)?;
        let f = staged.penultimate_features(&mut tape, x).map_err(py_err)?;
        let width = tape.shape(f)[1];
        Ok(unflatten(tape.values(f), width))
    }

    fn perturb(&self, sigma: f64, seed: u64) -> PyResult<Self> {
        let params = self.params.perturbed(sigma, seed).map_err(py_err)?;
        Ok(Self {
            spec: self.spec.clone(),
            params,
        })
    }

    fn evaluate(&self, dataset: &PyDataset, k: usize) -> PyResult<(f64, f64, f64)> {
        let m = training::evaluate(&self.params, &dataset.inner, k).map_err(py_err)?;
        Ok((m.top1, m.topk, m.nll))
    }

    fn nll(&self, dataset: &PyDataset) -> PyResult<f64> {
        training::dataset_nll(&self.params, &dataset.inner).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.params.save(Path::new(path)).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let params = ParameterSet::load(Path::new(path)).map_err(py_err)?;
        let spec = match params.arch() {
            models::Arch::Mlp(s) => s.clone(),
            models::Arch::MultiExit(_) => {
                return Err(PyValueError::new_err(
                    "checkpoint holds a multi-exit network; use MultiExitNetwork.load",
                ))
            }
        };
        Ok(Self { spec, params })
    }
}

/// Chain of blocks with a classifier head after each block.
#[pyclass(name = "MultiExitNetwork", skip_from_py_object)]
#[derive(Clone)]
struct PyMultiExitNetwork {
    spec: MultiExitSpec,
    params: ParameterSet,
}

#[pymethods]
impl PyMultiExitNetwork {
    #[staticmethod]
    fn build(
        input_dim: usize,
        blocks: Vec<Vec<usize>>,
        classes: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = MultiExitSpec::new(input_dim, blocks, classes);
        let params = models::build_multi_exit(&spec, seed).map_err(py_err)?;
        Ok(Self { spec, params })
    }

    #[getter]
    fn exits(&self) -> usize {
        self.spec.exits()
    }

    #[getter]
    fn exit_costs(&self) -> Vec<f64> {
        self.spec.exit_costs()
    }

    /// Per-exit logits for a batch: `result[exit][sample][class]`.
    fn forward(&self, batch: Vec<Vec<f64>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let (rows, cols, flat) = flatten(&batch, "batch")?;
        let mut tape = Tape::new();
        let x = tape.constant(&[rows, cols], flat).map_err(py_err)?;
        let staged = self.params.stage_frozen(&mut tape).map_err(py_err)?;
        let exits = staged.forward_multi_exit(&mut tape, x).map_err(py_err)?;
        Ok(exits
            .iter()
            .map(|&e| unflatten(tape.values(e), self.spec.classes))
            .collect())
    }

    /// `(budget, top1, mean_cost)` per budget, one exit for all samples.
    fn evaluate_anytime(
        &self,
        test: &PyDataset,
        budgets: Vec<f64>,
    ) -> PyResult<Vec<(f64, f64, f64)>> {
        let profile = BudgetProfile::from_spec(&self.spec).map_err(py_err)?;
        let curve = dynamic_eval::evaluate_anytime(&self.params, &test.inner, &profile, &budgets)
            .map_err(py_err)?;
        Ok(curve
            .points
            .iter()
            .map(|p| (p.budget, p.top1, p.mean_cost))
            .collect())
    }

    /// `(budget, top1, mean_cost)` per budget; thresholds are calibrated on
    /// the validation split so easy samples exit early.
    fn evaluate_budgeted(
        &self,
        test: &PyDataset,
        validation: &PyDataset,
        budgets: Vec<f64>,
    ) -> PyResult<Vec<(f64, f64, f64)>> {
        let profile = BudgetProfile::from_spec(&self.spec).map_err(py_err)?;
        let curve = dynamic_eval::evaluate_budgeted(
            &self.params,
            &test.inner,
            &validation.inner,
            &profile,
            &budgets,
        )
        .map_err(py_err)?;
        Ok(curve
            .points
            .iter()
            .map(|p| (p.budget, p.top1, p.mean_cost))
            .collect())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.params.save(Path::new(path)).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let params = ParameterSet::load(Path::new(path)).map_err(py_err)?;
        let spec = match params.arch() {
            models::Arch::MultiExit(s) => s.clone(),
            models::Arch::Mlp(_) => {
                return Err(PyValueError::new_err(
                    "checkpoint holds a plain network; use Network.load",
                ))
            }
        };
        Ok(Self { spec, params })
    }
}

/// Per-epoch training history of one network or exit.
#[pyclass(name = "TrainReport", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainReport {
    inner: training::TrainReport,
}

#[pymethods]
impl PyTrainReport {
    #[getter]
    fn term_names(&self) -> Vec<String> {
        self.inner.term_names.clone()
    }

    #[getter]
    fn best_top1(&self) -> f64 {
        self.inner.best_top1()
    }

    /// `(epoch, lr, loss_total, top1, topk, nll)` per epoch.
    fn rows(&self) -> Vec<(usize, f64, f64, f64, f64, f64)> {
        self.inner
            .epochs
            .iter()
            .map(|e| (e.epoch, e.lr, e.loss_total, e.top1, e.topk, e.nll))
            .collect()
    }

    fn loss_terms(&self) -> Vec<Vec<f64>> {
        self.inner.epochs.iter().map(|e| e.loss_terms.clone()).collect()
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        self.inner.to_csv(Path::new(path)).map_err(py_err)
    }
}

#[allow(clippy::too_many_arguments)]
fn config_from_args(
    epochs: usize,
    batch_size: usize,
    lr: f64,
    milestones: Vec<usize>,
    lr_decay: f64,
    beta: Vec<f64>,
    mode: &str,
    lambda_dml: f64,
    seed: u64,
    top_k: Option<usize>,
) -> PyResult<TrainConfig> {
    let loss_mode: LossMode = mode
        .parse()
        .map_err(|e: SilaError| PyValueError::new_err(e.to_string()))?;
    let config = TrainConfig {
        epochs,
        batch_size,
        initial_lr: lr,
        milestones,
        lr_decay,
        beta,
        loss_mode,
        lambda_dml,
        momentum: 0.0,
        seed,
        top_k,
    };
    config.validate().map_err(py_err)?;
    Ok(config)
}

/// Jointly train two networks; returns both nets and their reports.
#[pyfunction]
#[pyo3(signature = (net1, net2, train, test, epochs, batch_size=128, lr=0.1,
    milestones=vec![], lr_decay=0.1, beta=vec![1.0, 1.0], mode="sila",
    lambda_dml=1.0, seed=0, top_k=None))]
#[allow(clippy::too_many_arguments)]
fn train_pair(
    net1: &PyNetwork,
    net2: &PyNetwork,
    train: &PyDataset,
    test: &PyDataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    milestones: Vec<usize>,
    lr_decay: f64,
    beta: Vec<f64>,
    mode: &str,
    lambda_dml: f64,
    seed: u64,
    top_k: Option<usize>,
) -> PyResult<(PyNetwork, PyNetwork, PyTrainReport, PyTrainReport)> {
    let config = config_from_args(
        epochs, batch_size, lr, milestones, lr_decay, beta, mode, lambda_dml, seed, top_k,
    )?;
    let (p1, p2, r1, r2) =
        training::train_pair(&net1.spec, &net2.spec, &train.inner, &test.inner, &config)
            .map_err(py_err)?;
    Ok((
        PyNetwork {
            spec: net1.spec.clone(),
            params: p1,
        },
        PyNetwork {
            spec: net2.spec.clone(),
            params: p2,
        },
        PyTrainReport { inner: r1 },
        PyTrainReport { inner: r2 },
    ))
}

/// Train a multi-exit chain; returns the net and one report per exit.
#[pyfunction]
#[pyo3(signature = (net, train, test, epochs, batch_size=128, lr=0.1,
    milestones=vec![], lr_decay=0.1, beta=vec![], mode="sila", seed=0,
    top_k=None))]
#[allow(clippy::too_many_arguments)]
fn train_multi_exit(
    net: &PyMultiExitNetwork,
    train: &PyDataset,
    test: &PyDataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    milestones: Vec<usize>,
    lr_decay: f64,
    beta: Vec<f64>,
    mode: &str,
    seed: u64,
    top_k: Option<usize>,
) -> PyResult<(PyMultiExitNetwork, Vec<PyTrainReport>)> {
    let config = config_from_args(
        epochs, batch_size, lr, milestones, lr_decay, beta, mode, 1.0, seed, top_k,
    )?;
    let (params, reports) =
        training::train_multi_exit(&net.spec, &train.inner, &test.inner, &config)
            .map_err(py_err)?;
    Ok((
        PyMultiExitNetwork {
            spec: net.spec.clone(),
            params,
        },
        reports
            .into_iter()
            .map(|r| PyTrainReport { inner: r })
            .collect(),
    ))
}

/// Mean softmax cross-entropy of a logit matrix against labels.
#[pyfunction]
fn cross_entropy(logits: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    let (rows, cols, flat) = flatten(&logits, "logits")?;
    let mut tape = Tape::new();
    let z = tape.constant(&[rows, cols], flat).map_err(py_err)?;
    let loss = losses::cross_entropy(&mut tape, z, &labels).map_err(py_err)?;
    tape.scalar(loss).map_err(py_err)
}

/// `(target_logit, non_target_lse, d_target_logit, d_non_target_lse)` of
/// single-sample cross-entropy.
#[pyfunction]
fn loss_diagnostics(logits: Vec<f64>, label: usize) -> PyResult<(f64, f64, f64, f64)> {
    let d = losses::loss_diagnostics(&logits, label).map_err(py_err)?;
    Ok((
        d.target_logit,
        d.non_target_lse,
        d.d_target_logit,
        d.d_non_target_lse,
    ))
}

fn groups_on_tape(
    tape: &mut Tape,
    groups: &[Vec<Vec<f64>>],
) -> PyResult<Vec<sila_core::autodiff::NodeId>> {
    let mut ids = Vec::with_capacity(groups.len());
    for g in groups {
        let (rows, cols, flat) = flatten(g, "logit group")?;
        ids.push(tape.constant(&[rows, cols], flat).map_err(py_err)?);
    }
    Ok(ids)
}

/// Weighted sum of group losses over the jointly normalized concatenation.
#[pyfunction]
fn sila_loss(groups: Vec<Vec<Vec<f64>>>, labels: Vec<usize>, beta: Vec<f64>) -> PyResult<f64> {
    let mut tape = Tape::new();
    let ids = groups_on_tape(&mut tape, &groups)?;
    let weights = LossWeights::new(beta).map_err(py_err)?;
    let loss = losses::sila_loss(&mut tape, &ids, &labels, &weights).map_err(py_err)?;
    tape.scalar(loss).map_err(py_err)
}

/// Cross-entropy over the concatenated block with the label shifted into
/// the given group (0-based).
#[pyfunction]
fn group_loss(groups: Vec<Vec<Vec<f64>>>, labels: Vec<usize>, group: usize) -> PyResult<f64> {
    let mut tape = Tape::new();
    let ids = groups_on_tape(&mut tape, &groups)?;
    let siamese = losses::make_siamese(&mut tape, &ids).map_err(py_err)?;
    let loss = losses::group_loss(&mut tape, &siamese, &labels, group).map_err(py_err)?;
    tape.scalar(loss).map_err(py_err)
}

/// Mean KL from the peer's softmax distribution to the student's.
#[pyfunction]
fn dml_kl_loss(student: Vec<Vec<f64>>, peer: Vec<Vec<f64>>) -> PyResult<f64> {
    let (rows, cols, sflat) = flatten(&student, "student")?;
    let (prow, pcol, pflat) = flatten(&peer, "peer")?;
    let mut tape = Tape::new();
    let s = tape.constant(&[rows, cols], sflat).map_err(py_err)?;
    let p = tape.constant(&[prow, pcol], pflat).map_err(py_err)?;
    let loss = losses::dml_kl_loss(&mut tape, s, p).map_err(py_err)?;
    tape.scalar(loss).map_err(py_err)
}

/// Siamese loss plus symmetric detached-peer KL terms.
#[pyfunction]
fn combined_loss(
    groups: Vec<Vec<Vec<f64>>>,
    labels: Vec<usize>,
    beta: Vec<f64>,
    lambda_dml: f64,
) -> PyResult<f64> {
    let mut tape = Tape::new();
    let ids = groups_on_tape(&mut tape, &groups)?;
    let weights = LossWeights::new(beta).map_err(py_err)?;
    let loss = losses::combined_loss(&mut tape, &ids, &labels, &weights, lambda_dml)
        .map_err(py_err)?;
    tape.scalar(loss).map_err(py_err)
}

#[pymodule]
fn sila_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyMultiExitNetwork>()?;
    m.add_class::<PyTrainReport>()?;
    m.add_function(wrap_pyfunction!(generate_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(load_mnist_idx, m)?)?;
    m.add_function(wrap_pyfunction!(train_pair, m)?)?;
    m.add_function(wrap_pyfunction!(train_multi_exit, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(loss_diagnostics, m)?)?;
    m.add_function(wrap_pyfunction!(sila_loss, m)?)?;
    m.add_function(wrap_pyfunction!(group_loss, m)?)?;
    m.add_function(wrap_pyfunction!(dml_kl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    Ok(())
}
