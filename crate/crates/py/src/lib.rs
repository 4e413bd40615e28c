//! Python bindings: synthetic data, training, evaluation, context selection
//! and checkpoints. Tensors cross the boundary as nested lists of floats.

use std::path::PathBuf;

use affect_np::context::select_context;
use affect_np::data::{generate_synthetic, load_dataset, save_dataset};
use affect_np::eval::{evaluate, pseudo_label_report, sample_traces};
use affect_np::model::Sampling;
use affect_np::{checkpoint, training};
use affect_np::{ContextMode, ContextTargetSplit, LabelSource, LossVariant, ModelVariant, RunConfig, Task, Tensor};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: affect_np::Error) -> PyErr {
    match e {
        affect_np::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        affect_np::Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = affect_np::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

type Rows = Vec<Vec<f64>>;

fn rows(t: &Tensor) -> Rows {
    (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect()
}

fn matrix(v: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&v).map_err(err)
}

/// One sequence of per-frame features, labels and pseudo-labels.
#[pyclass(name = "Sequence", module = "affect_np")]
#[derive(Clone)]
struct PySequence {
    inner: affect_np::Sequence,
}

#[pymethods]
impl PySequence {
    #[new]
    fn new(id: String, features: Vec<Vec<f64>>, labels: Vec<Vec<f64>>, pseudo_labels: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = affect_np::Sequence::new(id, matrix(features)?, matrix(labels)?, matrix(pseudo_labels)?)
            .map_err(err)?;
        Ok(PySequence { inner })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows(self.inner.features())
    }

    #[getter]
    fn labels(&self) -> Vec<Vec<f64>> {
        rows(self.inner.labels())
    }

    #[getter]
    fn pseudo_labels(&self) -> Vec<Vec<f64>> {
        rows(self.inner.pseudo_labels())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn window(&self, start: usize, length: usize) -> PyResult<Self> {
        Ok(PySequence {
            inner: self.inner.window(start, length).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence(id={:?}, frames={}, feature_dim={}, label_dim={})",
            self.inner.id(),
            self.inner.len(),
            self.inner.feature_dim(),
            self.inner.label_dim()
        )
    }
}

fn unwrap_seqs(seqs: Vec<PySequence>) -> Vec<affect_np::Sequence> {
    seqs.into_iter().map(|s| s.inner).collect()
}

fn wrap_seqs(seqs: Vec<affect_np::Sequence>) -> Vec<PySequence> {
    seqs.into_iter().map(|inner| PySequence { inner }).collect()
}

/// Run configuration; round-trips through JSON.
#[pyclass(name = "RunConfig", module = "affect_np")]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Task defaults for `task` ("va" or "au") and the given data dimensions.
    #[new]
    #[pyo3(signature = (task="va", feature_dim=None, label_dim=None))]
    fn new(task: &str, feature_dim: Option<usize>, label_dim: Option<usize>) -> PyResult<Self> {
        let task: Task = parse(task)?;
        let mut inner = RunConfig::for_task(task);
        if let Some(f) = feature_dim {
            inner.model.feature_dim = f;
            inner.model.label_proj_dim = f;
        }
        if let Some(l) = label_dim {
            inner.model.label_dim = l;
        }
        Ok(PyRunConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: RunConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(PyRunConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Sets fields by name: variant, loss, lambda_kl, lambda_reg, lr,
    /// batch_size, epochs, iters_per_epoch, seed, num_context_eval,
    /// eval_context_mode, and the model widths.
    #[pyo3(signature = (**kwargs))]
    fn update(&mut self, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
        let Some(kwargs) = kwargs else { return Ok(()) };
        let c = &mut self.inner;
        for (k, v) in kwargs.iter() {
            let key: String = k.extract()?;
            match key.as_str() {
                "variant" => c.variant = parse::<ModelVariant>(&v.extract::<String>()?)?,
                "loss" => c.loss.variant = parse::<LossVariant>(&v.extract::<String>()?)?,
                "eval_context_mode" => c.eval_context_mode = parse::<ContextMode>(&v.extract::<String>()?)?,
                "lambda_kl" => c.loss.lambda_kl = v.extract()?,
                "lambda_reg" => c.loss.lambda_reg = v.extract()?,
                "lr" => c.lr = v.extract()?,
                "weight_decay" => c.weight_decay = v.extract()?,
                "batch_size" => c.batch_size = v.extract()?,
                "epochs" => c.epochs = v.extract()?,
                "iters_per_epoch" => c.iters_per_epoch = v.extract()?,
                "seed" => c.seed = v.extract()?,
                "num_context_eval" => c.num_context_eval = v.extract()?,
                "mix_prob" => c.mix_prob = v.extract()?,
                "label_proj_dim" => c.model.label_proj_dim = v.extract()?,
                "encoder_hidden" => c.model.encoder_hidden = v.extract()?,
                "repr_dim" => c.model.repr_dim = v.extract()?,
                "latent_dim" => c.model.latent_dim = v.extract()?,
                "decoder_hidden" => c.model.decoder_hidden = v.extract()?,
                "attention_heads" => c.model.attention_heads = v.extract()?,
                "attention_head_dim" => c.model.attention_head_dim = v.extract()?,
                other => return Err(PyValueError::new_err(format!("unknown config field `{other}`"))),
            }
        }
        c.validate().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(task={}, variant={}, loss={}, epochs={}, iters_per_epoch={})",
            self.inner.task, self.inner.variant, self.inner.loss.variant, self.inner.epochs, self.inner.iters_per_epoch
        )
    }
}

fn report_dict<'py>(py: Python<'py>, r: &affect_np::EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("context_mode", r.mode.map_or("pseudo_label", |m| m.as_str()))?;
    d.set_item("num_context", r.num_context)?;
    d.set_item("frames", r.frames)?;
    d.set_item("windows", r.windows)?;
    d.set_item("ccc", r.ccc.clone())?;
    d.set_item("icc", r.icc.clone())?;
    d.set_item("mse", r.mse.clone())?;
    d.set_item("mean_ccc", r.mean_ccc)?;
    d.set_item("mean_icc", r.mean_icc)?;
    d.set_item("mean_mse", r.mean_mse)?;
    d.set_item("mean_nll", r.mean_nll)?;
    Ok(d)
}

fn eval_config(
    cfg: &RunConfig,
    mode: Option<&str>,
    num_context: Option<usize>,
    window_len: Option<usize>,
    seed: Option<u64>,
) -> PyResult<affect_np::EvalConfig> {
    let mut e = affect_np::EvalConfig::from_run(cfg);
    if let Some(m) = mode {
        e.mode = parse(m)?;
    }
    if let Some(k) = num_context {
        e.num_context = k;
    }
    if let Some(w) = window_len {
        e.window_len = w;
    }
    if let Some(s) = seed {
        e.seed = s;
    }
    Ok(e)
}

/// A trained (or freshly initialised) model with its run configuration.
#[pyclass(name = "Model", module = "affect_np")]
struct PyModel {
    config: RunConfig,
    model: affect_np::ApModel,
}

#[pymethods]
impl PyModel {
    /// Randomly initialised model for `config`.
    #[new]
    #[pyo3(signature = (config, seed=0))]
    fn new(config: &PyRunConfig, seed: u64) -> PyResult<Self> {
        let cfg = config.inner.clone();
        cfg.validate().map_err(err)?;
        let model = affect_np::ApModel::init(cfg.model.clone(), cfg.variant, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(err)?;
        Ok(PyModel { config: cfg, model })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (config, model) = checkpoint::load(&path).map_err(err)?;
        Ok(PyModel { config, model })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&path, &self.model, &self.config).map_err(err)
    }

    #[getter]
    fn config(&self) -> PyRunConfig {
        PyRunConfig {
            inner: self.config.clone(),
        }
    }

    #[getter]
    fn variant(&self) -> String {
        self.model.variant().to_string()
    }

    /// Parameter names and shapes.
    fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.model
            .params()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect()
    }

    /// Windowed evaluation; unset arguments follow the run configuration.
    #[pyo3(signature = (sequences, context_mode=None, num_context=None, window_len=None, seed=None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        sequences: Vec<PySequence>,
        context_mode: Option<&str>,
        num_context: Option<usize>,
        window_len: Option<usize>,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let cfg = eval_config(&self.config, context_mode, num_context, window_len, seed)?;
        let seqs = unwrap_seqs(sequences);
        let report = py.allow_threads(|| evaluate(&self.model, &seqs, &cfg)).map_err(err)?;
        report_dict(py, &report)
    }

    /// `‖σ_c‖₂` per frame from features and pseudo-labels.
    fn frame_uncertainty(&self, sequence: &PySequence) -> PyResult<Vec<f64>> {
        self.model
            .frame_uncertainty(sequence.inner.features(), sequence.inner.pseudo_labels())
            .map_err(err)
    }

    /// Context frame indices chosen by `context_mode`.
    #[pyo3(signature = (sequence, num_context, context_mode="lowest", seed=0))]
    fn select_context(&self, sequence: &PySequence, num_context: usize, context_mode: &str, seed: u64) -> PyResult<Vec<usize>> {
        let mode: ContextMode = parse(context_mode)?;
        let split = select_context(&self.model, &sequence.inner, num_context, mode, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(err)?;
        Ok(split.context_indices().to_vec())
    }

    /// Predictive mean and std for every frame given explicit context
    /// indices; `sample=True` draws one shared `z` instead of using `μ_C`.
    #[pyo3(signature = (sequence, context, label_source="pseudo_label", sample=false, seed=0))]
    fn predict(
        &self,
        sequence: &PySequence,
        context: Vec<usize>,
        label_source: &str,
        sample: bool,
        seed: u64,
    ) -> PyResult<(Rows, Rows)> {
        let source = match label_source {
            "pseudo_label" => LabelSource::PseudoLabel,
            "ground_truth" => LabelSource::GroundTruth,
            other => return Err(PyValueError::new_err(format!("unknown label source `{other}`"))),
        };
        let split = ContextTargetSplit::new(context, sequence.inner.len(), source).map_err(err)?;
        let sampling = if sample { Sampling::Sample } else { Sampling::Mean };
        let out = self
            .model
            .forward(&sequence.inner, &split, sampling, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(err)?;
        Ok((rows(out.prediction.mean()), rows(out.prediction.std())))
    }

    /// Mean trace and `num_samples` coherent sampled traces.
    #[pyo3(signature = (sequence, num_context=40, context_mode="lowest", num_samples=10, seed=0))]
    fn traces(
        &self,
        sequence: &PySequence,
        num_context: usize,
        context_mode: &str,
        num_samples: usize,
        seed: u64,
    ) -> PyResult<(Rows, Vec<Rows>)> {
        let mode: ContextMode = parse(context_mode)?;
        let t = sample_traces(&self.model, &sequence.inner, num_context, mode, num_samples, seed).map_err(err)?;
        Ok((rows(&t.mean), t.samples.iter().map(rows).collect()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(variant={}, tensors={}, values={})",
            self.model.variant(),
            self.model.params().len(),
            self.model.params().num_values()
        )
    }
}

/// Synthetic sequences from a simulated frozen backbone.
#[pyfunction]
#[pyo3(signature = (num_sequences=200, feature_dim=512, label_dim=2, label_correlation=0.0, seed=7, **kwargs))]
fn synthetic(
    num_sequences: usize,
    feature_dim: usize,
    label_dim: usize,
    label_correlation: f64,
    seed: u64,
    kwargs: Option<&Bound<'_, PyDict>>,
) -> PyResult<Vec<PySequence>> {
    let mut spec = affect_np::SyntheticSpec {
        num_sequences,
        feature_dim,
        label_dim,
        label_correlation,
        ..affect_np::SyntheticSpec::default()
    };
    if let Some(kwargs) = kwargs {
        for (k, v) in kwargs.iter() {
            let key: String = k.extract()?;
            match key.as_str() {
                "min_len" => spec.min_len = v.extract()?,
                "max_len" => spec.max_len = v.extract()?,
                "pseudo_noise_std" => spec.pseudo_noise_std = v.extract()?,
                "informative_fraction" => spec.informative_fraction = v.extract()?,
                "feature_noise_std" => spec.feature_noise_std = v.extract()?,
                "feature_map_seed" => spec.feature_map_seed = v.extract()?,
                other => return Err(PyValueError::new_err(format!("unknown synthetic field `{other}`"))),
            }
        }
    }
    let seqs = generate_synthetic(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
    Ok(wrap_seqs(seqs))
}

#[pyfunction]
fn load_sequences(path: PathBuf) -> PyResult<Vec<PySequence>> {
    Ok(wrap_seqs(load_dataset(&path).map_err(err)?))
}

#[pyfunction]
fn save_sequences(path: PathBuf, sequences: Vec<PySequence>) -> PyResult<()> {
    save_dataset(&path, &unwrap_seqs(sequences)).map_err(err)
}

/// Trains a model; returns the best checkpoint and the per-epoch losses.
#[pyfunction]
#[pyo3(signature = (config, train_set, val_set=Vec::new()))]
fn train(py: Python<'_>, config: &PyRunConfig, train_set: Vec<PySequence>, val_set: Vec<PySequence>) -> PyResult<(PyModel, Vec<f64>)> {
    let cfg = config.inner.clone();
    let (train_set, val_set) = (unwrap_seqs(train_set), unwrap_seqs(val_set));
    let outcome = py
        .allow_threads(|| training::train(&cfg, &train_set, &val_set))
        .map_err(err)?;
    let losses = outcome.log.iter().map(|r| r.loss.total).collect();
    Ok((PyModel { config: cfg, model: outcome.best }, losses))
}

/// Scores the raw pseudo-labels against the labels over evaluation windows.
#[pyfunction]
#[pyo3(signature = (sequences, window_len=70))]
fn pseudo_label_baseline<'py>(py: Python<'py>, sequences: Vec<PySequence>, window_len: usize) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = affect_np::EvalConfig::from_run(&RunConfig::for_task(Task::ValenceArousal));
    cfg.window_len = window_len;
    let report = pseudo_label_report(&unwrap_seqs(sequences), &cfg).map_err(err)?;
    report_dict(py, &report)
}

#[pyfunction]
fn ccc(y: Vec<f64>, y_hat: Vec<f64>) -> PyResult<f64> {
    affect_np::metrics::ccc(&y, &y_hat).map_err(err)
}

#[pyfunction]
fn icc(y: Vec<f64>, y_hat: Vec<f64>) -> PyResult<f64> {
    affect_np::metrics::icc(&y, &y_hat).map_err(err)
}

#[pymodule]
#[pyo3(name = "affect_np")]
fn affect_np_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_sequences, m)?)?;
    m.add_function(wrap_pyfunction!(save_sequences, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_label_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(ccc, m)?)?;
    m.add_function(wrap_pyfunction!(icc, m)?)?;
    Ok(())
}
