//! Python bindings for `finsent_core`.
//!
//! Structured results (reports, manifests) cross the boundary as JSON and are
//! decoded with Python's `json` module, so callers get plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use finsent_core::corpus::{CorpusSet, DomainId, Language, SentimentLabel};
use finsent_core::harness::{self, ClassifierKind, ReportFormat, SweepConfig};
use finsent_core::inference::{self, Classifier, EndpointClassifier, MockClassifier};
use finsent_core::metrics::{self, MeanStd, RunMeta};
use finsent_core::prompts::{self, ShotSelection};
use finsent_core::sampler::{self, WeightMode};
use finsent_core::scheduler::{self, EarlyStopConfig};
use finsent_core::synthetic::SyntheticSpec;
use finsent_core::trainer;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Decode a snake_case enum name the same way the config files do.
fn enum_from_str<T: DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(|_| err(format!("unknown value `{name}`")))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_labels(names: &[String]) -> PyResult<Vec<SentimentLabel>> {
    names.iter().map(|n| n.parse().map_err(err)).collect()
}

/// Three-phase schedule: warmup and cosine decay, balanced middle phase,
/// finalization at `lr_min`.
#[pyclass(name = "PhasePlan", module = "finsent")]
struct PyPhasePlan {
    inner: scheduler::PhasePlan,
}

#[pymethods]
impl PyPhasePlan {
    #[new]
    #[pyo3(signature = (total_steps, lr_max=2e-4, lr_min=0.0, warmup_steps=None, layer_scales=None, patience=3, min_delta=1e-3))]
    fn new(
        total_steps: usize,
        lr_max: f64,
        lr_min: f64,
        warmup_steps: Option<usize>,
        layer_scales: Option<Vec<f64>>,
        patience: usize,
        min_delta: f64,
    ) -> PyResult<Self> {
        let mut plan = scheduler::PhasePlan::new(total_steps).with_lr(lr_max, lr_min);
        if let Some(w) = warmup_steps {
            plan = plan.with_warmup(w);
        }
        if let Some(s) = layer_scales {
            plan.layer_scales = s;
        }
        plan.early_stopping = EarlyStopConfig { patience, min_delta };
        plan.validate().map_err(err)?;
        Ok(PyPhasePlan { inner: plan })
    }

    #[getter]
    fn total_steps(&self) -> usize {
        self.inner.total_steps
    }

    #[getter]
    fn warmup_steps(&self) -> usize {
        self.inner.warmup_steps
    }

    #[getter]
    fn init_boundary(&self) -> usize {
        self.inner.init_boundary()
    }

    #[getter]
    fn final_boundary(&self) -> usize {
        self.inner.final_boundary()
    }

    /// "init", "balanced" or "final".
    fn phase_of(&self, step: usize) -> PyResult<String> {
        let phase = self.inner.phase_of(step).map_err(err)?;
        Ok(serde_json::to_value(phase).map_err(err)?.as_str().unwrap_or_default().to_string())
    }

    fn lr_at(&self, step: usize) -> PyResult<f64> {
        self.inner.lr_at(step).map_err(err)
    }

    fn scales_at(&self, step: usize) -> PyResult<Vec<f64>> {
        self.inner.scales_at(step).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "PhasePlan(total_steps={}, lr_max={}, lr_min={}, warmup_steps={})",
            self.inner.total_steps, self.inner.lr_max, self.inner.lr_min, self.inner.warmup_steps
        )
    }
}

/// Train/validation/test splits for a set of domains.
#[pyclass(name = "Corpus", module = "finsent")]
struct PyCorpus {
    inner: CorpusSet,
}

impl PyCorpus {
    fn splits(&self, domain: &str) -> PyResult<&finsent_core::corpus::DomainSplits> {
        self.inner
            .get(&DomainId::new(domain))
            .ok_or_else(|| err(format!("no domain `{domain}`")))
    }
}

#[pymethods]
impl PyCorpus {
    /// Build a synthetic corpus. `spec` is a JSON object in the same shape as
    /// the `[synthetic]` table of a sweep config; omitted means one English
    /// domain of 200 examples.
    #[staticmethod]
    #[pyo3(signature = (spec=None, seed=0))]
    fn synthetic(spec: Option<&str>, seed: u64) -> PyResult<Self> {
        let spec: SyntheticSpec = match spec {
            Some(s) => serde_json::from_str(s).map_err(err)?,
            None => SyntheticSpec::default(),
        };
        Ok(PyCorpus {
            inner: spec.build(seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn read_jsonl(path: PathBuf) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: CorpusSet::read_jsonl(&path).map_err(err)?,
        })
    }

    fn write_jsonl(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_jsonl(&path).map_err(err)
    }

    fn domains(&self) -> Vec<String> {
        self.inner.domain_ids().iter().map(|d| d.to_string()).collect()
    }

    /// Example records of one split ("train", "validation" or "test").
    #[pyo3(signature = (domain, split="train"))]
    fn examples<'py>(&self, py: Python<'py>, domain: &str, split: &str) -> PyResult<Bound<'py, PyAny>> {
        let s = self.splits(domain)?;
        let corpus = match split {
            "train" => &s.train,
            "test" => &s.test,
            "validation" => s.validation.as_ref().ok_or_else(|| err(format!("`{domain}` has no validation split")))?,
            other => return Err(err(format!("unknown split `{other}`"))),
        };
        to_py(py, &corpus.examples())
    }

    /// (train, test) sizes per domain.
    fn sizes(&self) -> Vec<(String, usize, usize)> {
        self.inner
            .domains()
            .map(|(d, s)| (d.to_string(), s.train.len(), s.test.len()))
            .collect()
    }

    fn fingerprint(&self) -> String {
        format!("{:016x}", self.inner.train_fingerprint())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Per-domain sampling weights for `mode` in {"balanced", "proportional",
/// "init_priority"}.
#[pyfunction]
#[pyo3(signature = (domains, mode="balanced"))]
fn compute_weights(domains: Vec<(String, usize)>, mode: &str) -> PyResult<Vec<(String, f64)>> {
    let mode: WeightMode = enum_from_str(mode)?;
    let domains: Vec<(DomainId, usize)> = domains.into_iter().map(|(d, n)| (DomainId::new(d), n)).collect();
    let w = sampler::compute_weights(&domains, mode).map_err(err)?;
    Ok(w.entries().iter().map(|(d, v)| (d.to_string(), *v)).collect())
}

/// Materialize `plan` over `corpus` into a manifest; returns the step
/// records and writes the JSONL manifest when `path` is given.
#[pyfunction]
#[pyo3(signature = (corpus, plan, batch_size=16, seed=0, sequential=None, path=None))]
fn emit_manifest<'py>(
    py: Python<'py>,
    corpus: &PyCorpus,
    plan: &PyPhasePlan,
    batch_size: usize,
    seed: u64,
    sequential: Option<Vec<String>>,
    path: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let manifest = match sequential {
        Some(order) => {
            let order: Vec<DomainId> = order.into_iter().map(DomainId::new).collect();
            sampler::emit_sequential_manifest(&corpus.inner, &plan.inner, &order, batch_size, seed)
        }
        None => sampler::emit_manifest(&corpus.inner, &plan.inner, batch_size, seed),
    }
    .map_err(err)?;
    if let Some(p) = path {
        manifest.write(&p).map_err(err)?;
    }
    to_py(py, &manifest.steps)
}

#[pyfunction]
#[pyo3(signature = (raw, allowed, language="en"))]
fn parse_label(raw: &str, allowed: Vec<String>, language: &str) -> PyResult<String> {
    let language: Language = language.parse().map_err(err)?;
    Ok(inference::parse_label(raw, &parse_labels(&allowed)?, language).to_string())
}

/// Score predicted label names (anything outside `labels` counts as
/// unparseable) against the truth.
#[pyfunction]
fn score<'py>(py: Python<'py>, truth: Vec<String>, predictions: Vec<String>, labels: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let truth = parse_labels(&truth)?;
    let preds: Vec<inference::ParsedLabel> = predictions
        .iter()
        .map(|p| p.parse::<SentimentLabel>().map_or(inference::ParsedLabel::Unparseable, Into::into))
        .collect();
    let report = metrics::score_labels(&truth, &preds, &parse_labels(&labels)?, RunMeta::default()).map_err(err)?;
    to_py(py, &report)
}

/// Mean, population std and the "0.60±0.02" display of repeated runs.
#[pyfunction]
fn aggregate(values: Vec<f64>) -> PyResult<(f64, f64, String)> {
    if values.len() < 2 {
        return Err(err("at least two runs are needed"));
    }
    let m = MeanStd::of(&values);
    Ok((m.mean, m.std, m.to_string()))
}

/// Hashed bag-of-words features as (bucket, count) pairs.
#[pyfunction]
#[pyo3(signature = (text, language="en", dim=trainer::DEFAULT_FEATURE_DIM))]
fn featurize(text: &str, language: &str, dim: usize) -> PyResult<Vec<(u32, f64)>> {
    let language: Language = language.parse().map_err(err)?;
    Ok(trainer::featurize(text, language, dim).entries)
}

/// Build and render the prompt for one test example. Returns the chat
/// messages and the mock classifier's label for that prompt.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (corpus, domain, example_id, k=0, seed=0, selection="random", pool="train"))]
fn render_prompt<'py>(
    py: Python<'py>,
    corpus: &PyCorpus,
    domain: &str,
    example_id: &str,
    k: usize,
    seed: u64,
    selection: &str,
    pool: &str,
) -> PyResult<(Bound<'py, PyAny>, String)> {
    let s = corpus.splits(domain)?;
    let query = s
        .test
        .get(example_id)
        .ok_or_else(|| err(format!("`{example_id}` is not a test example of `{domain}`")))?;
    let pool = match pool {
        "train" => &s.train,
        "test" => &s.test,
        other => return Err(err(format!("unknown pool `{other}`"))),
    };
    let selection: ShotSelection = enum_from_str(selection)?;
    let bundle = prompts::build_prompt(query, pool, k, seed, selection).map_err(err)?;
    let mock = inference::mock_classify(&bundle).parsed_label.to_string();
    Ok((to_py(py, &prompts::render(&bundle))?, mock))
}

fn sweep(config_toml: &str, output_dir: Option<PathBuf>, proportions: bool) -> PyResult<String> {
    let cfg = SweepConfig::from_toml(config_toml).map_err(err)?;
    let corpus = cfg.load_corpus().map_err(err)?;
    let outcome = if proportions {
        harness::run_proportion_sweep(&cfg, &corpus)
    } else {
        let classifier: Box<dyn Classifier> = match &cfg.classifier {
            ClassifierKind::Mock => Box::new(MockClassifier),
            ClassifierKind::Endpoint(e) => Box::new(EndpointClassifier::http(e.clone()).map_err(err)?),
            ClassifierKind::Reference => return Err(err("shot sweeps need a mock or endpoint classifier")),
        };
        harness::run_shot_sweep(&cfg, &corpus, classifier.as_ref())
    }
    .map_err(err)?;
    if let Some(dir) = output_dir {
        harness::write_outputs(&dir, &outcome).map_err(err)?;
    }
    harness::render_report(&outcome.rows, ReportFormat::Markdown).map_err(err)
}

/// Run a zero/few-shot sweep from a TOML config; returns the markdown table.
#[pyfunction]
#[pyo3(signature = (config_toml, output_dir=None))]
fn run_shot_sweep(py: Python<'_>, config_toml: &str, output_dir: Option<PathBuf>) -> PyResult<String> {
    py.detach(|| sweep(config_toml, output_dir, false))
}

/// Run a training-proportion sweep with the reference model.
#[pyfunction]
#[pyo3(signature = (config_toml, output_dir=None))]
fn run_proportion_sweep(py: Python<'_>, config_toml: &str, output_dir: Option<PathBuf>) -> PyResult<String> {
    py.detach(|| sweep(config_toml, output_dir, true))
}

#[pymodule]
fn finsent(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TEMPLATE_VERSION", prompts::TEMPLATE_VERSION)?;
    m.add_class::<PyPhasePlan>()?;
    m.add_class::<PyCorpus>()?;
    m.add_function(wrap_pyfunction!(compute_weights, m)?)?;
    m.add_function(wrap_pyfunction!(emit_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(parse_label, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(featurize, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(run_shot_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_proportion_sweep, m)?)?;
    Ok(())
}
