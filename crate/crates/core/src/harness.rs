//! Shot sweeps, proportion sweeps and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{subset_proportion, CorpusSet, DomainId, DomainSplits, SentimentLabel, PROPORTIONS};
use crate::error::{Error, Result};
use crate::inference::{Classifier, EndpointConfig, ParsedLabel, Prediction};
use crate::metrics::{aggregate, score, EvalReport, RunMeta};
use crate::prompts::{build_prompt, PromptBundle, ShotSelection, SHOT_COUNTS};
use crate::sampler::emit_manifest;
use crate::scheduler::{EarlyStopConfig, PhasePlan};
use crate::seed;
use crate::synthetic::SyntheticSpec;
use crate::trainer::{evaluate, train_from_manifest, TrainOptions, TrajectoryPoint, DEFAULT_FEATURE_DIM};

/// Share of transport failures above which a run is marked invalid.
pub const MAX_FAILURE_RATE: f64 = 0.10;

pub const REFERENCE_MODEL_NAME: &str = "reference-logreg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierKind {
    Mock,
    Endpoint(EndpointConfig),
    Reference,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotSource {
    /// Exemplars come from the dataset's train split.
    #[default]
    TrainPool,
    /// Exemplars come from the test split itself (excluding the query).
    TestPool,
}

/// Reference-model training settings for proportion sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: f64,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub layer_scales: Vec<f64>,
    pub early_stopping: EarlyStopConfig,
    /// Number of evaluations spread over a run.
    pub evals_per_run: usize,
    pub feature_dim: usize,
    /// One model over every dataset; when false each dataset is fine-tuned
    /// on its own.
    pub joint: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 3.0,
            batch_size: 16,
            lr_max: 0.5,
            lr_min: 0.05,
            layer_scales: vec![1.0, 0.5],
            early_stopping: EarlyStopConfig::default(),
            evals_per_run: 20,
            feature_dim: DEFAULT_FEATURE_DIM,
            joint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Datasets (domains) to evaluate; empty means every domain in the corpus.
    pub datasets: Vec<String>,
    pub shots: Vec<usize>,
    pub few_shot_repeats: usize,
    pub proportions: Vec<u8>,
    pub classifier: ClassifierKind,
    pub master_seed: u64,
    pub shot_source: ShotSource,
    pub shot_selection: ShotSelection,
    /// Evaluate only the first N test examples of each dataset.
    pub max_eval_examples: Option<usize>,
    /// Upper bound on sweep cells evaluated at once.
    pub max_parallel_cells: usize,
    pub training: TrainingConfig,
    /// Normalized corpus (JSONL with split assignments), relative to the
    /// config file.
    pub corpus: Option<PathBuf>,
    /// Generate a synthetic corpus instead of reading one.
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            datasets: Vec::new(),
            shots: vec![0, 3, 5],
            few_shot_repeats: 3,
            proportions: PROPORTIONS.to_vec(),
            classifier: ClassifierKind::Mock,
            master_seed: 0,
            shot_source: ShotSource::TrainPool,
            shot_selection: ShotSelection::Random,
            max_eval_examples: None,
            max_parallel_cells: 4,
            training: TrainingConfig::default(),
            corpus: None,
            synthetic: None,
        }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        if let (Some(c), Some(dir)) = (&cfg.corpus, path.parent()) {
            if c.is_relative() {
                cfg.corpus = Some(dir.join(c));
            }
        }
        Ok(cfg)
    }

    /// Switch few-shot exemplars to the test pool, as the original protocol
    /// did. Off by default because it leaks test data into prompts.
    pub fn with_paper_faithful(mut self, on: bool) -> Self {
        if on {
            self.shot_source = ShotSource::TestPool;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots.is_empty() && self.proportions.is_empty() {
            return Err(Error::Config("sweep needs shots or proportions".into()));
        }
        if let Some(k) = self.shots.iter().find(|k| !SHOT_COUNTS.contains(k)) {
            return Err(Error::Config(format!("shot count {k} is not one of {SHOT_COUNTS:?}")));
        }
        if let Some(p) = self.proportions.iter().find(|p| !PROPORTIONS.contains(p)) {
            return Err(Error::Config(format!("proportion {p}% is not one of {PROPORTIONS:?}")));
        }
        if self.few_shot_repeats < 2 && self.shots.iter().any(|&k| k > 0) {
            return Err(Error::Config("few_shot_repeats must be at least 2".into()));
        }
        Ok(())
    }

    /// Corpus named by the config: a normalized file or a synthetic spec.
    pub fn load_corpus(&self) -> Result<CorpusSet> {
        match (&self.corpus, &self.synthetic) {
            (Some(path), _) => CorpusSet::read_jsonl(path),
            (None, Some(spec)) => spec.build(self.master_seed),
            (None, None) => Err(Error::Config("config names neither `corpus` nor `synthetic`".into())),
        }
    }

    fn selected_datasets(&self, corpus_set: &CorpusSet) -> Result<Vec<DomainId>> {
        if self.datasets.is_empty() {
            return Ok(corpus_set.domain_ids());
        }
        self.datasets
            .iter()
            .map(|d| {
                let id = DomainId::new(d.clone());
                corpus_set
                    .get(&id)
                    .map(|_| id)
                    .ok_or_else(|| Error::Config(format!("dataset `{d}` not in corpus")))
            })
            .collect()
    }
}

/// Seed of the `run`-th repetition (1-based) under `master`.
pub fn run_seed(master: u64, run: u64) -> u64 {
    seed::derive(master, run)
}

/// One line of the prediction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedPrediction {
    pub model: String,
    pub dataset: String,
    pub setting: String,
    pub seed: u64,
    pub truth: SentimentLabel,
    #[serde(flatten)]
    pub prediction: Prediction,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub report: EvalReport,
    pub predictions: Vec<LoggedPrediction>,
    pub transport_failures: usize,
    pub invalid: bool,
}

/// One table row: a single run, or the mean of repeated runs with their
/// population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub dataset: String,
    pub setting: String,
    /// Shot count or training proportion, for plotting.
    pub x: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub std_acc: Option<f64>,
    pub std_f1: Option<f64>,
    pub runs: usize,
    pub invalid: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunRecord>,
    pub trajectories: Vec<(String, Vec<TrajectoryPoint>)>,
}

impl SweepOutcome {
    pub fn any_invalid(&self) -> bool {
        self.rows.iter().any(|r| r.invalid)
    }
}

/// Evaluate `classifier` on one dataset's test split with `k` shots.
pub fn evaluate_prompts(
    corpus_set: &CorpusSet,
    dataset: &DomainId,
    classifier: &dyn Classifier,
    k: usize,
    run_seed: u64,
    config: &SweepConfig,
) -> Result<RunRecord> {
    let splits = corpus_set
        .get(dataset)
        .ok_or_else(|| Error::Config(format!("dataset `{dataset}` not in corpus")))?;
    let pool = match config.shot_source {
        ShotSource::TrainPool => &splits.train,
        ShotSource::TestPool => &splits.test,
    };
    let limit = config.max_eval_examples.unwrap_or(usize::MAX);
    let queries: Vec<_> = splits.test.examples().iter().take(limit).collect();
    let bundles: Vec<PromptBundle> = queries
        .iter()
        .map(|q| build_prompt(q, pool, k, run_seed, config.shot_selection))
        .collect::<Result<_>>()?;

    let model = classifier.name();
    let preds = classifier.classify_batch(&bundles);
    let by_id: BTreeMap<&str, &Prediction> = preds.iter().map(|p| (p.example_id.as_str(), p)).collect();
    let ordered: Vec<Prediction> = queries
        .iter()
        .map(|q| {
            by_id.get(q.id.as_str()).map(|p| (*p).clone()).unwrap_or_else(|| Prediction {
                example_id: q.id.clone(),
                raw_output: String::new(),
                parsed_label: ParsedLabel::Unparseable,
                latency_ms: 0.0,
                error: Some("classifier returned no prediction".into()),
            })
        })
        .collect();
    let truth: Vec<SentimentLabel> = queries.iter().map(|q| q.label).collect();
    let label_set: Vec<SentimentLabel> = splits.test.label_set().iter().copied().collect();
    let meta = RunMeta {
        model: model.clone(),
        dataset: dataset.to_string(),
        setting: format!("{k}-shot"),
        seed: run_seed,
    };
    let report = score(&truth, &ordered, &label_set, meta.clone())?;
    let transport_failures = ordered.iter().filter(|p| p.is_transport_failure()).count();
    let invalid = transport_failures as f64 > MAX_FAILURE_RATE * ordered.len() as f64;
    if invalid {
        log::warn!("{model} on {dataset} ({k}-shot, seed {run_seed}): {transport_failures} transport failures, run marked invalid");
    }
    let mut predictions: Vec<LoggedPrediction> = truth
        .into_iter()
        .zip(ordered)
        .map(|(truth, prediction)| LoggedPrediction {
            model: meta.model.clone(),
            dataset: meta.dataset.clone(),
            setting: meta.setting.clone(),
            seed: run_seed,
            truth,
            prediction,
        })
        .collect();
    predictions.sort_by(|a, b| a.prediction.example_id.cmp(&b.prediction.example_id));
    Ok(RunRecord {
        report,
        predictions,
        transport_failures,
        invalid,
    })
}

fn row_from_runs(runs: &[RunRecord], x: f64) -> Result<SweepRow> {
    let invalid = runs.iter().any(|r| r.invalid);
    let first = &runs[0].report;
    if runs.len() == 1 {
        return Ok(SweepRow {
            model: first.meta.model.clone(),
            dataset: first.meta.dataset.clone(),
            setting: first.meta.setting.clone(),
            x,
            accuracy: first.accuracy,
            macro_f1: first.macro_f1,
            std_acc: None,
            std_f1: None,
            runs: 1,
            invalid,
        });
    }
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.report.clone()).collect();
    let agg = aggregate(&reports)?;
    Ok(SweepRow {
        model: agg.model,
        dataset: agg.dataset,
        setting: agg.setting,
        x,
        accuracy: agg.accuracy.mean,
        macro_f1: agg.macro_f1.mean,
        std_acc: Some(agg.accuracy.std),
        std_f1: Some(agg.macro_f1.std),
        runs: runs.len(),
        invalid,
    })
}

/// Run `jobs` on at most `bound` threads, returning results in job order.
fn run_bounded<T: Send, J: Sync>(jobs: &[J], bound: usize, f: impl Fn(&J) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..bound.max(1).min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let out = f(job);
                slots.lock().unwrap()[i] = Some(out);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|o| o.expect("job ran")).collect()
}

/// Zero/few-shot sweep. Zero-shot cells run once; few-shot cells run
/// `few_shot_repeats` times with seeds derived from the master seed and are
/// reported as mean ± population std.
pub fn run_shot_sweep(config: &SweepConfig, corpus_set: &CorpusSet, classifier: &dyn Classifier) -> Result<SweepOutcome> {
    config.validate()?;
    let datasets = config.selected_datasets(corpus_set)?;
    let cells: Vec<(DomainId, usize)> = config
        .shots
        .iter()
        .flat_map(|&k| datasets.iter().map(move |d| (d.clone(), k)))
        .collect();
    let results = run_bounded(&cells, config.max_parallel_cells, |(dataset, k)| -> Result<Vec<RunRecord>> {
        let repeats = if *k == 0 { 1 } else { config.few_shot_repeats };
        (1..=repeats as u64)
            .map(|r| evaluate_prompts(corpus_set, dataset, classifier, *k, run_seed(config.master_seed, r), config))
            .collect()
    });
    let mut outcome = SweepOutcome::default();
    for ((_, k), runs) in cells.iter().zip(results) {
        let runs = runs?;
        outcome.rows.push(row_from_runs(&runs, *k as f64)?);
        outcome.runs.extend(runs);
    }
    Ok(outcome)
}

/// Build the proportion-`p` training view: every train split reduced to its
/// nested `p`% subset, test and validation untouched.
pub fn proportion_view(corpus_set: &CorpusSet, p: u8, seed: u64) -> Result<CorpusSet> {
    let mut out = CorpusSet::new();
    for (_, s) in corpus_set.domains() {
        let train = subset_proportion(&s.train, p, seed)?;
        out.insert(DomainSplits::new(train, s.validation.clone(), s.test.clone())?);
    }
    Ok(out)
}

fn restrict(corpus_set: &CorpusSet, domain: &DomainId) -> CorpusSet {
    let mut out = CorpusSet::new();
    if let Some(s) = corpus_set.get(domain) {
        out.insert(s.clone());
    }
    out
}

/// Plan for the reference trainer sized to `epochs` passes over the train
/// examples.
pub fn reference_plan(corpus_set: &CorpusSet, training: &TrainingConfig) -> PhasePlan {
    let n: usize = corpus_set.domains().map(|(_, s)| s.train.len()).sum();
    let steps = ((training.epochs * n as f64) / training.batch_size as f64).ceil() as usize;
    let mut plan = PhasePlan::new(steps.max(10)).with_lr(training.lr_max, training.lr_min);
    plan.layer_scales = training.layer_scales.clone();
    plan.early_stopping = training.early_stopping;
    plan
}

/// Train the reference model on nested proportions of the train data and
/// evaluate on every dataset's full test split.
pub fn run_proportion_sweep(config: &SweepConfig, corpus_set: &CorpusSet) -> Result<SweepOutcome> {
    config.validate()?;
    if config.classifier != ClassifierKind::Reference {
        return Err(Error::Config("proportion sweeps require the reference classifier".into()));
    }
    let datasets = config.selected_datasets(corpus_set)?;
    let seed = config.master_seed;
    let mut outcome = SweepOutcome::default();
    for &p in &config.proportions {
        let view = proportion_view(corpus_set, p, seed)?;
        let groups: Vec<(String, CorpusSet)> = if config.training.joint {
            vec![("joint".to_string(), view)]
        } else {
            datasets.iter().map(|d| (d.to_string(), restrict(&view, d))).collect()
        };
        let mut reports: BTreeMap<DomainId, EvalReport> = BTreeMap::new();
        for (group, set) in groups {
            let plan = reference_plan(&set, &config.training);
            let manifest = emit_manifest(&set, &plan, config.training.batch_size, seed::derive_str(seed, &format!("{p}/{group}")))?;
            let options = TrainOptions {
                eval_every: (plan.total_steps / config.training.evals_per_run.max(1)).max(1),
                feature_dim: config.training.feature_dim,
            };
            let run = train_from_manifest(&set, &manifest, &options)?;
            outcome.trajectories.push((format!("{p}%/{group}"), run.trajectory.clone()));
            for d in &datasets {
                let Some(splits) = set.get(d) else { continue };
                reports.insert(d.clone(), reference_report(&run.model, splits, d, p, seed)?);
                // F1 via the trainer's evaluation path must agree with the report.
                debug_assert!((evaluate(&run.model, &splits.test)? - reports[d].macro_f1).abs() < 1e-12);
            }
        }
        for d in &datasets {
            let report = reports.remove(d).expect("every dataset evaluated");
            outcome.rows.push(SweepRow {
                model: report.meta.model.clone(),
                dataset: report.meta.dataset.clone(),
                setting: report.meta.setting.clone(),
                x: p as f64,
                accuracy: report.accuracy,
                macro_f1: report.macro_f1,
                std_acc: None,
                std_f1: None,
                runs: 1,
                invalid: false,
            });
            outcome.runs.push(RunRecord {
                report,
                predictions: Vec::new(),
                transport_failures: 0,
                invalid: false,
            });
        }
    }
    Ok(outcome)
}

fn reference_report(model: &crate::trainer::RefModel, splits: &DomainSplits, dataset: &DomainId, p: u8, seed: u64) -> Result<EvalReport> {
    use crate::trainer::featurize;
    let test = &splits.test;
    let labels = test.label_set();
    let preds: Vec<Prediction> = test
        .examples()
        .iter()
        .map(|e| {
            let parsed = model
                .predict(&featurize(&e.text, e.language, model.dim()), labels)
                .map_or(ParsedLabel::Unparseable, Into::into);
            Prediction {
                example_id: e.id.clone(),
                raw_output: parsed.to_string(),
                parsed_label: parsed,
                latency_ms: 0.0,
                error: None,
            }
        })
        .collect();
    let truth: Vec<_> = test.examples().iter().map(|e| e.label).collect();
    score(
        &truth,
        &preds,
        &labels.iter().copied().collect::<Vec<_>>(),
        RunMeta {
            model: REFERENCE_MODEL_NAME.into(),
            dataset: dataset.to_string(),
            setting: format!("{p}%"),
            seed,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    PlotData,
}

fn cell(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{mean:.2}±{s:.2}"),
        None => format!("{mean:.2}"),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Render rows as a markdown table (grouped model → setting → dataset), the
/// results CSV, or plot data (x = shots or proportion, y = macro F1).
pub fn render_report(rows: &[SweepRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Render("no rows to render".into()));
    }
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            let mut sorted: Vec<&SweepRow> = rows.iter().collect();
            sorted.sort_by(|a, b| {
                a.model
                    .cmp(&b.model)
                    .then(a.x.total_cmp(&b.x))
                    .then(a.dataset.cmp(&b.dataset))
            });
            out.push_str("| Model | Setting | Dataset | Acc. | Macro F1 |\n");
            out.push_str("|---|---|---|---|---|\n");
            for r in sorted {
                let flag = if r.invalid { " (invalid)" } else { "" };
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    r.model,
                    r.setting,
                    format_args!("{}{flag}", r.dataset),
                    cell(r.accuracy, r.std_acc),
                    cell(r.macro_f1, r.std_f1)
                );
            }
        }
        ReportFormat::Csv => {
            out.push_str("model,dataset,setting,accuracy,macro_f1,std_acc,std_f1\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.model,
                    r.dataset,
                    r.setting,
                    r.accuracy,
                    r.macro_f1,
                    opt(r.std_acc),
                    opt(r.std_f1)
                );
            }
        }
        ReportFormat::PlotData => {
            out.push_str("model,dataset,x,macro_f1\n");
            for r in rows {
                let _ = writeln!(out, "{},{},{},{}", r.model, r.dataset, r.x, r.macro_f1);
            }
        }
    }
    Ok(out)
}

/// Write `report.md`, `report.csv`, `plot_data.csv`, `rows.json`,
/// `runs.json` and (when any) `predictions.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, outcome: &SweepOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.md"), render_report(&outcome.rows, ReportFormat::Markdown)?)?;
    fs::write(dir.join("report.csv"), render_report(&outcome.rows, ReportFormat::Csv)?)?;
    fs::write(dir.join("plot_data.csv"), render_report(&outcome.rows, ReportFormat::PlotData)?)?;
    fs::write(dir.join("rows.json"), serde_json::to_string_pretty(&outcome.rows)?)?;
    let reports: Vec<&EvalReport> = outcome.runs.iter().map(|r| &r.report).collect();
    fs::write(dir.join("runs.json"), serde_json::to_string_pretty(&reports)?)?;
    if outcome.runs.iter().any(|r| !r.predictions.is_empty()) {
        let mut w = BufWriter::new(File::create(dir.join("predictions.jsonl"))?);
        for p in outcome.runs.iter().flat_map(|r| &r.predictions) {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    if !outcome.trajectories.is_empty() {
        let mut w = BufWriter::new(File::create(dir.join("trajectories.csv"))?);
        writeln!(w, "run,step,domain,macro_f1")?;
        for (name, points) in &outcome.trajectories {
            for p in points {
                writeln!(w, "{name},{},{},{}", p.step, p.domain, p.macro_f1)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
