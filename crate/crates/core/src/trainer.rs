//! Reference classifier: hashed bag-of-words features with multinomial
//! logistic regression trained by plain SGD.
//!
//! It replays [`TrainingManifest`]s step by step, so the sampling,
//! learning-rate and early-stopping machinery can be exercised end to end
//! without a language model.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSet, DomainCorpus, DomainId, Language, SentimentLabel};
use crate::error::{Error, Result};
use crate::inference::ParsedLabel;
use crate::metrics::{score_labels, RunMeta};
use crate::sampler::{compute_weights, draw_domain_batch, emit_sequential_manifest, Strategy, TrainingManifest, WeightMode};
use crate::scheduler::{EarlyStopState, Phase, PhasePlan, StopUpdate};
use crate::seed;

pub const DEFAULT_FEATURE_DIM: usize = 1 << 16;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn from_indices(mut idx: Vec<u32>) -> Self {
        idx.sort_unstable();
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(idx.len());
        for i in idx {
            match entries.last_mut() {
                Some((j, v)) if *j == i => *v += 1.0,
                _ => entries.push((i, 1.0)),
            }
        }
        SparseVector { entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }
}

fn bucket(token: &str, dim: usize) -> u32 {
    (seed::fnv1a(token.as_bytes()) % dim as u64) as u32
}

/// Tokenize and hash `text` into `dim` buckets holding token counts.
///
/// English splits on anything that is not alphanumeric and lowercases.
/// Chinese uses overlapping character bigrams within each run of
/// non-punctuation characters; a run of one character is kept as a unigram.
pub fn featurize(text: &str, language: Language, dim: usize) -> SparseVector {
    let tokens: Vec<String> = match language {
        Language::En => text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect(),
        Language::Zh => {
            let mut out = Vec::new();
            for run in text.split(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || is_cjk_punctuation(c)) {
                let chars: Vec<char> = run.chars().collect();
                match chars.len() {
                    0 => {}
                    1 => out.push(run.to_string()),
                    _ => out.extend(chars.windows(2).map(|w| w.iter().collect::<String>())),
                }
            }
            out
        }
    };
    SparseVector::from_indices(tokens.iter().map(|t| bucket(t, dim)).collect())
}

fn is_cjk_punctuation(c: char) -> bool {
    matches!(c, '\u{3000}'..='\u{303F}' | '\u{FF00}'..='\u{FF0F}' | '\u{FF1A}'..='\u{FF20}')
}

/// One labeled, featurized example. `label` indexes the model's label list.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: SparseVector,
    pub label: usize,
}

/// Gradient of the mean cross-entropy, keyed by feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: BTreeMap<u32, Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefModel {
    dim: usize,
    labels: Vec<SentimentLabel>,
    /// Feature-major: the `labels.len()` weights of feature `j` are
    /// contiguous at `j * labels.len()`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl RefModel {
    /// Zero-initialized model.
    pub fn new(dim: usize, labels: Vec<SentimentLabel>) -> Self {
        let k = labels.len();
        RefModel {
            dim,
            labels,
            weights: vec![0.0; dim * k],
            bias: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[SentimentLabel] {
        &self.labels
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[feature * self.labels.len() + class]
    }

    pub fn weight_mut(&mut self, class: usize, feature: usize) -> &mut f64 {
        let k = self.labels.len();
        &mut self.weights[feature * k + class]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn label_index(&self, label: SentimentLabel) -> Option<usize> {
        self.labels.iter().position(|l| *l == label)
    }

    pub fn logits(&self, x: &SparseVector) -> Vec<f64> {
        let k = self.labels.len();
        let mut z = self.bias.clone();
        for &(j, v) in &x.entries {
            let row = &self.weights[j as usize * k..(j as usize + 1) * k];
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += w * v;
            }
        }
        z
    }

    pub fn probabilities(&self, x: &SparseVector) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Most probable label among `allowed`.
    pub fn predict(&self, x: &SparseVector, allowed: &BTreeSet<SentimentLabel>) -> Option<SentimentLabel> {
        let z = self.logits(x);
        self.labels
            .iter()
            .zip(z)
            .filter(|(l, _)| allowed.contains(l))
            .fold(None, |best: Option<(SentimentLabel, f64)>, (l, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((*l, v)),
            })
            .map(|(l, _)| l)
    }

    /// Mean cross-entropy over `batch`.
    pub fn loss(&self, batch: &[Sample]) -> f64 {
        let total: f64 = batch
            .iter()
            .map(|s| {
                let z = self.logits(&s.features);
                log_sum_exp(&z) - z[s.label]
            })
            .sum();
        total / batch.len() as f64
    }

    pub fn gradient(&self, batch: &[Sample]) -> Gradient {
        let k = self.labels.len();
        let scale = 1.0 / batch.len() as f64;
        let mut weights: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        let mut bias = vec![0.0; k];
        for s in batch {
            let mut delta = self.probabilities(&s.features);
            delta[s.label] -= 1.0;
            for (b, d) in bias.iter_mut().zip(&delta) {
                *b += d * scale;
            }
            for &(j, v) in &s.features.entries {
                let g = weights.entry(j).or_insert_with(|| vec![0.0; k]);
                for (gc, d) in g.iter_mut().zip(&delta) {
                    *gc += d * v * scale;
                }
            }
        }
        Gradient { weights, bias }
    }

    /// One SGD step on the mean cross-entropy of `batch`. Weights move by
    /// `lr * scales[0]`, biases by `lr * scales[1]` (missing scales are 1).
    /// Returns the loss before the update.
    pub fn sgd_step(&mut self, batch: &[Sample], lr: f64, scales: &[f64]) -> Result<f64> {
        if lr.is_nan() || lr < 0.0 {
            return Err(Error::Contract(format!("negative learning rate {lr}")));
        }
        if batch.is_empty() {
            return Ok(0.0);
        }
        let loss = self.loss(batch);
        let grad = self.gradient(batch);
        let finite = grad.bias.iter().chain(grad.weights.values().flatten()).all(|g| g.is_finite());
        if !finite || !loss.is_finite() {
            return Err(Error::NonFinite {
                step: 0,
                message: format!("non-finite gradient (loss {loss})"),
            });
        }
        let w_lr = lr * scales.first().copied().unwrap_or(1.0);
        let b_lr = lr * scales.get(1).copied().unwrap_or(1.0);
        let k = self.labels.len();
        for (j, g) in &grad.weights {
            let row = &mut self.weights[*j as usize * k..(*j as usize + 1) * k];
            for (w, gc) in row.iter_mut().zip(g) {
                *w -= w_lr * gc;
            }
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= b_lr * g;
        }
        Ok(loss)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let k = self.labels.len();
        let weights = (0..self.dim)
            .filter_map(|j| {
                let row = &self.weights[j * k..(j + 1) * k];
                row.iter().any(|w| *w != 0.0).then(|| (j as u32, row.to_vec()))
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            dim: self.dim,
            labels: self.labels.clone(),
            bias: self.bias.clone(),
            weights,
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", c.version)));
        }
        let k = c.labels.len();
        let mut m = RefModel::new(c.dim, c.labels);
        if c.bias.len() != k {
            return Err(Error::Config("checkpoint bias length mismatch".into()));
        }
        m.bias = c.bias;
        for (j, row) in c.weights {
            if j as usize >= c.dim || row.len() != k {
                return Err(Error::Config(format!("bad checkpoint row for feature {j}")));
            }
            m.weights[j as usize * k..(j as usize + 1) * k].copy_from_slice(&row);
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &self.to_checkpoint())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

/// JSON checkpoint: dimension, label order, bias and the non-zero weight rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dim: usize,
    pub labels: Vec<SentimentLabel>,
    pub bias: Vec<f64>,
    pub weights: Vec<(u32, Vec<f64>)>,
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Evaluate every domain after each multiple of this many steps.
    pub eval_every: usize,
    pub feature_dim: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            eval_every: 50,
            feature_dim: DEFAULT_FEATURE_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub domain: DomainId,
    pub macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub strategy: Strategy,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Loss of every executed step, before its update.
    pub losses: Vec<f64>,
    pub early_stop: EarlyStopState,
    /// Step at which each frozen domain froze (the step of the evaluation).
    pub frozen_at: BTreeMap<DomainId, usize>,
    /// Manifest steps whose domain was frozen and were re-drawn from the
    /// remaining domains.
    pub redistributed_steps: usize,
    pub executed_steps: BTreeMap<DomainId, usize>,
    /// Training ended before the manifest did because every domain froze.
    pub exhausted: bool,
    pub model: RefModel,
}

impl TrainRun {
    pub fn final_scores(&self) -> BTreeMap<DomainId, f64> {
        let mut out = BTreeMap::new();
        for p in &self.trajectory {
            out.insert(p.domain.clone(), p.macro_f1);
        }
        out
    }

    pub fn write_trajectory_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "step,domain,macro_f1")?;
        for p in &self.trajectory {
            writeln!(w, "{},{},{}", p.step, p.domain, p.macro_f1)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct DomainData {
    train: Vec<Sample>,
    eval: Vec<Sample>,
    eval_truth: Vec<SentimentLabel>,
    labels: BTreeSet<SentimentLabel>,
}

fn featurize_corpus(corpus: &DomainCorpus, model: &RefModel) -> Result<Vec<Sample>> {
    corpus
        .examples()
        .iter()
        .map(|e| {
            let label = model
                .label_index(e.label)
                .ok_or_else(|| Error::Config(format!("label {} of `{}` unknown to the model", e.label, e.id)))?;
            Ok(Sample {
                features: featurize(&e.text, e.language, model.dim),
                label,
            })
        })
        .collect()
}

/// Macro F1 of `model` on `corpus`, with predictions restricted to the
/// corpus' label set.
pub fn evaluate(model: &RefModel, corpus: &DomainCorpus) -> Result<f64> {
    let labels = corpus.label_set();
    let label_list: Vec<_> = labels.iter().copied().collect();
    let truth: Vec<_> = corpus.examples().iter().map(|e| e.label).collect();
    let preds: Vec<ParsedLabel> = corpus
        .examples()
        .iter()
        .map(|e| {
            let x = featurize(&e.text, e.language, model.dim);
            model.predict(&x, labels).map_or(ParsedLabel::Unparseable, Into::into)
        })
        .collect();
    Ok(score_labels(&truth, &preds, &label_list, RunMeta::default())?.macro_f1)
}

fn macro_f1(model: &RefModel, data: &DomainData) -> Result<f64> {
    let label_list: Vec<_> = data.labels.iter().copied().collect();
    let preds: Vec<ParsedLabel> = data
        .eval
        .iter()
        .map(|s| model.predict(&s.features, &data.labels).map_or(ParsedLabel::Unparseable, Into::into))
        .collect();
    Ok(score_labels(&data.eval_truth, &preds, &label_list, RunMeta::default())?.macro_f1)
}

/// Replay a manifest against `corpus_set`.
///
/// Every domain is evaluated on its validation split (test when absent)
/// after each `eval_every` steps. Evaluations that fall in the finalization
/// phase feed per-domain early stopping; steps of frozen domains are
/// re-drawn from the remaining active domains with balanced weights, and
/// training ends when no domain is left.
pub fn train_from_manifest(corpus_set: &CorpusSet, manifest: &TrainingManifest, options: &TrainOptions) -> Result<TrainRun> {
    if options.eval_every == 0 {
        return Err(Error::Config("eval_every must be at least 1".into()));
    }
    let fingerprint = format!("{:016x}", corpus_set.train_fingerprint());
    if fingerprint != manifest.header.corpus_fingerprint {
        return Err(Error::Manifest(format!(
            "corpus fingerprint {fingerprint} does not match manifest {}",
            manifest.header.corpus_fingerprint
        )));
    }
    let plan = &manifest.header.plan;
    let mut model = RefModel::new(options.feature_dim, corpus_set.train_labels());

    let mut data: BTreeMap<DomainId, DomainData> = BTreeMap::new();
    for (d, splits) in corpus_set.domains() {
        let eval = splits.eval_set();
        data.insert(
            d.clone(),
            DomainData {
                train: featurize_corpus(&splits.train, &model)?,
                eval: eval
                    .examples()
                    .iter()
                    .map(|e| Sample {
                        features: featurize(&e.text, e.language, model.dim),
                        label: 0,
                    })
                    .collect(),
                eval_truth: eval.examples().iter().map(|e| e.label).collect(),
                labels: eval.label_set().clone(),
            },
        );
    }

    let mut run = TrainRun {
        strategy: manifest.header.strategy.clone(),
        trajectory: Vec::new(),
        losses: Vec::with_capacity(manifest.steps.len()),
        early_stop: EarlyStopState::new(plan.early_stopping),
        frozen_at: BTreeMap::new(),
        redistributed_steps: 0,
        executed_steps: BTreeMap::new(),
        exhausted: false,
        model: RefModel::new(0, Vec::new()),
    };

    for (i, rec) in manifest.steps.iter().enumerate() {
        if rec.step != i {
            return Err(Error::Manifest(format!("record {i} carries step {}", rec.step)));
        }
        let (domain, ids) = if run.early_stop.is_frozen(&rec.domain) {
            let active: Vec<(DomainId, usize)> = corpus_set
                .domains()
                .filter(|(d, _)| !run.early_stop.is_frozen(d))
                .map(|(d, s)| (d.clone(), s.train.len()))
                .collect();
            if active.is_empty() {
                run.exhausted = true;
                break;
            }
            let weights = compute_weights(&active, WeightMode::Balanced)?;
            let mut rng = seed::rng(seed::derive(manifest.header.seed, i as u64));
            run.redistributed_steps += 1;
            draw_domain_batch(&weights, corpus_set, rec.example_ids.len().max(1), &mut rng)?
        } else {
            (rec.domain.clone(), rec.example_ids.clone())
        };

        let splits = corpus_set
            .get(&domain)
            .ok_or_else(|| Error::Manifest(format!("step {i}: unknown domain `{domain}`")))?;
        let domain_data = &data[&domain];
        let batch: Vec<Sample> = ids
            .iter()
            .map(|id| {
                splits
                    .train
                    .position(id)
                    .map(|p| domain_data.train[p].clone())
                    .ok_or_else(|| Error::Manifest(format!("step {i}: id `{id}` not in `{domain}` train split")))
            })
            .collect::<Result<_>>()?;

        let loss = model.sgd_step(&batch, rec.lr, &rec.layer_scales).map_err(|e| match e {
            Error::NonFinite { message, .. } => Error::NonFinite { step: i, message },
            other => other,
        })?;
        if !model.is_finite() {
            return Err(Error::NonFinite {
                step: i,
                message: "parameters became non-finite".into(),
            });
        }
        run.losses.push(loss);
        *run.executed_steps.entry(domain).or_insert(0) += 1;

        if (i + 1) % options.eval_every == 0 {
            let in_final = plan.phase_of(i)? == Phase::Final;
            for (d, dd) in &data {
                let f1 = macro_f1(&model, dd)?;
                run.trajectory.push(TrajectoryPoint {
                    step: i + 1,
                    domain: d.clone(),
                    macro_f1: f1,
                });
                if in_final && !run.early_stop.is_frozen(d) && run.early_stop.update(d, f1)? == StopUpdate::Frozen {
                    log::info!("domain `{d}` frozen at step {}", i + 1);
                    run.frozen_at.insert(d.clone(), i + 1);
                }
            }
        }
    }
    run.model = model;
    Ok(run)
}

/// Train domains one after another in `order` over the same step budget and
/// schedule as a balanced run.
pub fn train_sequential(
    corpus_set: &CorpusSet,
    plan: &PhasePlan,
    order: &[DomainId],
    batch_size: usize,
    seed: u64,
    options: &TrainOptions,
) -> Result<TrainRun> {
    let manifest = emit_sequential_manifest(corpus_set, plan, order, batch_size, seed)?;
    train_from_manifest(corpus_set, &manifest, options)
}
