//! Domain-weighted sampling and step-level training manifests.
//!
//! A manifest header is a single JSON object on the first line, followed by
//! one JSON object per training step.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSet, DomainId, Example};
use crate::error::{Error, Result};
use crate::scheduler::{Phase, PhasePlan};
use crate::seed;

pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Every active domain equally likely.
    Balanced,
    /// Probability proportional to domain size.
    Proportional,
    /// Probability proportional to the reciprocal of domain size, so the
    /// smallest domains dominate.
    InitPriority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingWeights {
    entries: Vec<(DomainId, f64)>,
}

impl SamplingWeights {
    /// Explicit weights; must be non-negative and sum to 1.
    pub fn from_entries(entries: Vec<(DomainId, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("no domains to sample from".into()));
        }
        let sum: f64 = entries.iter().map(|(_, w)| w).sum();
        if entries.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("sampling weights must be non-negative and sum to 1, got {sum}")));
        }
        Ok(SamplingWeights { entries })
    }

    pub fn entries(&self) -> &[(DomainId, f64)] {
        &self.entries
    }

    pub fn get(&self, domain: &DomainId) -> Option<f64> {
        self.entries.iter().find(|(d, _)| d == domain).map(|(_, w)| *w)
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> Result<&DomainId> {
        let dist = WeightedIndex::new(self.entries.iter().map(|(_, w)| *w)).map_err(|_| Error::SamplerExhausted)?;
        Ok(&self.entries[dist.sample(rng)].0)
    }
}

pub fn compute_weights(domains: &[(DomainId, usize)], mode: WeightMode) -> Result<SamplingWeights> {
    if domains.is_empty() {
        return Err(Error::Config("no active domains".into()));
    }
    if let Some((d, _)) = domains.iter().find(|(_, n)| *n == 0) {
        return Err(Error::Config(format!("domain `{d}` is empty")));
    }
    let raw: Vec<f64> = domains
        .iter()
        .map(|&(_, n)| match mode {
            WeightMode::Balanced => 1.0,
            WeightMode::Proportional => n as f64,
            WeightMode::InitPriority => 1.0 / n as f64,
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(SamplingWeights {
        entries: domains
            .iter()
            .zip(raw)
            .map(|((d, _), w)| (d.clone(), w / total))
            .collect(),
    })
}

fn train_sizes(corpus_set: &CorpusSet, skip: &BTreeSet<DomainId>) -> Vec<(DomainId, usize)> {
    corpus_set
        .domains()
        .filter(|(d, _)| !skip.contains(*d))
        .map(|(d, s)| (d.clone(), s.train.len()))
        .collect()
}

/// Draw a batch where every slot independently picks a domain by weight and
/// then an example uniformly from that domain's train split (with
/// replacement).
pub fn draw_batch<'a>(
    weights: &SamplingWeights,
    corpus_set: &'a CorpusSet,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<&'a Example>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    (0..batch_size)
        .map(|_| {
            let domain = weights.pick(rng)?;
            let train = &corpus_set
                .get(domain)
                .ok_or_else(|| Error::Config(format!("unknown domain `{domain}`")))?
                .train;
            if train.is_empty() {
                return Err(Error::Config(format!("domain `{domain}` has an empty train split")));
            }
            Ok(&train.examples()[rng.gen_range(0..train.len())])
        })
        .collect()
}

/// Pick one domain by weight and draw a whole batch of ids from it.
pub fn draw_domain_batch(
    weights: &SamplingWeights,
    corpus_set: &CorpusSet,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DomainId, Vec<String>)> {
    let domain = weights.pick(rng)?.clone();
    let train = &corpus_set
        .get(&domain)
        .ok_or_else(|| Error::Config(format!("unknown domain `{domain}`")))?
        .train;
    if train.is_empty() {
        return Err(Error::Config(format!("domain `{domain}` has an empty train split")));
    }
    let ids = (0..batch_size)
        .map(|_| train.examples()[rng.gen_range(0..train.len())].id.clone())
        .collect();
    Ok((domain, ids))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizationStub {
    pub weight_storage: String,
    pub compute_dtype: String,
}

impl Default for QuantizationStub {
    fn default() -> Self {
        QuantizationStub {
            weight_storage: "4-bit".into(),
            compute_dtype: "bfloat16".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Balanced,
    /// Domains trained one after another, each for a share of the step
    /// budget proportional to its train size.
    Sequential { order: Vec<DomainId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub plan: PhasePlan,
    pub seed: u64,
    pub batch_size: usize,
    pub strategy: Strategy,
    /// FNV-1a 64 over the sorted train ids, as 16 hex digits.
    pub corpus_fingerprint: String,
    pub domain_sizes: Vec<(DomainId, usize)>,
    pub quantization: QuantizationStub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Phase,
    pub lr: f64,
    pub layer_scales: Vec<f64>,
    pub domain: DomainId,
    pub example_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingManifest {
    pub header: ManifestHeader,
    pub steps: Vec<StepRecord>,
}

fn fingerprint_hex(corpus_set: &CorpusSet) -> String {
    format!("{:016x}", corpus_set.train_fingerprint())
}

fn check_inputs(corpus_set: &CorpusSet, plan: &PhasePlan, batch_size: usize) -> Result<()> {
    plan.validate()?;
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if corpus_set.is_empty() {
        return Err(Error::Config("corpus set has no domains".into()));
    }
    if let Some((d, _)) = corpus_set.domains().find(|(_, s)| s.train.is_empty()) {
        return Err(Error::Config(format!("domain `{d}` has an empty train split")));
    }
    Ok(())
}

fn step_record(plan: &PhasePlan, step: usize, domain: DomainId, example_ids: Vec<String>) -> Result<StepRecord> {
    Ok(StepRecord {
        step,
        phase: plan.phase_of(step)?,
        lr: plan.lr_at(step)?,
        layer_scales: plan.scales_at(step)?,
        domain,
        example_ids,
    })
}

/// Balanced three-phase manifest: reciprocal-size weights during
/// initialization, uniform domain weights afterwards.
pub fn emit_manifest(corpus_set: &CorpusSet, plan: &PhasePlan, batch_size: usize, seed: u64) -> Result<TrainingManifest> {
    emit_manifest_with_frozen(corpus_set, plan, batch_size, seed, &BTreeSet::new())
}

/// As [`emit_manifest`], with finalization steps restricted to domains not in
/// `frozen`.
pub fn emit_manifest_with_frozen(
    corpus_set: &CorpusSet,
    plan: &PhasePlan,
    batch_size: usize,
    seed: u64,
    frozen: &BTreeSet<DomainId>,
) -> Result<TrainingManifest> {
    check_inputs(corpus_set, plan, batch_size)?;
    let none = BTreeSet::new();
    let init = compute_weights(&train_sizes(corpus_set, &none), WeightMode::InitPriority)?;
    let balanced = compute_weights(&train_sizes(corpus_set, &none), WeightMode::Balanced)?;
    let active = train_sizes(corpus_set, frozen);
    let finalization = if active.is_empty() {
        None
    } else {
        Some(compute_weights(&active, WeightMode::Balanced)?)
    };

    let mut rng = seed::rng(seed);
    let mut steps = Vec::with_capacity(plan.total_steps);
    for step in 0..plan.total_steps {
        let weights = match plan.phase_of(step)? {
            Phase::Init => &init,
            Phase::Balanced => &balanced,
            Phase::Final => finalization.as_ref().ok_or(Error::SamplerExhausted)?,
        };
        let (domain, ids) = draw_domain_batch(weights, corpus_set, batch_size, &mut rng)?;
        steps.push(step_record(plan, step, domain, ids)?);
    }
    Ok(TrainingManifest {
        header: ManifestHeader {
            plan: plan.clone(),
            seed,
            batch_size,
            strategy: Strategy::Balanced,
            corpus_fingerprint: fingerprint_hex(corpus_set),
            domain_sizes: train_sizes(corpus_set, &none),
            quantization: QuantizationStub::default(),
        },
        steps,
    })
}

/// Sequential manifest over the same step budget and learning-rate schedule:
/// each domain in `order` gets a contiguous block of steps proportional to
/// its train size.
pub fn emit_sequential_manifest(
    corpus_set: &CorpusSet,
    plan: &PhasePlan,
    order: &[DomainId],
    batch_size: usize,
    seed: u64,
) -> Result<TrainingManifest> {
    check_inputs(corpus_set, plan, batch_size)?;
    let covered: BTreeSet<_> = order.iter().collect();
    if covered.len() != order.len() || corpus_set.domain_ids().iter().any(|d| !covered.contains(d)) || order.len() != corpus_set.len() {
        return Err(Error::Config("sequential order must list every domain exactly once".into()));
    }
    let sizes: Vec<usize> = order.iter().map(|d| corpus_set.get(d).map_or(0, |s| s.train.len())).collect();
    let total: usize = sizes.iter().sum();
    let t = plan.total_steps;
    let mut boundaries = Vec::with_capacity(order.len());
    let mut cum = 0usize;
    for &n in &sizes {
        cum += n;
        boundaries.push(((t as f64) * cum as f64 / total as f64).round() as usize);
    }

    // One-hot weights keep random-number consumption identical to the
    // balanced emitter, so single-domain runs coincide.
    let one_hot = |k: usize| {
        SamplingWeights::from_entries(
            order
                .iter()
                .enumerate()
                .map(|(i, d)| (d.clone(), if i == k { 1.0 } else { 0.0 }))
                .collect(),
        )
    };
    let mut rng = seed::rng(seed);
    let mut steps = Vec::with_capacity(t);
    let mut current = 0;
    let mut weights = one_hot(0)?;
    for step in 0..t {
        while step >= boundaries[current] {
            current += 1;
            weights = one_hot(current)?;
        }
        let (domain, ids) = draw_domain_batch(&weights, corpus_set, batch_size, &mut rng)?;
        steps.push(step_record(plan, step, domain, ids)?);
    }
    Ok(TrainingManifest {
        header: ManifestHeader {
            plan: plan.clone(),
            seed,
            batch_size,
            strategy: Strategy::Sequential { order: order.to_vec() },
            corpus_fingerprint: fingerprint_hex(corpus_set),
            domain_sizes: train_sizes(corpus_set, &BTreeSet::new()),
            quantization: QuantizationStub::default(),
        },
        steps,
    })
}

impl TrainingManifest {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Manifest("empty manifest file".into()))??;
        let header: ManifestHeader = serde_json::from_str(&header_line)?;
        let mut steps = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                steps.push(serde_json::from_str(&line)?);
            }
        }
        Ok(TrainingManifest { header, steps })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }

    /// Check the manifest against a corpus: contiguous steps covering the
    /// plan, every id resolvable in its domain's train split, and learning
    /// rates reproducing the schedule exactly.
    pub fn validate(&self, corpus_set: &CorpusSet) -> Result<()> {
        let plan = &self.header.plan;
        if self.steps.len() != plan.total_steps {
            return Err(Error::Manifest(format!(
                "{} step records for a {}-step plan",
                self.steps.len(),
                plan.total_steps
            )));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.step != i {
                return Err(Error::Manifest(format!("record {i} carries step {}", s.step)));
            }
            if s.lr != plan.lr_at(i)? || s.layer_scales != plan.scales_at(i)? || s.phase != plan.phase_of(i)? {
                return Err(Error::Manifest(format!("step {i} disagrees with the schedule")));
            }
            let train = &corpus_set
                .get(&s.domain)
                .ok_or_else(|| Error::Manifest(format!("step {i}: unknown domain `{}`", s.domain)))?
                .train;
            if let Some(id) = s.example_ids.iter().find(|id| train.get(id).is_none()) {
                return Err(Error::Manifest(format!("step {i}: id `{id}` not in `{}` train split", s.domain)));
            }
        }
        Ok(())
    }
}
