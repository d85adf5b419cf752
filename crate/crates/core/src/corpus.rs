//! Corpus ingestion, label normalization and stratified splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Allowed training proportions, in percent.
pub const PROPORTIONS: [u8; 6] = [5, 10, 20, 40, 75, 100];

/// Default held-out fraction for datasets shipped without an official split.
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive,
    Negative,
    Neutral,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Positive,
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "positive",
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
        }
    }

    /// Canonical Chinese label word.
    pub fn zh_word(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "正面",
            SentimentLabel::Negative => "负面",
            SentimentLabel::Neutral => "中性",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" => Ok(SentimentLabel::Positive),
            "negative" | "neg" => Ok(SentimentLabel::Negative),
            "neutral" | "neu" => Ok(SentimentLabel::Neutral),
            other => match other {
                "正面" | "积极" => Ok(SentimentLabel::Positive),
                "负面" | "消极" => Ok(SentimentLabel::Negative),
                "中性" => Ok(SentimentLabel::Neutral),
                _ => Err(Error::Config(format!("unknown sentiment label `{s}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainId(pub String);

impl DomainId {
    pub fn new(name: impl Into<String>) -> Self {
        DomainId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DomainId {
    fn from(s: &str) -> Self {
        DomainId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    En,
    Zh,
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "en" => Ok(Language::En),
            "zh" => Ok(Language::Zh),
            _ => Err(Error::Config(format!("unknown language tag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: SentimentLabel,
    pub domain: DomainId,
    pub language: Language,
}

/// All examples of one domain, with the label statistics kept in sync.
#[derive(Debug, Clone)]
pub struct DomainCorpus {
    domain: DomainId,
    label_set: BTreeSet<SentimentLabel>,
    examples: Vec<Example>,
    class_counts: BTreeMap<SentimentLabel, usize>,
    index: HashMap<String, usize>,
}

impl DomainCorpus {
    pub fn new(domain: DomainId, examples: Vec<Example>) -> Result<Self> {
        let mut index = HashMap::with_capacity(examples.len());
        let mut class_counts = BTreeMap::new();
        for (i, ex) in examples.iter().enumerate() {
            let invalid = |reason: &str| Error::InvalidExample {
                domain: domain.clone(),
                id: ex.id.clone(),
                reason: reason.to_string(),
            };
            if ex.domain != domain {
                return Err(invalid("domain tag does not match corpus"));
            }
            if ex.text.trim().is_empty() {
                return Err(invalid("empty text"));
            }
            if index.insert(ex.id.clone(), i).is_some() {
                return Err(invalid("duplicate id"));
            }
            *class_counts.entry(ex.label).or_insert(0) += 1;
        }
        Ok(DomainCorpus {
            domain,
            label_set: class_counts.keys().copied().collect(),
            examples,
            class_counts,
            index,
        })
    }

    pub fn domain(&self) -> &DomainId {
        &self.domain
    }

    pub fn label_set(&self) -> &BTreeSet<SentimentLabel> {
        &self.label_set
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn class_counts(&self) -> &BTreeMap<SentimentLabel, usize> {
        &self.class_counts
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Language of the corpus, taken from its first example.
    pub fn language(&self) -> Language {
        self.examples.first().map(|e| e.language).unwrap_or_default()
    }

    fn select(&self, keep: &[usize]) -> DomainCorpus {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        let examples = keep.iter().map(|&i| self.examples[i].clone()).collect();
        DomainCorpus::new(self.domain.clone(), examples).expect("subset of a valid corpus")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(Error::Config(format!("unknown input format `{s}`"))),
        }
    }
}

/// Where each ingested field lives in the source file and how raw labels map
/// onto the unified vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    pub format: Format,
    pub text_field: String,
    pub label_field: String,
    pub id_field: Option<String>,
    pub language: Language,
    /// Raw label → unified label. When empty, canonical label names are
    /// accepted (case-insensitive, including the Chinese words).
    pub label_map: BTreeMap<String, SentimentLabel>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            format: Format::Csv,
            text_field: "text".into(),
            label_field: "label".into(),
            id_field: None,
            language: Language::En,
            label_map: BTreeMap::new(),
        }
    }
}

impl IngestOptions {
    fn map_label(&self, raw: &str) -> Option<SentimentLabel> {
        if self.label_map.is_empty() {
            raw.parse().ok()
        } else {
            self.label_map.get(raw.trim()).copied()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    UnmappedLabel { raw_label: String },
    EmptyText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    #[serde(flatten)]
    pub reason: RejectReason,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: DomainCorpus,
    pub rejected: Vec<RejectedRow>,
}

pub fn ingest(path: &Path, domain: &DomainId, opts: &IngestOptions) -> Result<Ingested> {
    let file = File::open(path)?;
    ingest_reader(file, path, domain, opts)
}

/// Ingest from any reader; `source` is only used in error messages.
pub fn ingest_reader<R: Read>(
    reader: R,
    source: &Path,
    domain: &DomainId,
    opts: &IngestOptions,
) -> Result<Ingested> {
    let rows = match opts.format {
        Format::Csv => read_csv_rows(reader, source, opts)?,
        Format::Jsonl => read_jsonl_rows(reader, source, opts)?,
    };

    let mut examples = Vec::new();
    let mut rejected = Vec::new();
    for row in rows {
        let text = row.text.trim();
        if text.is_empty() {
            rejected.push(RejectedRow {
                line: row.line,
                reason: RejectReason::EmptyText,
            });
            continue;
        }
        let Some(label) = opts.map_label(&row.label) else {
            rejected.push(RejectedRow {
                line: row.line,
                reason: RejectReason::UnmappedLabel {
                    raw_label: row.label,
                },
            });
            continue;
        };
        examples.push(Example {
            id: row.id.unwrap_or_else(|| format!("{domain}-{}", row.line)),
            text: text.to_string(),
            label,
            domain: domain.clone(),
            language: opts.language,
        });
    }
    if !rejected.is_empty() {
        log::warn!(
            "{}: {} rows rejected while ingesting `{domain}`",
            source.display(),
            rejected.len()
        );
    }
    if examples.is_empty() {
        return Err(Error::EmptyCorpus {
            domain: domain.clone(),
            rejected: rejected.len(),
        });
    }
    Ok(Ingested {
        corpus: DomainCorpus::new(domain.clone(), examples)?,
        rejected,
    })
}

struct RawRow {
    line: usize,
    id: Option<String>,
    text: String,
    label: String,
}

fn parse_error(source: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_csv_rows<R: Read>(reader: R, source: &Path, opts: &IngestOptions) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(source, 1, e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_error(source, 1, format!("missing column `{name}`")))
    };
    let text_col = column(&opts.text_field)?;
    let label_col = column(&opts.label_field)?;
    let id_col = opts.id_field.as_deref().map(column).transpose()?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_error(source, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |col: usize| {
            record
                .get(col)
                .map(str::to_string)
                .ok_or_else(|| parse_error(source, line, format!("missing field {col}")))
        };
        rows.push(RawRow {
            line,
            id: id_col.map(field).transpose()?,
            text: field(text_col)?,
            label: field(label_col)?,
        });
    }
    Ok(rows)
}

fn json_scalar(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn read_jsonl_rows<R: Read>(reader: R, source: &Path, opts: &IngestOptions) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_error(source, line_no, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_error(source, line_no, "expected a JSON object"))?;
        let field = |name: &str| {
            obj.get(name)
                .and_then(json_scalar)
                .ok_or_else(|| parse_error(source, line_no, format!("missing field `{name}`")))
        };
        rows.push(RawRow {
            line: line_no,
            id: opts.id_field.as_deref().map(field).transpose()?,
            text: field(&opts.text_field)?,
            label: field(&opts.label_field)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub test_fraction: f64,
    /// Percentage of the train split retained, one of [`PROPORTIONS`].
    pub train_proportion: u8,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            seed: 0,
            test_fraction: DEFAULT_TEST_FRACTION,
            train_proportion: 100,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        check_proportion(self.train_proportion)
    }
}

fn check_proportion(p: u8) -> Result<()> {
    if PROPORTIONS.contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "training proportion {p}% is not one of {PROPORTIONS:?}"
        )))
    }
}

/// Per-class queues of shuffled example indices, in label order.
fn class_queues(corpus: &DomainCorpus, seed: u64) -> Vec<(SentimentLabel, Vec<usize>)> {
    let mut rng = seed::rng(seed::derive_str(seed, corpus.domain.as_str()));
    corpus
        .class_counts
        .keys()
        .map(|&label| {
            let mut idx: Vec<usize> = corpus
                .examples
                .iter()
                .enumerate()
                .filter(|(_, e)| e.label == label)
                .map(|(i, _)| i)
                .collect();
            idx.shuffle(&mut rng);
            (label, idx)
        })
        .collect()
}

/// Interleave per-class queues so that every prefix of the result is
/// stratified: after `k` picks each class holds within one example of
/// `k * n_c / n`. At each position the class furthest below its quota is
/// taken, ties broken by label order.
fn stratified_order(queues: &[(SentimentLabel, Vec<usize>)]) -> Vec<usize> {
    let total: usize = queues.iter().map(|(_, q)| q.len()).sum();
    let mut taken = vec![0usize; queues.len()];
    let mut order = Vec::with_capacity(total);
    for k in 1..=total {
        let (best, _) = queues
            .iter()
            .enumerate()
            .filter(|(c, (_, q))| taken[*c] < q.len())
            .map(|(c, (_, q))| (c, (k * q.len()) as i128 - (taken[c] * total) as i128))
            .fold((usize::MAX, i128::MIN), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        order.push(queues[best].1[taken[best]]);
        taken[best] += 1;
    }
    order
}

/// Split one corpus into (train, test), stratified by class.
///
/// Each class keeps at least one example on either side; otherwise the test
/// share of every class is within one example of `n_c * test_fraction`.
pub fn stratified_split(corpus: &DomainCorpus, spec: &SplitSpec) -> Result<(DomainCorpus, DomainCorpus)> {
    spec.validate()?;
    if let Some((&label, _)) = corpus.class_counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Stratification { label });
    }
    let queues = class_queues(corpus, spec.seed);
    let n = corpus.len();
    let n_test = ((n as f64) * spec.test_fraction).round() as usize;

    let order = stratified_order(&queues);
    let mut per_class: Vec<usize> = queues
        .iter()
        .map(|(label, _)| {
            order[..n_test]
                .iter()
                .filter(|&&i| corpus.examples[i].label == *label)
                .count()
        })
        .collect();
    for (count, (_, q)) in per_class.iter_mut().zip(&queues) {
        *count = (*count).clamp(1, q.len() - 1);
    }

    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for (count, (_, q)) in per_class.iter().zip(&queues) {
        test_idx.extend_from_slice(&q[..*count]);
        train_idx.extend_from_slice(&q[*count..]);
    }
    Ok((corpus.select(&train_idx), corpus.select(&test_idx)))
}

/// Stratified `proportion`% subset of a train split.
///
/// Subsets drawn with the same seed are nested: the 5% subset is contained in
/// the 10% subset, and so on up to 100%, which returns the input unchanged.
pub fn subset_proportion(train: &DomainCorpus, proportion: u8, seed: u64) -> Result<DomainCorpus> {
    check_proportion(proportion)?;
    if proportion == 100 {
        return Ok(train.clone());
    }
    let n = train.len();
    let keep = (n * proportion as usize).div_ceil(100);
    let order = stratified_order(&class_queues(train, seed));
    Ok(train.select(&order[..keep]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One line of the normalized corpus interchange file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub text: String,
    pub label: SentimentLabel,
    pub domain: DomainId,
    pub language: Language,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ExampleRecord {
    pub fn new(example: &Example, split: Option<Split>) -> Self {
        ExampleRecord {
            id: example.id.clone(),
            text: example.text.clone(),
            label: example.label,
            domain: example.domain.clone(),
            language: example.language,
            split,
        }
    }

    pub fn into_example(self) -> Example {
        Example {
            id: self.id,
            text: self.text,
            label: self.label,
            domain: self.domain,
            language: self.language,
        }
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ExampleRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[ExampleRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Group records without split assignments into one corpus per domain.
pub fn corpora_from_records(records: Vec<ExampleRecord>) -> Result<BTreeMap<DomainId, DomainCorpus>> {
    let mut grouped: BTreeMap<DomainId, Vec<Example>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.domain.clone()).or_default().push(r.into_example());
    }
    grouped
        .into_iter()
        .map(|(d, ex)| DomainCorpus::new(d.clone(), ex).map(|c| (d, c)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct DomainSplits {
    pub train: DomainCorpus,
    pub validation: Option<DomainCorpus>,
    pub test: DomainCorpus,
}

impl DomainSplits {
    pub fn new(train: DomainCorpus, validation: Option<DomainCorpus>, test: DomainCorpus) -> Result<Self> {
        let domain = train.domain.clone();
        let mut seen = HashSet::new();
        let parts = std::iter::once(&train).chain(validation.as_ref()).chain(std::iter::once(&test));
        for part in parts {
            if part.domain != domain {
                return Err(Error::Config(format!(
                    "split corpora disagree on domain: `{}` vs `{domain}`",
                    part.domain
                )));
            }
            for ex in &part.examples {
                if !seen.insert(ex.id.as_str()) {
                    return Err(Error::InvalidExample {
                        domain: domain.clone(),
                        id: ex.id.clone(),
                        reason: "assigned to more than one split".into(),
                    });
                }
            }
        }
        Ok(DomainSplits { train, validation, test })
    }

    /// Split used for model selection: validation when present, else test.
    pub fn eval_set(&self) -> &DomainCorpus {
        self.validation.as_ref().unwrap_or(&self.test)
    }
}

/// Every domain with its split assignment. Each example belongs to exactly
/// one split of its domain.
#[derive(Debug, Clone, Default)]
pub struct CorpusSet {
    domains: BTreeMap<DomainId, DomainSplits>,
}

impl CorpusSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, splits: DomainSplits) {
        self.domains.insert(splits.train.domain.clone(), splits);
    }

    /// Split every corpus with `spec` (test fraction, then the train proportion).
    pub fn from_corpora<'a>(corpora: impl IntoIterator<Item = &'a DomainCorpus>, spec: &SplitSpec) -> Result<Self> {
        let mut set = CorpusSet::new();
        for corpus in corpora {
            let (train, test) = stratified_split(corpus, spec)?;
            let train = subset_proportion(&train, spec.train_proportion, spec.seed)?;
            set.insert(DomainSplits::new(train, None, test)?);
        }
        Ok(set)
    }

    pub fn from_records(records: Vec<ExampleRecord>) -> Result<Self> {
        let mut grouped: BTreeMap<DomainId, BTreeMap<Split, Vec<Example>>> = BTreeMap::new();
        for r in records {
            let split = r.split.ok_or_else(|| {
                Error::Config(format!("record `{}` of `{}` has no split assignment", r.id, r.domain))
            })?;
            grouped
                .entry(r.domain.clone())
                .or_default()
                .entry(split)
                .or_default()
                .push(r.into_example());
        }
        let mut set = CorpusSet::new();
        for (domain, mut parts) in grouped {
            let mut take = |s: Split| parts.remove(&s).map(|ex| DomainCorpus::new(domain.clone(), ex)).transpose();
            let train = take(Split::Train)?;
            let validation = take(Split::Validation)?;
            let test = take(Split::Test)?;
            let (Some(train), Some(test)) = (train, test) else {
                return Err(Error::Config(format!("domain `{domain}` needs both train and test records")));
            };
            set.insert(DomainSplits::new(train, validation, test)?);
        }
        Ok(set)
    }

    pub fn to_records(&self) -> Vec<ExampleRecord> {
        let mut out = Vec::new();
        for s in self.domains.values() {
            let parts = [(Split::Train, Some(&s.train)), (Split::Validation, s.validation.as_ref()), (Split::Test, Some(&s.test))];
            for (split, corpus) in parts {
                if let Some(c) = corpus {
                    out.extend(c.examples.iter().map(|e| ExampleRecord::new(e, Some(split))));
                }
            }
        }
        out
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Self::from_records(read_records(path)?)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_records(path, &self.to_records())
    }

    pub fn domains(&self) -> impl Iterator<Item = (&DomainId, &DomainSplits)> {
        self.domains.iter()
    }

    pub fn domain_ids(&self) -> Vec<DomainId> {
        self.domains.keys().cloned().collect()
    }

    pub fn get(&self, domain: &DomainId) -> Option<&DomainSplits> {
        self.domains.get(domain)
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    /// Union of every domain's train labels, in label order.
    pub fn train_labels(&self) -> Vec<SentimentLabel> {
        let set: BTreeSet<_> = self
            .domains
            .values()
            .flat_map(|s| s.train.label_set.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    /// 64-bit FNV-1a over the sorted train example ids (each id followed by a
    /// zero byte).
    pub fn train_fingerprint(&self) -> u64 {
        let mut ids: Vec<&str> = self
            .domains
            .values()
            .flat_map(|s| s.train.examples.iter().map(|e| e.id.as_str()))
            .collect();
        ids.sort_unstable();
        let mut h = seed::Fnv1a::default();
        for id in ids {
            h.write(id.as_bytes());
            h.write(&[0]);
        }
        h.finish()
    }
}

/// Paths of an ingestion job; used by the CLI config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestJob {
    pub path: PathBuf,
    pub domain: DomainId,
    #[serde(flatten)]
    pub options: IngestOptions,
}
