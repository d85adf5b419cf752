//! Seeded synthetic multi-domain corpora for offline experiments.
//!
//! Each domain draws "signal" tokens from a vocabulary private to the
//! (domain, class) pair, plus domain-private filler tokens. Domains are
//! therefore separable on their own vocabulary but share nothing, which is
//! the heterogeneous setting the balanced sampler is designed for.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSet, DomainCorpus, DomainId, DomainSplits, Example, Language, SentimentLabel, SplitSpec};
use crate::error::{Error, Result};
use crate::seed;

const EN_POSITIVE: &[&str] = &["surged", "profit", "growth", "gains", "beat"];
const EN_NEGATIVE: &[&str] = &["loss", "plunged", "decline", "weak", "lawsuit"];
const ZH_POSITIVE: &[&str] = &["利好", "上涨", "盈利", "增长"];
const ZH_NEGATIVE: &[&str] = &["利空", "下跌", "亏损", "下滑"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDomain {
    pub name: String,
    pub size: usize,
    pub language: Language,
    pub labels: Vec<SentimentLabel>,
    /// Relative class frequencies, aligned with `labels`; empty means uniform.
    pub class_weights: Vec<f64>,
    pub signal_vocab: usize,
    pub signal_tokens: usize,
    pub filler_vocab: usize,
    pub filler_tokens: usize,
    /// Probability that a label is replaced by a uniformly random one.
    pub label_noise: f64,
    /// Every token of every example is unique, so nothing transfers between
    /// examples and the domain cannot be learned.
    pub unlearnable: bool,
    /// Probability of adding one real sentiment word matching the label, so
    /// lexicon classifiers have something to find.
    pub lexicon_rate: f64,
}

impl Default for SyntheticDomain {
    fn default() -> Self {
        SyntheticDomain {
            name: "synthetic".into(),
            size: 200,
            language: Language::En,
            labels: vec![SentimentLabel::Positive, SentimentLabel::Negative, SentimentLabel::Neutral],
            class_weights: Vec::new(),
            signal_vocab: 50,
            signal_tokens: 2,
            filler_vocab: 200,
            filler_tokens: 6,
            label_noise: 0.0,
            unlearnable: false,
            lexicon_rate: 0.0,
        }
    }
}

impl SyntheticDomain {
    pub fn english(name: &str, size: usize) -> Self {
        SyntheticDomain {
            name: name.into(),
            size,
            ..Default::default()
        }
    }

    pub fn chinese(name: &str, size: usize) -> Self {
        SyntheticDomain {
            name: name.into(),
            size,
            language: Language::Zh,
            labels: vec![SentimentLabel::Positive, SentimentLabel::Negative],
            ..Default::default()
        }
    }

    fn token(&self, kind: &str, index: usize) -> String {
        match self.language {
            Language::En => format!("{}{kind}{index}", self.name.to_ascii_lowercase()),
            Language::Zh => {
                // Two CJK ideographs determined by (domain, kind, index).
                let key = seed::fnv1a(format!("{}/{kind}", self.name).as_bytes());
                let base = 0x4E00 + (key % 0x4000) as u32;
                let a = char::from_u32(base + (index / 96) as u32 % 0x100).unwrap_or('一');
                let b = char::from_u32(0x6000 + (index % 96) as u32 * 7 + (key % 7) as u32).unwrap_or('二');
                format!("{a}{b}")
            }
        }
    }

    fn sample_label(&self, rng: &mut ChaCha8Rng) -> SentimentLabel {
        let weights: Vec<f64> = if self.class_weights.len() == self.labels.len() {
            self.class_weights.clone()
        } else {
            vec![1.0; self.labels.len()]
        };
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (l, w) in self.labels.iter().zip(&weights) {
            if u < *w {
                return *l;
            }
            u -= w;
        }
        *self.labels.last().unwrap()
    }

    fn generate(&self, rng: &mut ChaCha8Rng) -> Result<DomainCorpus> {
        if self.labels.is_empty() || self.size == 0 {
            return Err(Error::Config(format!("synthetic domain `{}` needs labels and a size", self.name)));
        }
        let domain = DomainId::new(self.name.clone());
        let mut examples = Vec::with_capacity(self.size);
        // Cycle through the labels first so every class is represented.
        for i in 0..self.size {
            let true_label = if i < self.labels.len() { self.labels[i] } else { self.sample_label(rng) };
            let mut tokens = Vec::new();
            if self.unlearnable {
                for k in 0..(self.signal_tokens + self.filler_tokens).max(1) {
                    tokens.push(self.token("u", i * 64 + k));
                }
            } else {
                let class = self.labels.iter().position(|l| *l == true_label).unwrap();
                for _ in 0..self.signal_tokens {
                    let k = rng.gen_range(0..self.signal_vocab.max(1));
                    tokens.push(self.token(&format!("s{class}x"), k));
                }
                for _ in 0..self.filler_tokens {
                    tokens.push(self.token("f", rng.gen_range(0..self.filler_vocab.max(1))));
                }
            }
            if rng.gen::<f64>() < self.lexicon_rate {
                let words = match (self.language, true_label) {
                    (Language::En, SentimentLabel::Positive) => EN_POSITIVE,
                    (Language::En, SentimentLabel::Negative) => EN_NEGATIVE,
                    (Language::Zh, SentimentLabel::Positive) => ZH_POSITIVE,
                    (Language::Zh, SentimentLabel::Negative) => ZH_NEGATIVE,
                    _ => &[][..],
                };
                if let Some(w) = words.choose(rng) {
                    tokens.push((*w).to_string());
                }
            }
            tokens.shuffle(rng);
            let label = if i >= self.labels.len() && rng.gen::<f64>() < self.label_noise {
                *self.labels.choose(rng).unwrap()
            } else {
                true_label
            };
            examples.push(Example {
                id: format!("{}-{i:05}", self.name),
                text: tokens.join(" "),
                label,
                domain: domain.clone(),
                language: self.language,
            });
        }
        DomainCorpus::new(domain, examples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub domains: Vec<SyntheticDomain>,
    pub test_fraction: f64,
    /// Fraction of the train split moved to a validation split; 0 disables it.
    pub validation_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            domains: vec![SyntheticDomain::english("synthetic", 200)],
            test_fraction: 0.2,
            validation_fraction: 0.0,
        }
    }
}

impl SyntheticSpec {
    /// Generate each domain and split it (stratified) into train, optional
    /// validation and test.
    pub fn build(&self, seed: u64) -> Result<CorpusSet> {
        let mut set = CorpusSet::new();
        for d in &self.domains {
            let mut rng = seed::rng(seed::derive_str(seed, &d.name));
            let corpus = d.generate(&mut rng)?;
            let (train, test) = crate::corpus::stratified_split(
                &corpus,
                &SplitSpec {
                    seed,
                    test_fraction: self.test_fraction,
                    train_proportion: 100,
                },
            )?;
            let (train, validation) = if self.validation_fraction > 0.0 {
                let (t, v) = crate::corpus::stratified_split(
                    &train,
                    &SplitSpec {
                        seed: seed::derive(seed, 1),
                        test_fraction: self.validation_fraction,
                        train_proportion: 100,
                    },
                )?;
                (t, Some(v))
            } else {
                (train, None)
            };
            set.insert(DomainSplits::new(train, validation, test)?);
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let spec = SyntheticSpec {
            domains: vec![SyntheticDomain::english("a", 100), SyntheticDomain::chinese("b", 50)],
            validation_fraction: 0.25,
            ..Default::default()
        };
        let x = spec.build(11).unwrap();
        let y = spec.build(11).unwrap();
        assert_eq!(x.to_records(), y.to_records());
        assert_eq!(x.to_records().len(), 150);
        let b = x.get(&"b".into()).unwrap();
        assert!(!b.train.label_set().contains(&SentimentLabel::Neutral));
        assert!(b.validation.is_some());
    }
}
