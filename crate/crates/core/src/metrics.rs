//! Accuracy, macro F1 and run aggregation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};
use crate::inference::{ParsedLabel, Prediction};

/// Rows are true labels, columns predicted labels plus a trailing column for
/// predictions outside the label set (unparseable outputs).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<SentimentLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn build(truth: &[SentimentLabel], preds: &[ParsedLabel], labels: &[SentimentLabel]) -> Result<Self> {
        if truth.len() != preds.len() {
            return Err(Error::Contract(format!(
                "{} true labels but {} predictions",
                truth.len(),
                preds.len()
            )));
        }
        let k = labels.len();
        let mut counts = vec![vec![0u64; k + 1]; k];
        for (t, p) in truth.iter().zip(preds) {
            let row = labels
                .iter()
                .position(|l| l == t)
                .ok_or_else(|| Error::Contract(format!("true label {t} not in the label set")))?;
            let col = p.label().and_then(|p| labels.iter().position(|l| *l == p)).unwrap_or(k);
            counts[row][col] += 1;
        }
        Ok(ConfusionMatrix {
            labels: labels.to_vec(),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn unparseable(&self) -> u64 {
        let k = self.labels.len();
        self.counts.iter().map(|r| r[k]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: SentimentLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub model: String,
    pub dataset: String,
    /// Shot count ("3-shot") or training proportion ("40%").
    pub setting: String,
    pub seed: u64,
}

impl RunMeta {
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.model, &self.dataset, &self.setting)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    pub n: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub unparseable_rate: f64,
    /// Share of the most frequent true class: the accuracy of always
    /// predicting it.
    pub majority_share: f64,
    /// False when accuracy does not exceed `majority_share`.
    pub beats_trivial_baseline: bool,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, meta: RunMeta) -> Result<Self> {
        let n = confusion.total();
        if n == 0 {
            return Err(Error::Contract("cannot score an empty evaluation".into()));
        }
        let k = confusion.labels.len();
        let per_class: Vec<ClassScores> = confusion
            .labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let tp = confusion.counts[i][i];
                let support: u64 = confusion.counts[i].iter().sum();
                let predicted: u64 = (0..k).map(|r| confusion.counts[r][i]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassScores {
                    label,
                    precision,
                    recall,
                    f1,
                    support,
                }
            })
            .collect();
        let accuracy = ratio(confusion.correct(), n);
        let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
        let majority_share = ratio(per_class.iter().map(|c| c.support).max().unwrap_or(0), n);
        Ok(EvalReport {
            meta,
            n,
            accuracy,
            macro_f1,
            unparseable_rate: ratio(confusion.unparseable(), n),
            majority_share,
            beats_trivial_baseline: accuracy > majority_share,
            per_class,
            confusion,
        })
    }
}

/// Score parsed predictions against ground truth over `label_set`.
///
/// Classes with no support or no predictions score F1 = 0 and still count in
/// the macro average.
pub fn score_labels(
    truth: &[SentimentLabel],
    preds: &[ParsedLabel],
    label_set: &[SentimentLabel],
    meta: RunMeta,
) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Contract("cannot score an empty evaluation".into()));
    }
    EvalReport::from_confusion(ConfusionMatrix::build(truth, preds, label_set)?, meta)
}

pub fn score(truth: &[SentimentLabel], preds: &[Prediction], label_set: &[SentimentLabel], meta: RunMeta) -> Result<EvalReport> {
    let parsed: Vec<ParsedLabel> = preds.iter().map(|p| p.parsed_label).collect();
    score_labels(truth, &parsed, label_set, meta)
}

/// Mean with population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub model: String,
    pub dataset: String,
    pub setting: String,
    pub seeds: Vec<u64>,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub unparseable_rate: MeanStd,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    let Some(first) = reports.first() else {
        return Err(Error::Aggregation("no reports".into()));
    };
    if reports.len() < 2 {
        return Err(Error::Aggregation("at least two runs are needed".into()));
    }
    if let Some(r) = reports.iter().find(|r| r.meta.key() != first.meta.key()) {
        return Err(Error::Aggregation(format!(
            "mixed run keys {:?} and {:?}",
            first.meta.key(),
            r.meta.key()
        )));
    }
    let collect = |f: fn(&EvalReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        model: first.meta.model.clone(),
        dataset: first.meta.dataset.clone(),
        setting: first.meta.setting.clone(),
        seeds: reports.iter().map(|r| r.meta.seed).collect(),
        accuracy: collect(|r| r.accuracy),
        macro_f1: collect(|r| r.macro_f1),
        unparseable_rate: collect(|r| r.unparseable_rate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentimentLabel::{Negative as Neg, Positive as Pos};

    fn meta() -> RunMeta {
        RunMeta {
            model: "m".into(),
            dataset: "d".into(),
            setting: "3-shot".into(),
            seed: 0,
        }
    }

    #[test]
    fn hand_case() {
        let r = score_labels(&[Pos, Pos, Neg], &[ParsedLabel::Positive; 3], &[Pos, Neg], meta()).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[0].f1 - 0.8).abs() < 1e-12);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!((r.macro_f1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn perfect() {
        let truth = [Pos, Neg, Neg];
        let preds: Vec<ParsedLabel> = truth.iter().map(|&l| l.into()).collect();
        let r = score_labels(&truth, &preds, &[Pos, Neg], meta()).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
        assert!(r.beats_trivial_baseline);
    }

    #[test]
    fn majority_baseline_flagged() {
        let truth: Vec<_> = (0..100).map(|i| if i < 90 { Pos } else { Neg }).collect();
        let r = score_labels(&truth, &[ParsedLabel::Positive; 100], &[Pos, Neg], meta()).unwrap();
        assert_eq!(r.accuracy, 0.9);
        // F1(pos) = 2 * 0.9 * 1 / 1.9
        assert!((r.macro_f1 - 0.9 / 1.9).abs() < 1e-12);
        assert!(!r.beats_trivial_baseline);
    }

    #[test]
    fn unparseable_column() {
        let r = score_labels(&[Pos, Neg], &[ParsedLabel::Unparseable, ParsedLabel::Neutral], &[Pos, Neg], meta()).unwrap();
        assert_eq!(r.confusion.counts, vec![vec![0, 0, 1], vec![0, 0, 1]]);
        assert_eq!(r.unparseable_rate, 1.0);
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            score_labels(&[Pos], &[], &[Pos], meta()),
            Err(Error::Contract(_))
        ));
    }

    fn with_acc(acc: f64, seed: u64) -> EvalReport {
        let mut r = score_labels(&[Pos], &[ParsedLabel::Positive], &[Pos], RunMeta { seed, ..meta() }).unwrap();
        r.accuracy = acc;
        r
    }

    #[test]
    fn aggregate_display() {
        let a = aggregate(&[with_acc(0.60, 1), with_acc(0.62, 2), with_acc(0.58, 3)]).unwrap();
        assert!((a.accuracy.mean - 0.60).abs() < 1e-12);
        assert!((a.accuracy.std - (0.0008f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(a.accuracy.to_string(), "0.60±0.02");

        let same = aggregate(&[with_acc(0.5, 1), with_acc(0.5, 2)]).unwrap();
        assert_eq!(same.accuracy.std, 0.0);
        assert!(aggregate(&[with_acc(0.5, 1)]).is_err());

        let mut other = with_acc(0.5, 2);
        other.meta.dataset = "other".into();
        assert!(matches!(aggregate(&[with_acc(0.5, 1), other]), Err(Error::Aggregation(_))));
    }
}
