//! Per-class F1 and support-weighted F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class confusion counts; `support` is the number of gold instances.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: Vec<usize>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub support: Vec<usize>,
}

impl ConfusionCounts {
    pub fn from_predictions<T: PartialEq + std::fmt::Debug>(golds: &[T], preds: &[T], labels: &[T]) -> Result<Self> {
        if golds.len() != preds.len() {
            return Err(Error::Shape(format!(
                "{} gold labels but {} predictions",
                golds.len(),
                preds.len()
            )));
        }
        let k = labels.len();
        let mut counts = Self {
            true_positives: vec![0; k],
            false_positives: vec![0; k],
            false_negatives: vec![0; k],
            support: vec![0; k],
        };
        let index = |x: &T| labels.iter().position(|l| l == x);
        for (g, p) in golds.iter().zip(preds) {
            let gi = index(g).ok_or_else(|| Error::Config(format!("gold label {g:?} not in label set")))?;
            counts.support[gi] += 1;
            match index(p) {
                Some(pi) if pi == gi => counts.true_positives[gi] += 1,
                Some(pi) => {
                    counts.false_positives[pi] += 1;
                    counts.false_negatives[gi] += 1;
                }
                None => counts.false_negatives[gi] += 1,
            }
        }
        Ok(counts)
    }

    pub fn total(&self) -> usize {
        self.support.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClassF1 {
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
    /// Classes whose precision and recall are both undefined or zero.
    pub degenerate: Vec<bool>,
}

pub fn per_class_f1<T: PartialEq + std::fmt::Debug>(golds: &[T], preds: &[T], labels: &[T]) -> Result<PerClassF1> {
    let c = ConfusionCounts::from_predictions(golds, preds, labels)?;
    Ok(f1_from_counts(&c))
}

pub fn f1_from_counts(c: &ConfusionCounts) -> PerClassF1 {
    let k = c.support.len();
    let mut f1 = Vec::with_capacity(k);
    let mut degenerate = Vec::with_capacity(k);
    for i in 0..k {
        let tp = c.true_positives[i] as f64;
        let predicted = tp + c.false_positives[i] as f64;
        let actual = tp + c.false_negatives[i] as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        if precision + recall > 0.0 {
            f1.push(2.0 * precision * recall / (precision + recall));
            degenerate.push(false);
        } else {
            f1.push(0.0);
            degenerate.push(c.support[i] == 0 && predicted == 0.0);
        }
    }
    if degenerate.iter().any(|&d| d) {
        log::warn!("classes with zero support and no predictions scored as F1 = 0");
    }
    PerClassF1 {
        f1,
        support: c.support.clone(),
        degenerate,
    }
}

/// `Σ_c support_c · F1_c / Σ_c support_c`.
pub fn weighted_f1<T: PartialEq + std::fmt::Debug>(golds: &[T], preds: &[T], labels: &[T]) -> Result<f64> {
    if golds.is_empty() {
        return Err(Error::EmptySplit("gold sequence".into()));
    }
    Ok(weighted_from(&per_class_f1(golds, preds, labels)?))
}

pub fn weighted_from(per_class: &PerClassF1) -> f64 {
    let total: usize = per_class.support.iter().sum();
    if total == 0 {
        return 0.0;
    }
    per_class
        .f1
        .iter()
        .zip(&per_class.support)
        .map(|(f, &s)| f * s as f64)
        .sum::<f64>()
        / total as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageMetrics {
    pub language: String,
    pub labels: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
    pub weighted_f1: f64,
    pub examples: usize,
}

/// Per-language weighted-F1 plus their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub languages: Vec<LanguageMetrics>,
    pub average: f64,
    /// Configuration values echoed for provenance.
    pub provenance: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Builds a report from per-language `(gold, pred)` label-index pairs.
    pub fn from_predictions(
        split: &str,
        languages: &[(String, Vec<String>)],
        golds: &[Vec<usize>],
        preds: &[Vec<usize>],
        provenance: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut out = Vec::new();
        for (i, (code, labels)) in languages.iter().enumerate() {
            let label_ids: Vec<usize> = (0..labels.len()).collect();
            let pc = per_class_f1(&golds[i], &preds[i], &label_ids)?;
            out.push(LanguageMetrics {
                language: code.clone(),
                labels: labels.clone(),
                weighted_f1: weighted_from(&pc),
                per_class_f1: pc.f1,
                support: pc.support,
                examples: golds[i].len(),
            });
        }
        let scored: Vec<f64> = out.iter().filter(|l| l.examples > 0).map(|l| l.weighted_f1).collect();
        if scored.is_empty() {
            return Err(Error::EmptySplit(split.to_string()));
        }
        let average = scored.iter().sum::<f64>() / scored.len() as f64;
        Ok(Self {
            split: split.to_string(),
            languages: out,
            average,
            provenance,
        })
    }

    pub fn weighted_f1(&self, language: &str) -> Option<f64> {
        self.languages
            .iter()
            .find(|l| l.language == language)
            .map(|l| l.weighted_f1)
    }
}
