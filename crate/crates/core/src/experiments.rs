//! Ablation ladder and α sweep drivers.

use serde::{Deserialize, Serialize};

use crate::corpus::{MultilingualDataset, Split};
use crate::error::{Error, Result};
use crate::eval::metrics::MetricsReport;
use crate::eval::report::ComparisonTable;
use crate::langspec::{compute_saliencies, extract_lexicon, recognizer_accuracy, train_recognizer, LanguageLexicon};
use crate::trainer::{evaluate_split, train, TrainConfig};

pub const DEFAULT_SWEEP_ALPHAS: [f64; 5] = [1.1, 1.2, 1.3, 1.4, 1.5];

/// Recognizer-derived lexicon plus the recognizer's accuracy on the
/// evaluation split (when it exists).
#[derive(Clone, Debug)]
pub struct PreparedLexicon {
    pub lexicon: LanguageLexicon,
    pub recognizer_accuracy: Option<f64>,
}

/// Trains the language recognizer and extracts word saliency over the train
/// split.
pub fn prepare_lexicon(ds: &MultilingualDataset, cfg: &TrainConfig) -> Result<PreparedLexicon> {
    let (rec, _) = train_recognizer(ds, cfg)?;
    let accuracy = if ds.has_split(cfg.eval_split) {
        Some(recognizer_accuracy(&rec, ds, cfg.eval_split)?)
    } else {
        None
    };
    let saliencies = compute_saliencies(&rec, ds, Split::Train)?;
    Ok(PreparedLexicon {
        lexicon: extract_lexicon(&saliencies),
        recognizer_accuracy: accuracy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub adversarial: bool,
    pub weighted: bool,
    pub descriptors: bool,
}

impl Variant {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.adversarial = self.adversarial;
        cfg.descriptors = self.descriptors;
        if !self.weighted {
            cfg.perturbation.alpha_specific = cfg.perturbation.alpha_other;
        }
        cfg
    }
}

pub const ABLATION_LADDER: [(&str, Variant); 4] = [
    (
        "Multilingual",
        Variant {
            adversarial: false,
            weighted: false,
            descriptors: false,
        },
    ),
    (
        "+ adversarial training",
        Variant {
            adversarial: true,
            weighted: false,
            descriptors: false,
        },
    ),
    (
        "+ language-specific words extraction",
        Variant {
            adversarial: true,
            weighted: true,
            descriptors: false,
        },
    ),
    (
        "+ language descriptor",
        Variant {
            adversarial: true,
            weighted: true,
            descriptors: true,
        },
    ),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    /// Best-epoch checkpoint on the evaluation split.
    pub best: MetricsReport,
    pub best_epoch: usize,
    /// Final-epoch checkpoint on the evaluation split.
    pub last: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub split: String,
    pub languages: Vec<String>,
    pub rows: Vec<AblationRow>,
}

fn comparison(
    title: &str,
    header: &str,
    languages: &[String],
    rows: impl Iterator<Item = (String, Vec<f64>)>,
) -> Result<ComparisonTable> {
    let mut table = ComparisonTable::new(title, header, languages.to_vec());
    for (label, values) in rows {
        table.push_row(label, values)?;
    }
    Ok(table)
}

fn per_language(report: &MetricsReport) -> Vec<f64> {
    report.languages.iter().map(|l| l.weighted_f1).collect()
}

impl AblationTable {
    pub fn to_table(&self, last_epoch: bool) -> Result<ComparisonTable> {
        let which = if last_epoch { "last epoch" } else { "best epoch" };
        comparison(
            &format!("Ablation ({}, {which})", self.split),
            "Model",
            &self.languages,
            self.rows.iter().map(|r| {
                let report = if last_epoch { &r.last } else { &r.best };
                (r.label.clone(), per_language(report))
            }),
        )
    }
}

/// One full training and evaluation per ladder rung. A lexicon is built on
/// demand when none is supplied and a weighted rung needs one.
pub fn run_ablation(ds: &MultilingualDataset, base: &TrainConfig, lexicon: Option<&LanguageLexicon>) -> Result<AblationTable> {
    run_variants(ds, base, lexicon, &ABLATION_LADDER)
}

pub fn run_variants(
    ds: &MultilingualDataset,
    base: &TrainConfig,
    lexicon: Option<&LanguageLexicon>,
    variants: &[(&str, Variant)],
) -> Result<AblationTable> {
    let mut owned = None;
    let mut rows = Vec::new();
    let mut split = String::new();
    for (label, variant) in variants {
        let cfg = variant.apply(base);
        let lex = if cfg.needs_lexicon() {
            match lexicon {
                Some(l) => Some(l),
                None => {
                    if owned.is_none() {
                        owned = Some(prepare_lexicon(ds, base)?.lexicon);
                    }
                    owned.as_ref()
                }
            }
        } else {
            None
        };
        log::info!("ablation: {label}");
        let outcome = train(ds, &cfg, lex)?;
        let eval = if ds.has_split(cfg.eval_split) { cfg.eval_split } else { Split::Train };
        let best = evaluate_split(&outcome.best, ds, eval)?;
        let last = evaluate_split(&outcome.last, ds, eval)?;
        split = best.split.clone();
        rows.push(AblationRow {
            label: label.to_string(),
            variant: *variant,
            best,
            best_epoch: outcome.best.epoch,
            last,
        });
    }
    Ok(AblationTable {
        split,
        languages: ds.languages.iter().map(|l| l.code.clone()).collect(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub best: MetricsReport,
    pub last: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub split: String,
    pub languages: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_table(&self, last_epoch: bool) -> Result<ComparisonTable> {
        let which = if last_epoch { "last epoch" } else { "best epoch" };
        comparison(
            &format!("Threshold sweep ({}, {which})", self.split),
            "Threshold",
            &self.languages,
            self.rows.iter().map(|r| {
                let report = if last_epoch { &r.last } else { &r.best };
                (format!("{}", r.alpha), per_language(report))
            }),
        )
    }
}

/// Trains the full framework once per α (the weight of language-specific
/// words) and tabulates the evaluation scores.
pub fn alpha_sweep(
    ds: &MultilingualDataset,
    base: &TrainConfig,
    alphas: &[f64],
    lexicon: Option<&LanguageLexicon>,
) -> Result<SweepResult> {
    if alphas.is_empty() {
        return Err(Error::Config("α sweep needs at least one value".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(Error::Config(format!("α must be positive, got {a}")));
    }
    let mut owned = None;
    let lexicon = match lexicon {
        Some(l) => l,
        None => owned.insert(prepare_lexicon(ds, base)?.lexicon),
    };
    let mut rows = Vec::new();
    let mut split = String::new();
    for &alpha in alphas {
        let mut cfg = base.clone();
        cfg.adversarial = true;
        cfg.descriptors = true;
        cfg.perturbation.alpha_specific = alpha;
        log::info!("sweep: α = {alpha}");
        let outcome = train(ds, &cfg, Some(lexicon))?;
        let eval = if ds.has_split(cfg.eval_split) { cfg.eval_split } else { Split::Train };
        let best = evaluate_split(&outcome.best, ds, eval)?;
        let last = evaluate_split(&outcome.last, ds, eval)?;
        split = best.split.clone();
        rows.push(SweepRow { alpha, best, last });
    }
    Ok(SweepResult {
        split,
        languages: ds.languages.iter().map(|l| l.code.clone()).collect(),
        rows,
    })
}
