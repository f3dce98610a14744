//! Multi-task training loop, optimizer and checkpoints.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adversary::{adversarial_step, build_alpha_map, GradientMode, PerturbationConfig};
use crate::corpus::{make_batches_with, BatchPolicy, Example, LabelSchema, LanguageId, MultilingualDataset, Split};
use crate::encoder::{BackendKind, EncoderConfig, Vocab};
use crate::error::{Error, Result};
use crate::eval::metrics::MetricsReport;
use crate::langspec::{LanguageLexicon, LexiconScope};
use crate::model::{batch_gradients, mix_seed, Classifier, DropoutPlan, PreparedExample, Trainable};
use crate::params::{self, Params};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub max_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub backend: BackendKind,
    pub encoder: EncoderConfig,
    /// Run the perturbed second pass on every batch.
    pub adversarial: bool,
    pub perturbation: PerturbationConfig,
    pub gradient_mode: GradientMode,
    /// Attach language descriptors to the classifier input.
    pub descriptors: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub freeze_encoder: bool,
    pub batch_policy: BatchPolicy,
    pub lexicon_scope: LexiconScope,
    /// Minimum corpus frequency for a word to get its own vocabulary entry.
    pub min_word_count: usize,
    pub eval_split: Split,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            dropout: 0.5,
            weight_decay: 0.001,
            optimizer: OptimizerKind::Adam,
            max_len: 128,
            batch_size: 64,
            epochs: 20,
            seed: 42,
            backend: BackendKind::Tiny,
            encoder: EncoderConfig::default(),
            adversarial: true,
            perturbation: PerturbationConfig::default(),
            gradient_mode: GradientMode::Accumulate,
            descriptors: true,
            grad_clip: Some(1.0),
            freeze_encoder: false,
            batch_policy: BatchPolicy::Mixed,
            lexicon_scope: LexiconScope::PerLanguage,
            min_word_count: 2,
            eval_split: Split::Dev,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(self.learning_rate) || !positive(self.weight_decay) {
            return Err(Error::Config("learning rate and weight decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 || self.max_len < 2 {
            return Err(Error::Config("batch size must be ≥ 1 and max_len ≥ 2".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        self.backend.ensure_available()?;
        self.encoder_config().validate()?;
        self.perturbation.validate()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            max_len: self.max_len,
            ..self.encoder.clone()
        }
    }

    /// Whether training needs a language-specific word lexicon.
    pub fn needs_lexicon(&self) -> bool {
        self.adversarial && self.perturbation.alpha_specific != self.perturbation.alpha_other
    }

    /// Key/value echo of the hyperparameters for report headers.
    pub fn provenance(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("learning_rate", format!("{:e}", self.learning_rate));
        put("dropout", self.dropout.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("optimizer", "Adam".into());
        put("max_len", self.max_len.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("seed", self.seed.to_string());
        put("backend", self.backend.to_string());
        put("adversarial", self.adversarial.to_string());
        put("alpha_specific", self.perturbation.alpha_specific.to_string());
        put("alpha_other", self.perturbation.alpha_other.to_string());
        put("epsilon", self.perturbation.epsilon.to_string());
        put("gradient_mode", format!("{:?}", self.gradient_mode));
        put("descriptors", self.descriptors.to_string());
        put(
            "grad_clip",
            self.grad_clip.map_or("none".into(), |c| c.to_string()),
        );
        put("freeze_encoder", self.freeze_encoder.to_string());
        put("lexicon_scope", format!("{:?}", self.lexicon_scope));
        m
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&raw)?;
        Ok(cfg)
    }
}

/// Adam with L2 weight decay folded into the gradient.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Updates every parameter whose name is not rejected by `frozen`.
    pub fn step<P: Params>(&mut self, model: &mut P, grads: &P, frozen: &dyn Fn(&str) -> bool) {
        let mut gs: Vec<&[f64]> = Vec::new();
        grads.visit("", &mut |_, s| gs.push(s));
        if self.first.is_empty() {
            self.first = gs.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.learning_rate, self.eps, self.weight_decay);
        let mut i = 0;
        let first = &mut self.first;
        let second = &mut self.second;
        model.visit_mut("", &mut |name, p| {
            let k = i;
            i += 1;
            if frozen(&name) {
                return;
            }
            let (m, v) = (&mut first[k], &mut second[k]);
            for j in 0..p.len() {
                let g = gs[k][j] + wd * p[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                p[j] -= lr * update;
            }
        });
    }
}

/// Scales `grads` so its global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<P: Params>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = params::global_norm(grads);
    if norm > max_norm {
        params::scale(grads, max_norm / norm);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub clean: f64,
    pub adversarial: Option<f64>,
    pub degenerate_steps: usize,
}

/// Generic epoch loop shared by the classifier and the language recognizer.
/// `on_epoch` runs after every epoch with the current model.
pub fn fit<M: Trainable>(
    model: &mut M,
    ds: &MultilingualDataset,
    train: &[PreparedExample],
    cfg: &TrainConfig,
    adversarial: bool,
    mut on_epoch: impl FnMut(usize, &M, &EpochLosses) -> Result<()>,
) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let by_id: HashMap<usize, &PreparedExample> = train.iter().map(|e| (e.id, e)).collect();
    let mut adam = Adam::new(cfg.learning_rate, cfg.weight_decay);
    let freeze = cfg.freeze_encoder;
    let frozen = move |name: &str| freeze && name.starts_with("encoder.");

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        let batches = make_batches_with(ds, Split::Train, cfg.batch_size, epoch_seed, cfg.batch_policy)?;
        let mut clean_sum = 0.0;
        let mut adv_sum = 0.0;
        let mut degenerate_steps = 0;
        let mut steps = 0usize;
        for (step, ids) in batches.iter().enumerate() {
            let batch: Vec<&PreparedExample> = ids.iter().filter_map(|id| by_id.get(id).copied()).collect();
            if batch.is_empty() {
                continue;
            }
            let dropout = DropoutPlan {
                p: cfg.dropout,
                seed: mix_seed(epoch_seed, step as u64),
            };
            let (clean, adv, mut grads) = if adversarial {
                let out = adversarial_step(model, &batch, &cfg.perturbation, cfg.gradient_mode, dropout)?;
                if out.degenerate {
                    degenerate_steps += 1;
                }
                (out.clean_loss, Some(out.adversarial_loss), out.grads)
            } else {
                let (loss, grads) = batch_gradients(model, &batch, dropout)?;
                (loss, None, grads)
            };
            let worst = adv.map_or(clean, |a| if a.is_finite() { clean } else { a });
            if !worst.is_finite() || !params::all_finite(&grads) {
                return Err(Error::NonFiniteLoss {
                    loss: worst,
                    epoch,
                    step,
                    examples: ids.clone(),
                });
            }
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(&mut grads, max);
            }
            adam.step(model, &grads, &frozen);
            clean_sum += clean;
            adv_sum += adv.unwrap_or(0.0);
            steps += 1;
        }
        let losses = EpochLosses {
            clean: clean_sum / steps.max(1) as f64,
            adversarial: adversarial.then(|| adv_sum / steps.max(1) as f64),
            degenerate_steps,
        };
        log::info!(
            "epoch {epoch}: clean loss {:.4}{} ({:.1}s)",
            losses.clean,
            losses
                .adversarial
                .map_or(String::new(), |a| format!(", adversarial loss {a:.4}")),
            started.elapsed().as_secs_f64()
        );
        on_epoch(epoch, model, &losses)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_clean_loss: f64,
    pub mean_adversarial_loss: Option<f64>,
    /// Per-language weighted-F1 on the evaluation split, in language order.
    pub eval_f1: Vec<f64>,
    pub eval_average: f64,
}

/// A trained classifier with everything needed to reload it order-safely.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub languages: Vec<LanguageId>,
    pub schemas: Vec<LabelSchema>,
    pub epoch: usize,
    pub model: Classifier,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    version: u32,
    epoch: usize,
    vocab: Vocab,
    params: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct LanguagesFile {
    languages: Vec<LanguageId>,
    schemas: Vec<LabelSchema>,
}

impl Checkpoint {
    /// Writes `weights.json`, `config.json` and `languages.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let weights = WeightsFile {
            version: self.version,
            epoch: self.epoch,
            vocab: (*self.model.encoder.vocab).clone(),
            params: params::to_named(&self.model),
        };
        fs::write(dir.join("weights.json"), serde_json::to_string(&weights)?)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        let langs = LanguagesFile {
            languages: self.languages.clone(),
            schemas: self.schemas.clone(),
        };
        fs::write(dir.join("languages.json"), serde_json::to_string_pretty(&langs)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| Error::Load { path, source })
        };
        let weights: WeightsFile = serde_json::from_str(&read("weights.json")?)?;
        if weights.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                weights.version
            )));
        }
        let config: TrainConfig = serde_json::from_str(&read("config.json")?)?;
        let langs: LanguagesFile = serde_json::from_str(&read("languages.json")?)?;
        let counts: Vec<usize> = langs.schemas.iter().map(LabelSchema::len).collect();
        let mut model = Classifier::new(
            config.encoder_config(),
            Arc::new(weights.vocab),
            &counts,
            config.descriptors,
            config.seed,
        )?;
        params::load_named(&mut model, &weights.params)?;
        Ok(Self {
            version: weights.version,
            config,
            languages: langs.languages,
            schemas: langs.schemas,
            epoch: weights.epoch,
            model,
        })
    }

    /// Classifier language index for a dataset example, matched by code.
    fn language_index(&self, ds: &MultilingualDataset, ex: &Example) -> Result<usize> {
        let code = &ds.languages[ex.language].code;
        self.languages
            .iter()
            .find(|l| &l.code == code)
            .map(|l| l.index)
            .ok_or_else(|| Error::UnknownLanguage(code.clone()))
    }

    /// Predicted label index (in the checkpoint's schema) per example.
    pub fn predict(&self, ds: &MultilingualDataset, examples: &[&Example]) -> Result<Vec<Prediction>> {
        examples
            .iter()
            .map(|ex| {
                let language = self.language_index(ds, ex)?;
                let gold_name = ds.label_name(ex);
                let gold = self.schemas[language]
                    .index_of(gold_name)
                    .ok_or_else(|| Error::UnknownLabel {
                        language: self.languages[language].code.clone(),
                        label: gold_name.to_string(),
                    })?;
                let prepared = PreparedExample {
                    id: ex.id,
                    tokens: self.model.encoder.tokenize(&ex.text),
                    language,
                    target: gold,
                    alpha: None,
                };
                Ok(Prediction {
                    example: ex.id,
                    language,
                    gold,
                    pred: self.model.predict(&prepared)?,
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub example: usize,
    pub language: usize,
    pub gold: usize,
    pub pred: usize,
}

/// Groups predictions by language into a metrics report.
pub fn report_from_predictions(
    split: &str,
    languages: &[LanguageId],
    schemas: &[LabelSchema],
    predictions: &[Prediction],
    provenance: BTreeMap<String, String>,
) -> Result<MetricsReport> {
    let n = languages.len();
    let mut golds = vec![Vec::new(); n];
    let mut preds = vec![Vec::new(); n];
    for p in predictions {
        golds[p.language].push(p.gold);
        preds[p.language].push(p.pred);
    }
    let langs: Vec<(String, Vec<String>)> = languages
        .iter()
        .map(|l| (l.code.clone(), schemas[l.index].labels.clone()))
        .collect();
    MetricsReport::from_predictions(split, &langs, &golds, &preds, provenance)
}

/// Per-language weighted-F1 of a checkpoint on one split.
pub fn evaluate_split(ckpt: &Checkpoint, ds: &MultilingualDataset, split: Split) -> Result<MetricsReport> {
    let examples: Vec<&Example> = ds.split(split).collect();
    if examples.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let predictions = ckpt.predict(ds, &examples)?;
    report_from_predictions(
        split.as_str(),
        &ckpt.languages,
        &ckpt.schemas,
        &predictions,
        ckpt.config.provenance(),
    )
}

/// Result of [`train`]: the best-on-evaluation-split checkpoint, the final
/// one, and per-epoch reports.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub reports: Vec<EpochReport>,
}

/// The vocabulary a dataset's models share: built from the train split.
pub fn build_vocab(ds: &MultilingualDataset, min_count: usize) -> Arc<Vocab> {
    Arc::new(Vocab::build(ds.split(Split::Train).map(|e| e.text.as_str()), min_count))
}

/// Tokenizes the examples of `split` with classification targets and, when
/// a lexicon is given, per-token perturbation weights.
pub fn prepare_examples(
    ds: &MultilingualDataset,
    split: Split,
    vocab: &Vocab,
    cfg: &TrainConfig,
    lexicon: Option<&LanguageLexicon>,
) -> Vec<PreparedExample> {
    let per_language: Vec<HashSet<String>> = match lexicon {
        Some(lex) => (0..ds.n_languages()).map(|l| lex.language_words(l)).collect(),
        None => Vec::new(),
    };
    ds.split(split)
        .map(|ex| {
            let tokens = vocab.tokenize(&ex.text, cfg.max_len);
            let alpha = lexicon.map(|lex| {
                let words = match cfg.lexicon_scope {
                    LexiconScope::PerLanguage => per_language[ex.language].clone(),
                    LexiconScope::PerSentence => lex.sentence_words(ex.id),
                };
                build_alpha_map(&tokens, &words, &cfg.perturbation)
            });
            PreparedExample {
                id: ex.id,
                tokens,
                language: ex.language,
                target: ex.label,
                alpha,
            }
        })
        .collect()
}

fn evaluate_model(
    model: &Classifier,
    ds: &MultilingualDataset,
    examples: &[PreparedExample],
    split: Split,
    provenance: BTreeMap<String, String>,
) -> Result<MetricsReport> {
    let predictions = examples
        .iter()
        .map(|ex| {
            Ok(Prediction {
                example: ex.id,
                language: ex.language,
                gold: ex.target,
                pred: model.predict(ex)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    report_from_predictions(split.as_str(), &ds.languages, &ds.schemas, &predictions, provenance)
}

/// Trains the full classifier. When the configuration weights
/// language-specific words, `lexicon` must be provided.
pub fn train(ds: &MultilingualDataset, cfg: &TrainConfig, lexicon: Option<&LanguageLexicon>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.needs_lexicon() && lexicon.is_none() {
        return Err(Error::Config(
            "language-specific weighting is on (alpha_specific ≠ alpha_other) but no lexicon was provided".into(),
        ));
    }
    let vocab = build_vocab(ds, cfg.min_word_count);
    let lexicon = if cfg.needs_lexicon() { lexicon } else { None };
    let train_set = prepare_examples(ds, Split::Train, &vocab, cfg, lexicon);
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let eval_split = if ds.has_split(cfg.eval_split) {
        cfg.eval_split
    } else {
        log::warn!("no {} split; evaluating on train", cfg.eval_split);
        Split::Train
    };
    let eval_set = prepare_examples(ds, eval_split, &vocab, cfg, None);
    let counts: Vec<usize> = ds.schemas.iter().map(LabelSchema::len).collect();
    let mut model = Classifier::new(cfg.encoder_config(), vocab, &counts, cfg.descriptors, cfg.seed)?;

    let snapshot = |model: &Classifier, epoch: usize| Checkpoint {
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        languages: ds.languages.clone(),
        schemas: ds.schemas.clone(),
        epoch,
        model: model.clone(),
    };
    let mut reports = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    fit(&mut model, ds, &train_set, cfg, cfg.adversarial, |epoch, m, losses| {
        let metrics = evaluate_model(m, ds, &eval_set, eval_split, BTreeMap::new())?;
        let report = EpochReport {
            epoch,
            mean_clean_loss: losses.clean,
            mean_adversarial_loss: losses.adversarial,
            eval_f1: metrics.languages.iter().map(|l| l.weighted_f1).collect(),
            eval_average: metrics.average,
        };
        log::info!("epoch {epoch}: {eval_split} average weighted-F1 {:.4}", report.eval_average);
        if best.as_ref().is_none_or(|(score, _)| report.eval_average > *score) {
            best = Some((report.eval_average, snapshot(m, epoch)));
        }
        reports.push(report);
        Ok(())
    })?;
    let last = snapshot(&model, cfg.epochs.saturating_sub(1));
    let best = best.map_or_else(|| last.clone(), |(_, c)| c);
    Ok(TrainOutcome { best, last, reports })
}

/// Appends epoch reports as JSON lines.
pub fn write_epoch_log(path: &Path, reports: &[EpochReport]) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    for r in reports {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}
