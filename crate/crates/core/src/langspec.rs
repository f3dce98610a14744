//! Language recognition and occlusion-based extraction of language-specific
//! words.
//!
//! A separate recognizer learns to predict which language a sentence is in.
//! Once frozen, each word `wᵢ` is scored by how much masking it lowers the
//! probability of the correct language:
//! `I(wᵢ) = O_y(S) − O_y(S with wᵢ → [MASK])`. Words with a strictly
//! positive score form the sentence's language-specific word list.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, LanguageId, MultilingualDataset, Split};
use crate::encoder::{TinyEncoder, TokenizedExample, Vocab};
use crate::error::{Error, Result};
use crate::fusion::loss_and_grad;
use crate::model::{argmax, cls_gradient, PreparedExample, Trainable};
use crate::nn::{softmax, Dropout, Linear};
use crate::params::{join, Params};
use crate::trainer::{build_vocab, fit, TrainConfig};

/// Encoder with a softmax head over languages.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageRecognizer {
    pub encoder: TinyEncoder,
    pub head: Linear,
    pub language_codes: Vec<String>,
}

impl LanguageRecognizer {
    pub fn new(cfg: &TrainConfig, vocab: Arc<Vocab>, language_codes: Vec<String>) -> Result<Self> {
        let encoder = TinyEncoder::new(cfg.encoder_config(), vocab, cfg.seed ^ 0x1a96)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4ead);
        let head = Linear::new(encoder.hidden_size(), language_codes.len(), cfg.encoder.init_std, &mut rng);
        Ok(Self {
            encoder,
            head,
            language_codes,
        })
    }

    pub fn n_languages(&self) -> usize {
        self.head.output_dim()
    }

    /// Softmax over languages, dropout off.
    pub fn probabilities(&self, tok: &TokenizedExample) -> Result<Vec<f64>> {
        let out = self.encoder.encode(tok)?;
        let logits = self.head.weight.dot(&out.sentence) + &self.head.bias;
        Ok(softmax(logits.as_slice().expect("owned")))
    }

    pub fn predict_language(&self, tok: &TokenizedExample) -> Result<usize> {
        Ok(argmax(&self.probabilities(tok)?))
    }
}

impl Trainable for LanguageRecognizer {
    fn encoder(&self) -> &TinyEncoder {
        &self.encoder
    }

    fn encoder_mut(&mut self) -> &mut TinyEncoder {
        &mut self.encoder
    }

    fn logits(&self, ex: &PreparedExample) -> Result<Array1<f64>> {
        let out = self.encoder.encode(&ex.tokens)?;
        Ok(self.head.weight.dot(&out.sentence) + &self.head.bias)
    }

    fn accumulate(
        &self,
        ex: &PreparedExample,
        mut dropout: Option<&mut Dropout>,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let trace = self.encoder.forward(&ex.tokens, dropout.as_deref_mut())?;
        let mut s = trace.sentence_vector();
        let mask = dropout.and_then(|d| d.mask(1, s.len())).map(|m| m.row(0).to_owned());
        if let Some(m) = &mask {
            s *= m;
        }
        let input = s.insert_axis(ndarray::Axis(0));
        let logits = self.head.forward(&input);
        let (loss, dl) = loss_and_grad(logits.row(0).as_slice().expect("contiguous"), ex.target)?;
        let dl = Array1::from(dl) * scale;
        let ds = self
            .head
            .backward(&input, &dl.insert_axis(ndarray::Axis(0)), &mut grads.head);
        let mut ds = ds.row(0).to_owned();
        if let Some(m) = &mask {
            ds *= m;
        }
        self.encoder
            .backward(&trace, &cls_gradient(&ds, trace.hidden.nrows()), &mut grads.encoder);
        Ok(loss)
    }
}

impl Params for LanguageRecognizer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognizerEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

fn language_targets(ds: &MultilingualDataset, split: Split, vocab: &Vocab, max_len: usize) -> Vec<PreparedExample> {
    ds.split(split)
        .map(|ex| PreparedExample {
            id: ex.id,
            tokens: vocab.tokenize(&ex.text, max_len),
            language: ex.language,
            target: ex.language,
            alpha: None,
        })
        .collect()
}

/// Fraction of `split` whose language the recognizer predicts correctly.
pub fn recognizer_accuracy(rec: &LanguageRecognizer, ds: &MultilingualDataset, split: Split) -> Result<f64> {
    let examples = language_targets(ds, split, &rec.encoder.vocab, rec.encoder.config.max_len);
    if examples.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let mut correct = 0usize;
    for ex in &examples {
        if rec.predict_language(&ex.tokens)? == ex.target {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Trains the recognizer on the train split (clean, no perturbation).
pub fn train_recognizer(
    ds: &MultilingualDataset,
    cfg: &TrainConfig,
) -> Result<(LanguageRecognizer, Vec<RecognizerEpoch>)> {
    cfg.validate()?;
    if ds.n_languages() < 2 {
        log::warn!("language recognizer trained on a single language; the task is constant");
    }
    let vocab = build_vocab(ds, cfg.min_word_count);
    let train = language_targets(ds, Split::Train, &vocab, cfg.max_len);
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let codes = ds.languages.iter().map(|l| l.code.clone()).collect();
    let mut rec = LanguageRecognizer::new(cfg, vocab, codes)?;
    let eval_split = ds.has_split(cfg.eval_split).then_some(cfg.eval_split);
    let mut history = Vec::new();
    fit(&mut rec, ds, &train, cfg, false, |epoch, model, losses| {
        let accuracy = match eval_split {
            Some(split) => Some(recognizer_accuracy(model, ds, split)?),
            None => None,
        };
        if let Some(acc) = accuracy {
            log::info!("recognizer epoch {epoch}: accuracy {acc:.4}");
        }
        history.push(RecognizerEpoch {
            epoch,
            loss: losses.clean,
            accuracy,
        });
        Ok(())
    })?;
    Ok((rec, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyRecord {
    pub word_index: usize,
    pub word: String,
    pub score: f64,
}

/// Word scores of one sentence, sorted by score descending (ties by
/// ascending word index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceSaliency {
    pub example: usize,
    pub language: usize,
    /// Correct-language probability of the unmasked sentence.
    pub base_probability: f64,
    pub records: Vec<SaliencyRecord>,
}

impl SentenceSaliency {
    pub fn top(&self) -> Option<&SaliencyRecord> {
        self.records.first()
    }
}

/// Occlusion score of every word of `sentence` under a frozen recognizer.
pub fn language_info(rec: &LanguageRecognizer, sentence: &Example) -> Result<SentenceSaliency> {
    if sentence.language >= rec.n_languages() {
        return Err(Error::IndexOutOfRange {
            what: "language",
            index: sentence.language,
            len: rec.n_languages(),
        });
    }
    let tok = rec.encoder.tokenize(&sentence.text);
    let y = sentence.language;
    let base = rec.probabilities(&tok)?[y];
    let mut records = Vec::with_capacity(tok.n_words());
    for (i, word) in tok.words.iter().enumerate() {
        let masked = tok.mask_word(i)?;
        let p = rec.probabilities(&masked)?[y];
        records.push(SaliencyRecord {
            word_index: i,
            word: word.clone(),
            score: base - p,
        });
    }
    records.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.word_index.cmp(&b.word_index)));
    Ok(SentenceSaliency {
        example: sentence.id,
        language: y,
        base_probability: base,
        records,
    })
}

/// Saliency for every example of `split`.
pub fn compute_saliencies(rec: &LanguageRecognizer, ds: &MultilingualDataset, split: Split) -> Result<Vec<SentenceSaliency>> {
    ds.split(split).map(|ex| language_info(rec, ex)).collect()
}

/// Whether training perturbation uses each sentence's own word list or the
/// per-language aggregate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexiconScope {
    #[default]
    PerLanguage,
    PerSentence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceWords {
    pub language: usize,
    /// Retained words, score descending.
    pub words: Vec<(String, f64)>,
}

/// Language-specific words: per sentence, and aggregated per language by the
/// maximum score of each surface form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LanguageLexicon {
    pub sentences: BTreeMap<usize, SentenceWords>,
    pub languages: BTreeMap<usize, BTreeMap<String, f64>>,
}

pub fn extract_lexicon(saliencies: &[SentenceSaliency]) -> LanguageLexicon {
    let mut lex = LanguageLexicon::default();
    for s in saliencies {
        let words: Vec<(String, f64)> = s
            .records
            .iter()
            .filter(|r| r.score > 0.0)
            .map(|r| (r.word.clone(), r.score))
            .collect();
        let agg = lex.languages.entry(s.language).or_default();
        for (w, score) in &words {
            agg.entry(w.clone())
                .and_modify(|v| *v = v.max(*score))
                .or_insert(*score);
        }
        lex.sentences.insert(
            s.example,
            SentenceWords {
                language: s.language,
                words,
            },
        );
    }
    lex
}

impl LanguageLexicon {
    pub fn language_words(&self, language: usize) -> HashSet<String> {
        self.languages
            .get(&language)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn sentence_words(&self, example: usize) -> HashSet<String> {
        self.sentences
            .get(&example)
            .map(|s| s.words.iter().map(|(w, _)| w.clone()).collect())
            .unwrap_or_default()
    }

    /// Words of one language sorted by score descending, then lexically.
    pub fn ranked(&self, language: usize) -> Vec<(String, f64)> {
        let mut words: Vec<(String, f64)> = self
            .languages
            .get(&language)
            .map(|m| m.iter().map(|(w, s)| (w.clone(), *s)).collect())
            .unwrap_or_default();
        words.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        words
    }

    /// `language<TAB>word<TAB>score`, descending per language.
    pub fn write_tsv(&self, path: &Path, languages: &[LanguageId]) -> Result<()> {
        let mut out = String::new();
        for lang in languages {
            for (word, score) in self.ranked(lang.index) {
                out.push_str(&format!("{}\t{}\t{}\n", lang.code, word, score));
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Reads the per-language aggregate written by [`write_tsv`](Self::write_tsv).
    pub fn read_tsv(path: &Path, languages: &[LanguageId]) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        let index: HashMap<&str, usize> = languages.iter().map(|l| (l.code.as_str(), l.index)).collect();
        let mut lex = LanguageLexicon::default();
        for (n, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: &str| Error::Schema {
                path: path.to_path_buf(),
                line: n + 1,
                message: message.to_string(),
            };
            let mut parts = line.split('\t');
            let (Some(code), Some(word), Some(score)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `language<TAB>word<TAB>score`"));
            };
            let lang = *index
                .get(code)
                .ok_or_else(|| bad(&format!("unknown language `{code}`")))?;
            let score: f64 = score.trim().parse().map_err(|_| bad("score is not a number"))?;
            lex.languages.entry(lang).or_default().insert(word.to_string(), score);
        }
        Ok(lex)
    }
}

/// One JSON object per sentence.
pub fn write_saliency_dump(path: &Path, saliencies: &[SentenceSaliency]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for s in saliencies {
        writeln!(f, "{}", serde_json::to_string(s)?)?;
    }
    Ok(())
}

pub fn read_saliency_dump(path: &Path) -> Result<Vec<SentenceSaliency>> {
    let raw = fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
