//! Seeded code-mixed toy corpus with disjoint per-language vocabularies.
//!
//! Each language owns its label cue words and filler words; a pool of
//! romanized "English" words is shared by every language and carries no
//! label information. A sentence mixes 1–2 cue words for its label, a few
//! fillers and a few shared words, in random order.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{MultilingualDataset, Split};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub languages: Vec<String>,
    pub labels: Vec<String>,
    /// Relative label frequencies; mildly imbalanced by default.
    pub label_weights: Vec<f64>,
    pub train_per_language: usize,
    pub dev_per_language: usize,
    pub test_per_language: usize,
    pub cue_words_per_label: usize,
    pub filler_words: usize,
    pub shared_words: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            languages: vec!["ta".into(), "ml".into(), "kn".into()],
            labels: vec![
                "Positive".into(),
                "Negative".into(),
                "Mixed_feelings".into(),
                "unknown_state".into(),
                "not-native".into(),
            ],
            label_weights: vec![0.35, 0.2, 0.15, 0.15, 0.15],
            train_per_language: 1000,
            dev_per_language: 200,
            test_per_language: 0,
            cue_words_per_label: 4,
            filler_words: 20,
            shared_words: 24,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub dataset: MultilingualDataset,
    /// Words owned by each language (cue and filler words).
    pub exclusive: Vec<HashSet<String>>,
    pub shared: HashSet<String>,
}

impl SyntheticCorpus {
    pub fn is_exclusive(&self, language: usize, word: &str) -> bool {
        self.exclusive[language].contains(word)
    }
}

// Onset letters per language keep the vocabularies disjoint by construction.
const ONSETS: [&str; 6] = ["kt", "mv", "bg", "pd", "sh", "jr"];
const VOWELS: &str = "aeiou";
const SHARED_WORDS: [&str; 32] = [
    "movie", "super", "trailer", "song", "hero", "fans", "waiting", "mass", "bro", "first", "day", "show", "like",
    "comment", "watch", "video", "star", "music", "scene", "level", "poster", "release", "team", "best", "box",
    "office", "teaser", "dialogue", "climax", "story", "actor", "director",
];

struct WordMaker {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

impl WordMaker {
    fn word(&mut self, onset: &str) -> String {
        let onset: Vec<char> = onset.chars().collect();
        let vowels: Vec<char> = VOWELS.chars().collect();
        loop {
            let syllables = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(onset[self.rng.random_range(0..onset.len())]);
                w.push(vowels[self.rng.random_range(0..vowels.len())]);
            }
            if self.rng.random_bool(0.5) {
                w.push(onset[0]);
            }
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.languages.is_empty() || cfg.languages.len() > ONSETS.len() {
        return Err(Error::Config(format!(
            "synthetic corpus supports 1..={} languages",
            ONSETS.len()
        )));
    }
    if cfg.labels.len() != cfg.label_weights.len() || cfg.labels.is_empty() {
        return Err(Error::Config("one weight per label required".into()));
    }
    if cfg.shared_words > SHARED_WORDS.len() || cfg.cue_words_per_label == 0 || cfg.filler_words < 2 {
        return Err(Error::Config("invalid synthetic word-pool sizes".into()));
    }
    let codes: Vec<&str> = cfg.languages.iter().map(String::as_str).collect();
    let labels: Vec<&str> = cfg.labels.iter().map(String::as_str).collect();
    let mut ds = MultilingualDataset::with_languages("synthetic-sentiment", &codes, &labels)?;
    ds.source = format!("synthetic(seed={})", cfg.seed);

    let mut maker = WordMaker {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        seen: SHARED_WORDS.iter().map(|w| w.to_string()).collect(),
    };
    let shared: Vec<String> = SHARED_WORDS[..cfg.shared_words].iter().map(|w| w.to_string()).collect();
    let mut cues = Vec::new();
    let mut fillers = Vec::new();
    for onset in &ONSETS[..codes.len()] {
        let per_label: Vec<Vec<String>> = (0..labels.len())
            .map(|_| (0..cfg.cue_words_per_label).map(|_| maker.word(onset)).collect())
            .collect();
        cues.push(per_label);
        fillers.push((0..cfg.filler_words).map(|_| maker.word(onset)).collect::<Vec<_>>());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e47);
    let splits = [
        (Split::Train, cfg.train_per_language),
        (Split::Dev, cfg.dev_per_language),
        (Split::Test, cfg.test_per_language),
    ];
    for (split, count) in splits {
        for (l, code_cues) in cues.iter().enumerate() {
            for _ in 0..count {
                let label = pick_weighted(&mut rng, &cfg.label_weights);
                let mut words: Vec<&str> = Vec::new();
                for _ in 0..rng.random_range(1..=2) {
                    words.push(code_cues[label].choose(&mut rng).expect("non-empty"));
                }
                for _ in 0..rng.random_range(2..=4) {
                    words.push(fillers[l].choose(&mut rng).expect("non-empty"));
                }
                if !shared.is_empty() {
                    for _ in 0..rng.random_range(2..=4) {
                        words.push(shared.choose(&mut rng).expect("non-empty"));
                    }
                }
                words.shuffle(&mut rng);
                ds.push(l, split, &words.join(" "), labels[label])?;
            }
        }
    }

    let exclusive = (0..codes.len())
        .map(|l| {
            cues[l]
                .iter()
                .flatten()
                .chain(&fillers[l])
                .cloned()
                .collect::<HashSet<_>>()
        })
        .collect();
    Ok(SyntheticCorpus {
        dataset: ds,
        exclusive,
        shared: shared.into_iter().collect(),
    })
}

/// Classifier settings for the toy corpus. The tiny encoder's embedding rows
/// are an order of magnitude shorter than a pretrained encoder's, so ε is
/// scaled down with them; the learning rate is raised so a few epochs suffice.
pub fn preset_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        learning_rate: 1e-3,
        dropout: 0.1,
        batch_size: 16,
        epochs: 4,
        ..Default::default()
    };
    cfg.encoder.ffn = 128;
    cfg.perturbation.epsilon = 0.05;
    cfg
}

/// Recognizer settings for the toy corpus: one epoch separates the
/// languages without saturating the output probabilities.
pub fn preset_recognizer_config() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        ..preset_config()
    }
}
