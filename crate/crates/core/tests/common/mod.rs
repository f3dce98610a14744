#![allow(dead_code)]

use std::sync::Arc;

use dravida_core::corpus::{MultilingualDataset, Split};
use dravida_core::encoder::{EncoderConfig, Vocab};
use dravida_core::model::{Classifier, PreparedExample};
use dravida_core::synthetic::{self, SyntheticConfig};
use dravida_core::trainer::{build_vocab, prepare_examples, TrainConfig};

pub fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden: 8,
        layers: 2,
        heads: 2,
        ffn: 16,
        max_len: 32,
        init_std: 0.2,
    }
}

/// Two languages, three labels, a handful of sentences per split.
pub fn small_dataset() -> MultilingualDataset {
    let corpus = synthetic::generate(&SyntheticConfig {
        languages: vec!["ta".into(), "ml".into()],
        labels: vec!["pos".into(), "neg".into(), "mixed".into()],
        label_weights: vec![1.0, 1.0, 1.0],
        train_per_language: 12,
        dev_per_language: 6,
        test_per_language: 0,
        cue_words_per_label: 2,
        filler_words: 4,
        shared_words: 4,
        seed: 11,
    })
    .unwrap();
    corpus.dataset
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        encoder: small_encoder(),
        max_len: 32,
        batch_size: 4,
        epochs: 2,
        learning_rate: 1e-2,
        dropout: 0.1,
        min_word_count: 1,
        ..Default::default()
    }
}

pub fn small_model(ds: &MultilingualDataset, descriptors: bool, seed: u64) -> (Classifier, Arc<Vocab>) {
    let vocab = build_vocab(ds, 1);
    let counts: Vec<usize> = ds.schemas.iter().map(|s| s.len()).collect();
    let model = Classifier::new(small_encoder(), vocab.clone(), &counts, descriptors, seed).unwrap();
    (model, vocab)
}

pub fn prepared(ds: &MultilingualDataset, vocab: &Vocab, split: Split) -> Vec<PreparedExample> {
    prepare_examples(ds, split, vocab, &small_config(), None)
}
