//! Property tests over corpus batching, statistics and the encoder contract.

use std::sync::Arc;

use dravida_core::corpus::{dataset_stats, make_batches_with, BatchPolicy, MultilingualDataset, Split};
use dravida_core::encoder::{EncoderConfig, TinyEncoder, Vocab};
use proptest::prelude::*;

fn dataset(sizes: &[(usize, usize)]) -> MultilingualDataset {
    let codes = ["ta", "ml", "kn"];
    let mut ds = MultilingualDataset::with_languages("t", &codes[..sizes.len()], &["a", "b", "c"]).unwrap();
    for (l, &(n, label_mod)) in sizes.iter().enumerate() {
        for i in 0..n {
            let label = ["a", "b", "c"][i % label_mod.max(1)];
            ds.push(l, Split::Train, &format!("w{i} x{l}"), label).unwrap();
        }
    }
    ds
}

fn encoder() -> TinyEncoder {
    let vocab = Vocab::build(["aa bb cc dd ee ff gg"], 1);
    let cfg = EncoderConfig {
        hidden: 8,
        layers: 2,
        heads: 2,
        ffn: 16,
        max_len: 40,
        init_std: 0.3,
    };
    TinyEncoder::new(cfg, Arc::new(vocab), 17).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batches_partition_the_split(
        sizes in proptest::collection::vec((1usize..30, 1usize..4), 1..4),
        bs in 1usize..9,
        seed in any::<u64>(),
        mono in any::<bool>(),
    ) {
        let ds = dataset(&sizes);
        let policy = if mono { BatchPolicy::Monolingual } else { BatchPolicy::Mixed };
        let batches = make_batches_with(&ds, Split::Train, bs, seed, policy).unwrap();
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs));
        let mut ids: Vec<usize> = batches.concat();
        ids.sort_unstable();
        let want: Vec<usize> = ds.split(Split::Train).map(|e| e.id).collect();
        prop_assert_eq!(ids, want);
        prop_assert_eq!(&batches, &make_batches_with(&ds, Split::Train, bs, seed, policy).unwrap());
    }

    #[test]
    fn proportions_sum_to_one(sizes in proptest::collection::vec((0usize..30, 1usize..4), 1..4)) {
        let report = dataset_stats(&dataset(&sizes));
        for (l, &(n, _)) in sizes.iter().enumerate() {
            let code = ["ta", "ml", "kn"][l];
            for split in Split::ALL {
                let group = report.group(code, split);
                let total: f64 = group.iter().map(|r| r.proportion).sum();
                if split == Split::Train && n > 0 {
                    prop_assert!((total - 1.0).abs() < 1e-9);
                } else {
                    prop_assert!(group.iter().all(|r| r.count == 0));
                }
            }
        }
    }

    #[test]
    fn padding_is_inert(words in proptest::collection::vec("(aa|bb|cc|dd|zz|q)", 0..10), extra in 1usize..15) {
        let enc = encoder();
        let tok = enc.tokenize(&words.join(" "));
        let base = enc.encode(&tok).unwrap();
        let padded = enc.encode(&tok.padded(tok.len() + extra)).unwrap();
        for (a, b) in base.sentence.iter().zip(padded.sentence.iter()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        for r in 0..tok.len() {
            for (a, b) in base.hidden.row(r).iter().zip(padded.hidden.row(r).iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mask_word_changes_exactly_its_range(words in proptest::collection::vec("(aa|bb|xyz|q)", 1..10), pick in any::<prop::sample::Index>()) {
        let enc = encoder();
        let tok = enc.tokenize(&words.join(" "));
        prop_assume!(tok.n_words() > 0);
        let i = pick.index(tok.n_words());
        let masked = tok.mask_word(i).unwrap();
        let range = tok.word_alignment[i].clone();
        let changed = tok.ids.iter().zip(&masked.ids).filter(|(a, b)| a != b).count();
        let already = tok.ids[range.clone()].iter().filter(|&&id| id == dravida_core::encoder::tokenizer::MASK).count();
        prop_assert_eq!(changed, range.len() - already);
        prop_assert_eq!(masked.len(), tok.len());
        prop_assert_eq!(masked.mask_word(i).unwrap(), masked.clone());
    }
}
