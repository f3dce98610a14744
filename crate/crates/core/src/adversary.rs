//! Language-weighted adversarial perturbation of token embeddings.
//!
//! For per-token gradients `gᵗ` of the loss w.r.t. the embedding table rows,
//! the perturbation is `rᵗ = αₜ · ε · gᵗ / ‖g‖₂`, where `‖g‖₂` is the norm of
//! all `gᵗ` concatenated and `αₜ` is larger for language-specific words.
//! With `α_specific == α_other` this is plain FGM.
//!
//! [`adversarial_step`] runs the full schedule: clean pass, perturb the
//! touched embedding rows, adversarial pass, restore the rows bit-exactly.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::TokenizedExample;
use crate::error::{Error, Result};
use crate::model::{batch_gradients, DropoutPlan, PreparedExample, Trainable};
use crate::params::{self, digest_values};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub alpha_specific: f64,
    pub alpha_other: f64,
    pub epsilon: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            alpha_specific: 1.5,
            alpha_other: 1.0,
            epsilon: 1.0,
        }
    }
}

impl PerturbationConfig {
    /// Plain FGM: every token weighted by `alpha_other`.
    pub fn uniform(epsilon: f64) -> Self {
        Self {
            alpha_specific: 1.0,
            alpha_other: 1.0,
            epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.alpha_specific) || !ok(self.alpha_other) {
            return Err(Error::Config("alpha weights must be positive".into()));
        }
        // ε = 0 is accepted: it turns the adversarial pass into a replay of the clean one.
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::Config("epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-token perturbation weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaMap(pub Vec<f64>);

/// Tokens of words in `specific` get `alpha_specific`; everything else,
/// including `[CLS]`, `[SEP]` and padding, gets `alpha_other`.
pub fn build_alpha_map(tok: &TokenizedExample, specific: &HashSet<String>, cfg: &PerturbationConfig) -> AlphaMap {
    let mut alpha = vec![cfg.alpha_other; tok.len()];
    for (word, range) in tok.words.iter().zip(&tok.word_alignment) {
        if specific.contains(word) {
            alpha[range.clone()].fill(cfg.alpha_specific);
        }
    }
    AlphaMap(alpha)
}

/// Row `t` is `gᵗ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTensor(pub Array2<f64>);

/// Row `t` is `rᵗ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationTensor(pub Array2<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub tensor: PerturbationTensor,
    /// Set when `‖g‖₂ = 0`; the perturbation is then all zeros.
    pub degenerate: bool,
}

pub fn perturbation(g: &GradientTensor, alpha: &AlphaMap, epsilon: f64) -> Result<Perturbation> {
    if g.0.nrows() != alpha.0.len() {
        return Err(Error::Shape(format!(
            "gradient has {} rows, alpha map {}",
            g.0.nrows(),
            alpha.0.len()
        )));
    }
    let norm = g.0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        log::warn!("degenerate perturbation: embedding gradient norm is zero");
        return Ok(Perturbation {
            tensor: PerturbationTensor(Array2::zeros(g.0.raw_dim())),
            degenerate: true,
        });
    }
    let mut r = g.0.clone();
    for (mut row, &a) in r.rows_mut().into_iter().zip(&alpha.0) {
        let factor = a * epsilon / norm;
        row.mapv_inplace(|v| factor * v);
    }
    Ok(Perturbation {
        tensor: PerturbationTensor(r),
        degenerate: false,
    })
}

/// Which gradients feed the parameter update after an adversarial step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Clean + adversarial gradients (standard FGM).
    #[default]
    Accumulate,
    /// Only the gradient of the perturbed pass.
    AdversarialOnly,
}

pub struct StepOutcome<M> {
    pub clean_loss: f64,
    pub adversarial_loss: f64,
    pub grads: M,
    pub degenerate: bool,
    pub touched_rows: usize,
}

/// Embedding-table rows used by the batch, each with the largest α of any
/// of its occurrences.
fn touched_rows(batch: &[&PreparedExample], cfg: &PerturbationConfig) -> BTreeMap<usize, f64> {
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    for ex in batch {
        for (t, &id) in ex.tokens.ids.iter().enumerate() {
            let a = ex.alpha.as_ref().map_or(cfg.alpha_other, |m| m.0[t]);
            rows.entry(id).and_modify(|v| *v = v.max(a)).or_insert(a);
        }
    }
    rows
}

/// Clean pass, perturbation of the batch's embedding rows, adversarial pass
/// and bit-exact restore. `model` is only mutated inside the perturb→restore
/// window.
pub fn adversarial_step<M: Trainable>(
    model: &mut M,
    batch: &[&PreparedExample],
    cfg: &PerturbationConfig,
    mode: GradientMode,
    dropout: DropoutPlan,
) -> Result<StepOutcome<M>> {
    cfg.validate()?;
    let (clean_loss, mut grads) = batch_gradients(model, batch, dropout)?;

    let rows = touched_rows(batch, cfg);
    let ids: Vec<usize> = rows.keys().copied().collect();
    let dim = model.encoder().hidden_size();
    let mut g = Array2::zeros((ids.len(), dim));
    for (k, &id) in ids.iter().enumerate() {
        g.row_mut(k).assign(&grads.encoder().token_embeddings.row(id));
    }
    let alpha = AlphaMap(rows.values().copied().collect());
    let pert = perturbation(&GradientTensor(g), &alpha, cfg.epsilon)?;

    let table_digest = digest_values(
        model
            .encoder()
            .token_embeddings
            .as_slice()
            .expect("standard layout"),
    );
    let mut snapshot = Array2::zeros((ids.len(), dim));
    for (k, &id) in ids.iter().enumerate() {
        snapshot.row_mut(k).assign(&model.encoder().token_embeddings.row(id));
    }
    {
        let table = &mut model.encoder_mut().token_embeddings;
        for (k, &id) in ids.iter().enumerate() {
            let mut row = table.row_mut(id);
            row += &pert.tensor.0.row(k);
        }
    }
    let adversarial = batch_gradients(model, batch, dropout);
    {
        let table = &mut model.encoder_mut().token_embeddings;
        for (k, &id) in ids.iter().enumerate() {
            table.row_mut(id).assign(&snapshot.row(k));
        }
    }
    let restored = digest_values(
        model
            .encoder()
            .token_embeddings
            .as_slice()
            .expect("standard layout"),
    );
    if restored != table_digest {
        return Err(Error::Integrity(format!(
            "token embedding digest {restored} differs from snapshot {table_digest}"
        )));
    }
    let (adversarial_loss, adv_grads) = adversarial?;

    match mode {
        GradientMode::Accumulate => params::axpy(&mut grads, 1.0, &adv_grads),
        GradientMode::AdversarialOnly => grads = adv_grads,
    }
    Ok(StepOutcome {
        clean_loss,
        adversarial_loss,
        grads,
        degenerate: pert.degenerate,
        touched_rows: ids.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Vocab;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn hand_case() {
        let g = GradientTensor(array![[3.0, 0.0], [0.0, 4.0]]);
        let p = perturbation(&g, &AlphaMap(vec![1.5, 1.0]), 1.0).unwrap();
        assert!(!p.degenerate);
        let expected = array![[0.9, 0.0], [0.0, 0.8]];
        for (a, b) in p.tensor.0.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_is_flagged() {
        let g = GradientTensor(Array2::zeros((3, 2)));
        let p = perturbation(&g, &AlphaMap(vec![1.0; 3]), 1.0).unwrap();
        assert!(p.degenerate);
        assert!(p.tensor.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let g = GradientTensor(Array2::ones((3, 2)));
        assert!(perturbation(&g, &AlphaMap(vec![1.0; 2]), 1.0).is_err());
    }

    #[test]
    fn alpha_map_marks_lexicon_words() {
        let vocab = Vocab::build(["x y z"], 1);
        let tok = vocab.tokenize("x y z", 16);
        let cfg = PerturbationConfig::default();
        let empty = build_alpha_map(&tok, &HashSet::new(), &cfg);
        assert_eq!(empty.0, vec![1.0; 5]);
        let specific: HashSet<String> = ["y".to_string()].into();
        assert_eq!(build_alpha_map(&tok, &specific, &cfg).0, vec![1.0, 1.0, 1.5, 1.0, 1.0]);

        // an out-of-vocabulary word is spelled with several pieces
        let tok = vocab.tokenize("x zyx", 16);
        let specific: HashSet<String> = ["zyx".to_string()].into();
        assert_eq!(build_alpha_map(&tok, &specific, &cfg).0, vec![1.0, 1.0, 1.5, 1.5, 1.5, 1.0]);
    }

    fn gradient_and_alpha() -> impl Strategy<Value = (Array2<f64>, Vec<f64>)> {
        (1usize..8, 1usize..6).prop_flat_map(|(n, d)| {
            (
                proptest::collection::vec(-10.0f64..10.0, n * d)
                    .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap()),
                proptest::collection::vec(0.1f64..3.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn norm_direction_and_homogeneity((g, alpha) in gradient_and_alpha(), eps in 0.01f64..5.0) {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(norm > 0.0);
            let p = perturbation(&GradientTensor(g.clone()), &AlphaMap(alpha.clone()), eps).unwrap();
            let doubled = perturbation(&GradientTensor(g.clone()), &AlphaMap(alpha.clone()), 2.0 * eps).unwrap();
            for (t, &a) in alpha.iter().enumerate() {
                let gt = g.row(t);
                let rt = p.tensor.0.row(t);
                let gn = gt.dot(&gt).sqrt();
                let rn = rt.dot(&rt).sqrt();
                let expected = a * eps * gn / norm;
                prop_assert!((rn - expected).abs() <= 1e-12 * expected.max(1.0));
                if gn > 0.0 {
                    let cos = rt.dot(&gt) / (rn * gn);
                    prop_assert!((cos - 1.0).abs() < 1e-12);
                }
                for (a, b) in rt.iter().zip(doubled.tensor.0.row(t)) {
                    prop_assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
            // equal weights reduce to plain FGM
            let uniform = perturbation(&GradientTensor(g.clone()), &AlphaMap(vec![1.0; g.nrows()]), eps).unwrap();
            let fgm = &g * (eps / norm);
            for (a, b) in uniform.tensor.0.iter().zip(fgm.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
