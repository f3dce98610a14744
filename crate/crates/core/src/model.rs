//! Models trainable by [`crate::trainer`]: an encoder plus a task head.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::SeedableRng;

use crate::adversary::AlphaMap;
use crate::encoder::{EncoderConfig, TinyEncoder, TokenizedExample, Vocab};
use crate::error::Result;
use crate::fusion::{loss_and_grad, FusionHead};
use crate::nn::Dropout;
use crate::params::{self, join, Params};

/// A tokenized example with its training target.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample {
    pub id: usize,
    pub tokens: TokenizedExample,
    pub language: usize,
    pub target: usize,
    /// Per-token perturbation weights; `None` means uniform.
    pub alpha: Option<AlphaMap>,
}

pub trait Trainable: Params + Clone {
    fn encoder(&self) -> &TinyEncoder;
    fn encoder_mut(&mut self) -> &mut TinyEncoder;

    /// Output logits for one example, without dropout.
    fn logits(&self, ex: &PreparedExample) -> Result<Array1<f64>>;

    /// Forward + backward for one example. Parameter gradients are scaled by
    /// `scale` and added into `grads`; returns the unscaled loss.
    fn accumulate(
        &self,
        ex: &PreparedExample,
        dropout: Option<&mut Dropout>,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64>;

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        params::fill(&mut g, 0.0);
        g
    }

    fn predict(&self, ex: &PreparedExample) -> Result<usize> {
        let logits = self.logits(ex)?;
        Ok(argmax(logits.as_slice().expect("owned logits")))
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Shared encoder + language descriptors + per-language heads.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub encoder: TinyEncoder,
    pub fusion: FusionHead,
}

impl Classifier {
    pub fn new(
        config: EncoderConfig,
        vocab: Arc<Vocab>,
        label_counts: &[usize],
        use_descriptors: bool,
        seed: u64,
    ) -> Result<Self> {
        let encoder = TinyEncoder::new(config, vocab, seed)?;
        let fusion = FusionHead::new(encoder.hidden_size(), label_counts, use_descriptors, seed.wrapping_add(0x5eed));
        Ok(Self { encoder, fusion })
    }

    pub fn uses_descriptors(&self) -> bool {
        self.fusion.descriptors.is_some()
    }

    /// Loss and its gradient w.r.t. the summed embedding tensor, with dropout
    /// off. Used for gradient checking and perturbation analysis.
    pub fn loss_wrt_embeddings(&self, embeddings: &Array2<f64>, ex: &PreparedExample) -> Result<(f64, Array2<f64>)> {
        let trace = self
            .encoder
            .forward_embedded(embeddings, &ex.tokens.attention_mask, None)?;
        let (logits, ftrace) = self.fusion.forward(&trace.sentence_vector(), ex.language, None)?;
        let (loss, dl) = loss_and_grad(logits.as_slice().expect("owned"), ex.target)?;
        let mut grads = self.zeros_like();
        let ds = self.fusion.backward(&ftrace, &Array1::from(dl), &mut grads.fusion);
        let d_hidden = cls_gradient(&ds, trace.hidden.nrows());
        let d_emb = self.encoder.backward(&trace, &d_hidden, &mut grads.encoder);
        Ok((loss, d_emb))
    }
}

/// Places a sentence-vector gradient at position 0 of a hidden-state gradient.
pub(crate) fn cls_gradient(d_sentence: &Array1<f64>, rows: usize) -> Array2<f64> {
    let mut d = Array2::zeros((rows, d_sentence.len()));
    d.row_mut(0).assign(d_sentence);
    d
}

impl Trainable for Classifier {
    fn encoder(&self) -> &TinyEncoder {
        &self.encoder
    }

    fn encoder_mut(&mut self) -> &mut TinyEncoder {
        &mut self.encoder
    }

    fn logits(&self, ex: &PreparedExample) -> Result<Array1<f64>> {
        let out = self.encoder.encode(&ex.tokens)?;
        Ok(self.fusion.forward(&out.sentence, ex.language, None)?.0)
    }

    fn accumulate(
        &self,
        ex: &PreparedExample,
        mut dropout: Option<&mut Dropout>,
        scale: f64,
        grads: &mut Self,
    ) -> Result<f64> {
        let trace = self.encoder.forward(&ex.tokens, dropout.as_deref_mut())?;
        let (logits, ftrace) = self
            .fusion
            .forward(&trace.sentence_vector(), ex.language, dropout)?;
        let (loss, dl) = loss_and_grad(logits.as_slice().expect("owned"), ex.target)?;
        let dl = Array1::from(dl) * scale;
        let ds = self.fusion.backward(&ftrace, &dl, &mut grads.fusion);
        self.encoder
            .backward(&trace, &cls_gradient(&ds, trace.hidden.nrows()), &mut grads.encoder);
        Ok(loss)
    }
}

impl Params for Classifier {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
    }
}

/// Softmax of a logit vector.
pub fn probabilities(logits: &Array1<f64>) -> Array1<f64> {
    let p = crate::nn::softmax(logits.as_slice().expect("owned"));
    Array1::from(p)
}

/// Dropout settings for one training step. Each example draws its masks from
/// a stream keyed by `(seed, example id)`, so repeated passes over the same
/// batch within a step see identical masks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutPlan {
    pub p: f64,
    pub seed: u64,
}

impl DropoutPlan {
    pub const OFF: DropoutPlan = DropoutPlan { p: 0.0, seed: 0 };

    pub fn for_example(&self, id: usize) -> Option<Dropout> {
        (self.p > 0.0).then(|| {
            Dropout::new(
                self.p,
                rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(self.seed, id as u64)),
            )
        })
    }
}

/// SplitMix64-style combination of two seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean loss over a batch and the gradient of that mean.
pub fn batch_gradients<M: Trainable>(
    model: &M,
    batch: &[&PreparedExample],
    dropout: DropoutPlan,
) -> Result<(f64, M)> {
    let mut grads = model.zeros_like();
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;
    for ex in batch {
        let mut drop = dropout.for_example(ex.id);
        total += model.accumulate(ex, drop.as_mut(), scale, &mut grads)?;
    }
    Ok((total * scale, grads))
}
