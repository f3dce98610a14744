//! Small post-LayerNorm transformer encoder in double precision.

use std::sync::Arc;

use ndarray::{s, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::{TokenizedExample, Vocab};
use crate::error::{Error, Result};
use crate::nn::{apply_mask, gaussian, gelu, gelu_grad, masked, softmax_in_place, Dropout, LayerNorm, LayerNormTrace, Linear};
use crate::params::{join, slice2, slice2_mut, Params};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 256,
            max_len: super::tokenizer::DEFAULT_MAX_LEN,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.max_len < 2 || self.ffn == 0 {
            return Err(Error::Config("max_len must be ≥ 2 and ffn ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub attn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
}

impl Params for EncoderLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.attn_out.visit(&join(prefix, "attn_out"), f);
        self.attn_norm.visit(&join(prefix, "attn_norm"), f);
        self.ffn_in.visit(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit(&join(prefix, "ffn_out"), f);
        self.ffn_norm.visit(&join(prefix, "ffn_norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.attn_out.visit_mut(&join(prefix, "attn_out"), f);
        self.attn_norm.visit_mut(&join(prefix, "attn_norm"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), f);
        self.ffn_norm.visit_mut(&join(prefix, "ffn_norm"), f);
    }
}

struct LayerTrace {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
    attn_drop: Option<Array2<f64>>,
    attn_norm: LayerNormTrace,
    mid: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_act: Array2<f64>,
    ffn_drop: Option<Array2<f64>>,
    ffn_norm: LayerNormTrace,
}

impl EncoderLayer {
    fn new(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden;
        let std = cfg.init_std;
        Self {
            query: Linear::new(d, d, std, rng),
            key: Linear::new(d, d, std, rng),
            value: Linear::new(d, d, std, rng),
            attn_out: Linear::new(d, d, std, rng),
            attn_norm: LayerNorm::new(d),
            ffn_in: Linear::new(d, cfg.ffn, std, rng),
            ffn_out: Linear::new(cfg.ffn, d, std, rng),
            ffn_norm: LayerNorm::new(d),
        }
    }

    fn forward(
        &self,
        x: &Array2<f64>,
        mask: &[u8],
        heads: usize,
        mut dropout: Option<&mut Dropout>,
    ) -> (Array2<f64>, LayerTrace) {
        let (n, d) = x.dim();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let mut context = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            for mut row in scores.rows_mut() {
                for (j, sc) in row.iter_mut().enumerate() {
                    *sc = if mask[j] == 0 { f64::NEG_INFINITY } else { *sc * scale };
                }
                softmax_in_place(row.as_slice_mut().expect("contiguous row"));
            }
            context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let mut attn = self.attn_out.forward(&context);
        let attn_drop = dropout.as_deref_mut().and_then(|dr| dr.mask(n, d));
        apply_mask(&mut attn, &attn_drop);
        let (mid, attn_norm) = self.attn_norm.forward(&(x + &attn));

        let ffn_pre = self.ffn_in.forward(&mid);
        let ffn_act = ffn_pre.mapv(gelu);
        let mut ffn = self.ffn_out.forward(&ffn_act);
        let ffn_drop = dropout.and_then(|dr| dr.mask(n, d));
        apply_mask(&mut ffn, &ffn_drop);
        let (out, ffn_norm) = self.ffn_norm.forward(&(&mid + &ffn));
        (
            out,
            LayerTrace {
                input: x.clone(),
                q,
                k,
                v,
                probs,
                context,
                attn_drop,
                attn_norm,
                mid,
                ffn_pre,
                ffn_act,
                ffn_drop,
                ffn_norm,
            },
        )
    }

    fn backward(&self, t: &LayerTrace, dy: &Array2<f64>, heads: usize, g: &mut EncoderLayer) -> Array2<f64> {
        let d = dy.ncols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let d_sum2 = self.ffn_norm.backward(&t.ffn_norm, dy, &mut g.ffn_norm);
        let d_ffn = masked(&d_sum2, &t.ffn_drop);
        let mut d_act = self.ffn_out.backward(&t.ffn_act, &d_ffn, &mut g.ffn_out);
        d_act.zip_mut_with(&t.ffn_pre, |da, &pre| *da *= gelu_grad(pre));
        let d_mid = d_sum2 + self.ffn_in.backward(&t.mid, &d_act, &mut g.ffn_in);

        let d_sum1 = self.attn_norm.backward(&t.attn_norm, &d_mid, &mut g.attn_norm);
        let d_attn = masked(&d_sum1, &t.attn_drop);
        let d_context = self.attn_out.backward(&t.context, &d_attn, &mut g.attn_out);

        let mut dq = Array2::zeros(t.q.dim());
        let mut dk = Array2::zeros(t.k.dim());
        let mut dv = Array2::zeros(t.v.dim());
        for (h, p) in t.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx = d_context.slice(cols);
            let dp = dctx.dot(&t.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx));
            let mut ds = dp;
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                drow.zip_mut_with(&prow, |dv, &pv| *dv = pv * (*dv - dot) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&t.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&t.q.slice(cols)));
        }
        let mut dx = d_sum1;
        dx += &self.query.backward(&t.input, &dq, &mut g.query);
        dx += &self.key.backward(&t.input, &dk, &mut g.key);
        dx += &self.value.backward(&t.input, &dv, &mut g.value);
        dx
    }
}

/// Summed input embeddings of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTensor {
    /// Row `t` is token + segment + position embedding of position `t`.
    pub values: Array2<f64>,
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
}

/// Final hidden states and the `[CLS]`-pooled sentence vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Array2<f64>,
    pub sentence: Array1<f64>,
}

/// Everything the backward pass needs from one forward pass.
pub struct EncoderTrace {
    ids: Option<(Vec<usize>, Vec<usize>, Vec<usize>)>,
    embed_norm: LayerNormTrace,
    embed_drop: Option<Array2<f64>>,
    layers: Vec<LayerTrace>,
    pub hidden: Array2<f64>,
}

impl EncoderTrace {
    pub fn sentence_vector(&self) -> Array1<f64> {
        self.hidden.row(0).to_owned()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyEncoder {
    pub config: EncoderConfig,
    pub vocab: Arc<Vocab>,
    pub token_embeddings: Array2<f64>,
    pub segment_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub embed_norm: LayerNorm,
    pub layers: Vec<EncoderLayer>,
}

pub const SEGMENT_TYPES: usize = 2;

impl TinyEncoder {
    pub fn new(config: EncoderConfig, vocab: Arc<Vocab>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let std = config.init_std;
        let token_embeddings = gaussian(vocab.len(), d, std, &mut rng);
        let segment_embeddings = gaussian(SEGMENT_TYPES, d, std, &mut rng);
        let position_embeddings = gaussian(config.max_len, d, std, &mut rng);
        let layers = (0..config.layers)
            .map(|_| EncoderLayer::new(&config, &mut rng))
            .collect();
        Ok(Self {
            embed_norm: LayerNorm::new(d),
            config,
            vocab,
            token_embeddings,
            segment_embeddings,
            position_embeddings,
            layers,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embeddings.nrows()
    }

    pub fn tokenize(&self, text: &str) -> TokenizedExample {
        self.vocab.tokenize(text, self.config.max_len)
    }

    fn check(&self, tok: &TokenizedExample) -> Result<()> {
        let n = tok.len();
        if n > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: n,
                max: self.config.max_len,
            });
        }
        if tok.attention_mask.len() != n || tok.segment_ids.len() != n || tok.position_ids.len() != n {
            return Err(Error::Shape("token, mask, segment and position lengths differ".into()));
        }
        if let Some(&id) = tok.ids.iter().find(|&&id| id >= self.vocab_size()) {
            return Err(Error::TokenOutOfVocabulary {
                id,
                vocab_size: self.vocab_size(),
            });
        }
        if tok.segment_ids.iter().any(|&s| s >= self.segment_embeddings.nrows())
            || tok.position_ids.iter().any(|&p| p >= self.position_embeddings.nrows())
        {
            return Err(Error::Shape("segment or position id outside its table".into()));
        }
        Ok(())
    }

    /// Token + segment + position embedding per position.
    pub fn embed(&self, tok: &TokenizedExample) -> Result<EmbeddingTensor> {
        self.check(tok)?;
        let d = self.config.hidden;
        let mut values = Array2::zeros((tok.len(), d));
        for (t, mut row) in values.rows_mut().into_iter().enumerate() {
            row += &self.token_embeddings.row(tok.ids[t]);
            row += &self.segment_embeddings.row(tok.segment_ids[t]);
            row += &self.position_embeddings.row(tok.position_ids[t]);
        }
        Ok(EmbeddingTensor {
            values,
            token_ids: tok.ids.clone(),
            segment_ids: tok.segment_ids.clone(),
            position_ids: tok.position_ids.clone(),
        })
    }

    /// Inference forward pass (no dropout).
    pub fn encode(&self, tok: &TokenizedExample) -> Result<EncoderOutput> {
        let trace = self.forward(tok, None)?;
        Ok(EncoderOutput {
            sentence: trace.sentence_vector(),
            hidden: trace.hidden,
        })
    }

    pub fn forward(&self, tok: &TokenizedExample, dropout: Option<&mut Dropout>) -> Result<EncoderTrace> {
        let emb = self.embed(tok)?;
        let mut trace = self.forward_embedded(&emb.values, &tok.attention_mask, dropout)?;
        trace.ids = Some((emb.token_ids, emb.segment_ids, emb.position_ids));
        Ok(trace)
    }

    /// Forward pass starting from an already summed embedding tensor.
    pub fn forward_embedded(
        &self,
        embeddings: &Array2<f64>,
        attention_mask: &[u8],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<EncoderTrace> {
        let (n, d) = embeddings.dim();
        if d != self.config.hidden || attention_mask.len() != n {
            return Err(Error::Shape(format!(
                "embeddings {n}×{d} with mask of length {} (hidden {})",
                attention_mask.len(),
                self.config.hidden
            )));
        }
        if n > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: n,
                max: self.config.max_len,
            });
        }
        let (mut x, embed_norm) = self.embed_norm.forward(embeddings);
        let embed_drop = dropout.as_deref_mut().and_then(|dr| dr.mask(n, d));
        apply_mask(&mut x, &embed_drop);
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, t) = layer.forward(&x, attention_mask, self.config.heads, dropout.as_deref_mut());
            layers.push(t);
            x = y;
        }
        Ok(EncoderTrace {
            ids: None,
            embed_norm,
            embed_drop,
            layers,
            hidden: x,
        })
    }

    /// Backpropagates `d_hidden` through the encoder, accumulating parameter
    /// gradients into `grads`. Returns the gradient w.r.t. the summed
    /// embedding tensor; when the trace came from [`forward`](Self::forward),
    /// that gradient is also scattered into the three embedding tables.
    pub fn backward(&self, trace: &EncoderTrace, d_hidden: &Array2<f64>, grads: &mut TinyEncoder) -> Array2<f64> {
        let mut dx = d_hidden.clone();
        for (layer, (t, g)) in self
            .layers
            .iter()
            .zip(trace.layers.iter().zip(grads.layers.iter_mut()))
            .rev()
        {
            dx = layer.backward(t, &dx, self.config.heads, g);
        }
        let dx = masked(&dx, &trace.embed_drop);
        let d_emb = self.embed_norm.backward(&trace.embed_norm, &dx, &mut grads.embed_norm);
        if let Some((ids, segs, pos)) = &trace.ids {
            for (t, row) in d_emb.rows().into_iter().enumerate() {
                let mut r = grads.token_embeddings.row_mut(ids[t]);
                r += &row;
                let mut r = grads.segment_embeddings.row_mut(segs[t]);
                r += &row;
                let mut r = grads.position_embeddings.row_mut(pos[t]);
                r += &row;
            }
        }
        d_emb
    }
}

impl Params for TinyEncoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "token_embeddings"), slice2(&self.token_embeddings));
        f(join(prefix, "segment_embeddings"), slice2(&self.segment_embeddings));
        f(join(prefix, "position_embeddings"), slice2(&self.position_embeddings));
        self.embed_norm.visit(&join(prefix, "embed_norm"), f);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layers.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "token_embeddings"), slice2_mut(&mut self.token_embeddings));
        f(join(prefix, "segment_embeddings"), slice2_mut(&mut self.segment_embeddings));
        f(join(prefix, "position_embeddings"), slice2_mut(&mut self.position_embeddings));
        self.embed_norm.visit_mut(&join(prefix, "embed_norm"), f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::tokenizer::CLS;
    use crate::params;
    use ndarray::array;

    fn small() -> TinyEncoder {
        let vocab = Arc::new(Vocab::build(["aa bb cc dd aa bb cc dd"], 1));
        let cfg = EncoderConfig {
            hidden: 8,
            layers: 2,
            heads: 2,
            ffn: 16,
            max_len: 16,
            init_std: 0.3,
        };
        TinyEncoder::new(cfg, vocab, 11).unwrap()
    }

    #[test]
    fn embed_sums_three_tables() {
        let mut enc = small();
        enc.token_embeddings = Array2::zeros((enc.vocab_size(), 8));
        enc.segment_embeddings.fill(0.0);
        enc.position_embeddings.fill(0.0);
        let tok = enc.tokenize("aa bb");
        assert_eq!(enc.embed(&tok).unwrap().values, Array2::<f64>::zeros((4, 8)));
    }

    #[test]
    fn embed_hand_sum_two_tokens() {
        let vocab = Arc::new(Vocab::from(vec!["x".to_string(), "y".to_string()]));
        let cfg = EncoderConfig {
            hidden: 2,
            layers: 0,
            heads: 1,
            ffn: 1,
            max_len: 2,
            init_std: 0.0,
        };
        let mut enc = TinyEncoder::new(cfg, vocab, 0).unwrap();
        enc.token_embeddings = array![[1.0, 0.0], [0.0, 1.0]];
        enc.segment_embeddings = array![[1.0, 1.0], [1.0, 1.0]];
        enc.position_embeddings = array![[0.0, 2.0], [2.0, 0.0]];
        let tok = TokenizedExample {
            ids: vec![0, 1],
            attention_mask: vec![1, 1],
            segment_ids: vec![0, 0],
            position_ids: vec![0, 1],
            word_alignment: vec![],
            words: vec![],
        };
        let emb = enc.embed(&tok).unwrap();
        assert_eq!(emb.values, array![[2.0, 3.0], [3.0, 2.0]]);
    }

    #[test]
    fn out_of_vocab_and_too_long_are_errors() {
        let enc = small();
        let mut tok = enc.tokenize("aa");
        tok.ids[1] = 999;
        assert!(matches!(enc.embed(&tok), Err(Error::TokenOutOfVocabulary { .. })));
        let tok = enc.tokenize("aa").padded(17);
        assert!(matches!(enc.encode(&tok), Err(Error::SequenceTooLong { .. })));
    }

    #[test]
    fn sentence_vector_is_cls_row_and_deterministic() {
        let enc = small();
        let tok = enc.tokenize("aa cc dd");
        assert_eq!(tok.ids[0], CLS);
        let out = enc.encode(&tok).unwrap();
        assert_eq!(out.sentence, out.hidden.row(0));
        let again = enc.encode(&tok).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn padding_is_inert() {
        let enc = small();
        let tok = enc.tokenize("aa bb cc");
        let base = enc.encode(&tok).unwrap();
        let padded = enc.encode(&tok.padded(12)).unwrap();
        for (a, b) in base.sentence.iter().zip(padded.sentence.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_names_are_unique() {
        let enc = small();
        let names = params::names(&enc);
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(names.contains(&"token_embeddings".to_string()));
        assert!(names.contains(&"layers.1.ffn_norm.beta".to_string()));
    }
}
