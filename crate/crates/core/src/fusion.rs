//! Language descriptors, sentence/descriptor fusion and per-language heads.
//!
//! Each language `i` owns a trainable descriptor row `N_i`. Before
//! classification it is refined by a single dot-product attention step over
//! all descriptors, `N_i' = softmax(N_i Nᵀ) N`, concatenated after the
//! sentence vector, and fed to that language's affine head. There is no
//! `1/√m` temperature inside the softmax, so the descriptor scale acts as an
//! inverse temperature.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{gaussian, log_softmax, softmax, Dropout, Linear};
use crate::params::{join, slice2, slice2_mut, Params};

pub const DESCRIPTOR_INIT_STD: f64 = 0.02;

/// `N ∈ ℝ^{n×m}`, one row per language.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorMatrix(pub Array2<f64>);

impl DescriptorMatrix {
    pub fn random(languages: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self(gaussian(languages, hidden, DESCRIPTOR_INIT_STD, &mut rng))
    }

    pub fn languages(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

/// Attention weights over all descriptors and the resulting combination.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedDescriptor {
    pub weights: Array1<f64>,
    pub vector: Array1<f64>,
}

pub fn refine_descriptor(n: &DescriptorMatrix, language: usize) -> Result<RefinedDescriptor> {
    if language >= n.languages() {
        return Err(Error::IndexOutOfRange {
            what: "language",
            index: language,
            len: n.languages(),
        });
    }
    let scores = n.0.dot(&n.0.row(language));
    let weights = Array1::from(softmax(scores.as_slice().expect("owned vector")));
    let vector = weights.dot(&n.0);
    Ok(RefinedDescriptor { weights, vector })
}

/// Accumulates `∂L/∂N` given `∂L/∂N_i'`.
fn refine_backward(n: &Array2<f64>, language: usize, refined: &RefinedDescriptor, d_out: &Array1<f64>, grad: &mut Array2<f64>) {
    let w = &refined.weights;
    // through the weighted sum
    for (j, mut row) in grad.rows_mut().into_iter().enumerate() {
        row.scaled_add(w[j], d_out);
    }
    // through the softmax and the scores N_j · N_i
    let dw = n.dot(d_out);
    let dot = w.dot(&dw);
    let ds = w * &(dw - dot);
    let ni = n.row(language).to_owned();
    for (j, mut row) in grad.rows_mut().into_iter().enumerate() {
        row.scaled_add(ds[j], &ni);
    }
    let d_ni = ds.dot(n);
    let mut row = grad.row_mut(language);
    row += &d_ni;
}

/// `h = [S; N_i']`. Without descriptors the second block is empty.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedVector {
    pub values: Array1<f64>,
    pub sentence_dim: usize,
}

impl FusedVector {
    pub fn sentence_block(&self) -> ndarray::ArrayView1<'_, f64> {
        self.values.slice(s![..self.sentence_dim])
    }

    pub fn descriptor_block(&self) -> ndarray::ArrayView1<'_, f64> {
        self.values.slice(s![self.sentence_dim..])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sentence_only(sentence: &Array1<f64>) -> Self {
        Self {
            values: sentence.clone(),
            sentence_dim: sentence.len(),
        }
    }
}

pub fn fuse(sentence: &Array1<f64>, descriptor: &RefinedDescriptor) -> Result<FusedVector> {
    if sentence.len() != descriptor.vector.len() {
        return Err(Error::Shape(format!(
            "sentence vector has {} dims, descriptor {}",
            sentence.len(),
            descriptor.vector.len()
        )));
    }
    Ok(FusedVector {
        values: concatenate![Axis(0), *sentence, descriptor.vector],
        sentence_dim: sentence.len(),
    })
}

/// One affine head per language; `weight` is `(labels, input)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub heads: Vec<Linear>,
}

impl HeadParams {
    pub fn new(input: usize, label_counts: &[usize], std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            heads: label_counts
                .iter()
                .map(|&k| Linear::new(input, k, std, &mut rng))
                .collect(),
        }
    }

    fn head(&self, language: usize) -> Result<&Linear> {
        self.heads.get(language).ok_or(Error::IndexOutOfRange {
            what: "language head",
            index: language,
            len: self.heads.len(),
        })
    }
}

/// `W h + b` with the given language's head. No activation.
pub fn classify(h: &FusedVector, language: usize, heads: &HeadParams) -> Result<Array1<f64>> {
    let head = heads.head(language)?;
    if head.input_dim() != h.len() {
        return Err(Error::Shape(format!(
            "head expects {} inputs, fused vector has {}",
            head.input_dim(),
            h.len()
        )));
    }
    Ok(head.weight.dot(&h.values) + &head.bias)
}

/// Negative log-likelihood `−log softmax(logits)[gold]`.
pub fn loss(logits: &[f64], gold: usize) -> Result<f64> {
    Ok(loss_and_grad(logits, gold)?.0)
}

/// Loss and its gradient `softmax(logits) − onehot(gold)`.
pub fn loss_and_grad(logits: &[f64], gold: usize) -> Result<(f64, Vec<f64>)> {
    if gold >= logits.len() {
        return Err(Error::IndexOutOfRange {
            what: "gold label",
            index: gold,
            len: logits.len(),
        });
    }
    let logp = log_softmax(logits);
    let mut grad: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    grad[gold] -= 1.0;
    Ok((-logp[gold], grad))
}

/// Trainable part of the classifier above the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead {
    pub descriptors: Option<DescriptorMatrix>,
    pub heads: HeadParams,
}

pub struct FusionTrace {
    language: usize,
    refined: Option<RefinedDescriptor>,
    input: Array2<f64>,
    drop: Option<Array2<f64>>,
}

impl FusionHead {
    pub fn new(hidden: usize, label_counts: &[usize], use_descriptors: bool, seed: u64) -> Self {
        let descriptors = use_descriptors.then(|| DescriptorMatrix::random(label_counts.len(), hidden, seed));
        let input = if use_descriptors { 2 * hidden } else { hidden };
        Self {
            descriptors,
            heads: HeadParams::new(input, label_counts, DESCRIPTOR_INIT_STD, seed.wrapping_add(1)),
        }
    }

    pub fn fused(&self, sentence: &Array1<f64>, language: usize) -> Result<(FusedVector, Option<RefinedDescriptor>)> {
        match &self.descriptors {
            Some(n) => {
                let refined = refine_descriptor(n, language)?;
                Ok((fuse(sentence, &refined)?, Some(refined)))
            }
            None => Ok((FusedVector::sentence_only(sentence), None)),
        }
    }

    pub fn forward(
        &self,
        sentence: &Array1<f64>,
        language: usize,
        dropout: Option<&mut Dropout>,
    ) -> Result<(Array1<f64>, FusionTrace)> {
        let (h, refined) = self.fused(sentence, language)?;
        let mut h = h;
        let drop = dropout.and_then(|d| d.mask(1, h.len())).map(|m| m.row(0).to_owned());
        if let Some(m) = &drop {
            h.values *= m;
        }
        let logits = classify(&h, language, &self.heads)?;
        let input = h.values.insert_axis(Axis(0));
        Ok((
            logits,
            FusionTrace {
                language,
                refined,
                input,
                drop: drop.map(|m| m.insert_axis(Axis(0))),
            },
        ))
    }

    /// Returns `∂L/∂S` and accumulates head and descriptor gradients.
    pub fn backward(&self, trace: &FusionTrace, d_logits: &Array1<f64>, grads: &mut FusionHead) -> Array1<f64> {
        let lang = trace.language;
        let dy = d_logits.clone().insert_axis(Axis(0));
        let mut dh = self.heads.heads[lang].backward(&trace.input, &dy, &mut grads.heads.heads[lang]);
        if let Some(m) = &trace.drop {
            dh *= m;
        }
        let dh = dh.row(0).to_owned();
        let m = self.heads.heads[lang].input_dim();
        if let (Some(n), Some(refined), Some(gn)) = (&self.descriptors, &trace.refined, grads.descriptors.as_mut()) {
            let half = m / 2;
            let d_desc = dh.slice(s![half..]).to_owned();
            refine_backward(&n.0, lang, refined, &d_desc, &mut gn.0);
            dh.slice(s![..half]).to_owned()
        } else {
            dh
        }
    }
}

impl Params for FusionHead {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        if let Some(n) = &self.descriptors {
            f(join(prefix, "descriptors"), slice2(&n.0));
        }
        for (i, head) in self.heads.heads.iter().enumerate() {
            head.visit(&join(prefix, &format!("heads.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        if let Some(n) = &mut self.descriptors {
            f(join(prefix, "descriptors"), slice2_mut(&mut n.0));
        }
        for (i, head) in self.heads.heads.iter_mut().enumerate() {
            head.visit_mut(&join(prefix, &format!("heads.{i}")), f);
        }
    }
}
