//! Dense building blocks with hand-written backward passes.
//!
//! Activations are row-major `(tokens, features)` matrices. Each backward
//! accumulates parameter gradients into a same-shaped gradient struct and
//! returns the gradient with respect to its input.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::params::{join, slice1, slice1_mut, slice2, slice2_mut, Params};

pub(crate) fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("std is finite and non-negative");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
}

/// Affine map `y = x Wᵀ + b` with `W` stored as `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(input: usize, output: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: gaussian(output, input, std, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl Params for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "weight"), slice2(&self.weight));
        f(join(prefix, "bias"), slice1(&self.bias));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "weight"), slice2_mut(&mut self.weight));
        f(join(prefix, "bias"), slice1_mut(&mut self.bias));
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct LayerNormTrace {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormTrace) {
        let width = x.ncols() as f64;
        let mut normalized = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / width;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / width;
            *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row *= *s;
        }
        let y = &normalized * &self.gamma + &self.beta;
        (y, LayerNormTrace { normalized, inv_std })
    }

    pub fn backward(&self, trace: &LayerNormTrace, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &trace.normalized).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let width = dy.ncols() as f64;
        let mut dx = dy * &self.gamma;
        for ((mut row, xhat), &s) in dx
            .rows_mut()
            .into_iter()
            .zip(trace.normalized.rows())
            .zip(trace.inv_std.iter())
        {
            let mean_d = row.sum() / width;
            let mean_dx = row.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / width;
            row.zip_mut_with(&xhat, |d, &xh| *d = s * (*d - mean_d - xh * mean_dx));
        }
        dx
    }
}

impl Params for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "gamma"), slice1(&self.gamma));
        f(join(prefix, "beta"), slice1(&self.beta));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "gamma"), slice1_mut(&mut self.gamma));
        f(join(prefix, "beta"), slice1_mut(&mut self.beta));
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// In-place numerically stable softmax over a slice. `-inf` entries get weight 0.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    xs.iter().map(|v| v - lse).collect()
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)`.
pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, rng: ChaCha8Rng) -> Self {
        Self { p, rng }
    }

    /// A scale mask, or `None` when dropout is inactive.
    pub fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        if self.p <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.p);
        let p = self.p;
        let rng = &mut self.rng;
        Some(Array2::from_shape_fn((rows, cols), |_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        }))
    }
}

pub(crate) fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

pub(crate) fn masked(dy: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn fd_check(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (f(x + h) - f(x - h)) / (2.0 * h);
            assert!((num - df(x)).abs() < 1e-8, "x={x}: {num} vs {}", df(x));
        }
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        fd_check(gelu, gelu_grad);
    }

    #[test]
    fn softmax_masks_negative_infinity() {
        let p = softmax(&[1.0, f64::NEG_INFINITY, 1.0]);
        assert_eq!(p, vec![0.5, 0.0, 0.5]);
        let lp = log_softmax(&[1.0, 2.0]);
        assert!((lp[1] + (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ln = LayerNorm::new(5);
        ln.gamma = Array1::from_shape_fn(5, |i| 0.5 + i as f64 * 0.3);
        ln.beta = Array1::from_shape_fn(5, |i| i as f64 * 0.1);
        let x = gaussian(3, 5, 1.0, &mut rng);
        let w = gaussian(3, 5, 1.0, &mut rng);
        let loss = |x: &Array2<f64>| (ln.forward(x).0 * &w).sum();
        let (_, trace) = ln.forward(&x);
        let mut grad = LayerNorm::new(5);
        grad.gamma.fill(0.0);
        let dx = ln.backward(&trace, &w, &mut grad);
        for i in 0..3 {
            for j in 0..5 {
                let mut xp = x.clone();
                xp[[i, j]] += 1e-6;
                let mut xm = x.clone();
                xm[[i, j]] -= 1e-6;
                let num = (loss(&xp) - loss(&xm)) / 2e-6;
                assert!((num - dx[[i, j]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn dropout_zero_is_inactive() {
        let mut d = Dropout::new(0.0, ChaCha8Rng::seed_from_u64(1));
        assert!(d.mask(2, 2).is_none());
        let mut d = Dropout::new(0.5, ChaCha8Rng::seed_from_u64(1));
        let m = d.mask(20, 20).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
