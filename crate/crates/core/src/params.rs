//! Named flat views over trainable parameters.
//!
//! Every model type doubles as its own gradient buffer: a zeroed clone has
//! exactly the same parameter layout, so optimizer state, clipping, hashing
//! and checkpointing all work by walking two structures in lock-step.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub trait Params {
    /// Visits every parameter tensor in a fixed order.
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are kept in standard layout")
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameters are kept in standard layout")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are kept in standard layout")
}

pub fn names<P: Params + ?Sized>(p: &P) -> Vec<String> {
    let mut out = Vec::new();
    p.visit("", &mut |name, _| out.push(name));
    out
}

pub fn count<P: Params + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, s| n += s.len());
    n
}

pub fn fill<P: Params + ?Sized>(p: &mut P, value: f64) {
    p.visit_mut("", &mut |_, s| s.fill(value));
}

/// `dst += scale * src` over matching layouts.
pub fn axpy<P: Params>(dst: &mut P, scale: f64, src: &P) {
    let mut sources: Vec<&[f64]> = Vec::new();
    src.visit("", &mut |_, s| sources.push(s));
    let mut i = 0;
    dst.visit_mut("", &mut |_, d| {
        for (a, b) in d.iter_mut().zip(sources[i]) {
            *a += scale * b;
        }
        i += 1;
    });
}

pub fn scale<P: Params + ?Sized>(p: &mut P, factor: f64) {
    p.visit_mut("", &mut |_, s| s.iter_mut().for_each(|v| *v *= factor));
}

pub fn global_norm<P: Params + ?Sized>(p: &P) -> f64 {
    let mut sum = 0.0;
    p.visit("", &mut |_, s| sum += s.iter().map(|v| v * v).sum::<f64>());
    sum.sqrt()
}

pub fn all_finite<P: Params + ?Sized>(p: &P) -> bool {
    let mut ok = true;
    p.visit("", &mut |_, s| ok &= s.iter().all(|v| v.is_finite()));
    ok
}

/// SHA-256 over the little-endian bytes of every parameter, names included.
pub fn digest<P: Params + ?Sized>(p: &P) -> String {
    let mut hasher = Sha256::new();
    p.visit("", &mut |name, s| {
        hasher.update(name.as_bytes());
        for v in s {
            hasher.update(v.to_le_bytes());
        }
    });
    hex::encode(hasher.finalize())
}

/// Bitwise equality of two parameter sets.
pub fn bit_equal<P: Params>(a: &P, b: &P) -> bool {
    let mut left: Vec<&[f64]> = Vec::new();
    a.visit("", &mut |_, s| left.push(s));
    let mut right: Vec<&[f64]> = Vec::new();
    b.visit("", &mut |_, s| right.push(s));
    left.len() == right.len()
        && left.iter().zip(&right).all(|(x, y)| {
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

pub fn to_named<P: Params + ?Sized>(p: &P) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    p.visit("", &mut |name, s| {
        out.insert(name, s.to_vec());
    });
    out
}

/// Overwrites parameters from a name → values map; every name must be present
/// with the right length.
pub fn load_named<P: Params + ?Sized>(p: &mut P, values: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let mut err = None;
    let mut seen = 0;
    p.visit_mut("", &mut |name, s| {
        if err.is_some() {
            return;
        }
        match values.get(&name) {
            Some(v) if v.len() == s.len() => {
                s.copy_from_slice(v);
                seen += 1;
            }
            Some(v) => {
                err = Some(Error::Checkpoint(format!(
                    "parameter {name}: expected {} values, found {}",
                    s.len(),
                    v.len()
                )))
            }
            None => err = Some(Error::Checkpoint(format!("parameter {name} missing"))),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if seen != values.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {seen}",
            values.len()
        )));
    }
    Ok(())
}

/// SHA-256 over the little-endian bytes of one tensor.
pub fn digest_values(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}
