//! Compact vision transformer with hand-written reverse-mode gradients.
//!
//! Every layer exposes `forward` returning its output plus a cache, and
//! `backward` consuming that cache. Layers are generic over [`Real`] so that
//! training runs in `f32` while gradient checks run in `f64`.

mod attention;
mod block;
pub mod gradcheck;
mod layer_norm;
mod linear;
mod mlp;
mod patch;
mod vit;

pub use attention::{Attention, AttentionCache};
pub use block::{Block, BlockCache};
pub use layer_norm::{LayerNorm, LayerNormCache, LN_EPS};
pub use linear::Linear;
pub use mlp::{gelu, gelu_grad, Mlp, MlpCache};
pub use patch::{PatchCache, PatchEmbed};
pub use vit::{EncodeCache, TokenSequence, ViTConfig, ViTGrads, ViTParams};

use ndarray::{Array1, Array2, NdFloat};
use rand::Rng;

/// Floating point type the network runs in.
pub trait Real: NdFloat + Default + std::iter::Sum + 'static {
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// A set of named tensors that can be walked in a fixed order.
pub trait ParamSet<T: Real> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T]));
}

pub(crate) fn visit_array1<T: Real>(name: &str, a: &Array1<T>, f: &mut dyn FnMut(&str, &[usize], &[T])) {
    f(name, a.shape(), a.as_slice().expect("standard layout"));
}

pub(crate) fn visit_array2<T: Real>(name: &str, a: &Array2<T>, f: &mut dyn FnMut(&str, &[usize], &[T])) {
    f(name, a.shape(), a.as_slice().expect("standard layout"));
}

/// Call `f` with names prefixed by `prefix.`.
pub fn visit_prefixed<T: Real, P: ParamSet<T> + ?Sized>(
    p: &P,
    prefix: &str,
    f: &mut dyn FnMut(&str, &[usize], &[T]),
) {
    p.visit(&mut |n, s, d| f(&format!("{prefix}.{n}"), s, d));
}

pub fn visit_mut_prefixed<T: Real, P: ParamSet<T> + ?Sized>(
    p: &mut P,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut [T]),
) {
    p.visit_mut(&mut |n, d| f(&format!("{prefix}.{n}"), d));
}

pub fn num_params<T: Real, P: ParamSet<T> + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit(&mut |_, _, d| n += d.len());
    n
}

pub fn flatten<T: Real, P: ParamSet<T> + ?Sized>(p: &P) -> Vec<T> {
    let mut out = Vec::with_capacity(num_params(p));
    p.visit(&mut |_, _, d| out.extend_from_slice(d));
    out
}

pub fn unflatten<T: Real, P: ParamSet<T> + ?Sized>(p: &mut P, flat: &[T]) {
    let mut off = 0;
    p.visit_mut(&mut |_, d| {
        d.copy_from_slice(&flat[off..off + d.len()]);
        off += d.len();
    });
    assert_eq!(off, flat.len(), "flat parameter length mismatch");
}

pub fn zeros_like<T: Real, P: ParamSet<T> + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.visit_mut(&mut |_, d| d.fill(T::zero()));
    z
}

/// `dst += src`, element by element in visit order.
pub fn accumulate<T: Real, P: ParamSet<T> + ?Sized>(dst: &mut P, src: &P) {
    let flat = flatten(src);
    let mut off = 0;
    dst.visit_mut(&mut |_, d| {
        for (x, y) in d.iter_mut().zip(&flat[off..]) {
            *x += *y;
        }
        off += d.len();
    });
}

pub fn named_tensors<T: Real, P: ParamSet<T> + ?Sized>(p: &P, prefix: &str) -> Vec<(String, Vec<usize>, Vec<T>)> {
    let mut out = Vec::new();
    visit_prefixed(p, prefix, &mut |n, s, d| out.push((n.to_string(), s.to_vec(), d.to_vec())));
    out
}

pub fn max_abs<T: Real, P: ParamSet<T> + ?Sized>(p: &P) -> f64 {
    let mut m = 0.0f64;
    p.visit(&mut |_, _, d| {
        for v in d {
            m = m.max(v.as_f64().abs());
        }
    });
    m
}

/// Truncated normal (±2σ) initialization.
pub(crate) fn trunc_normal2<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || T::lit(crate::rng::truncated_normal(rng, std)))
}

pub(crate) fn trunc_normal1<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Array1<T> {
    Array1::from_shape_simple_fn(n, || T::lit(crate::rng::truncated_normal(rng, std)))
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows<T: Real>(x: &mut Array2<T>) {
    for mut row in x.rows_mut() {
        let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}
