//! Central finite-difference gradient checks in `f64`.

use ndarray::{Array2, Array3};
use rand::Rng;

use super::{flatten, unflatten, Attention, Block, LayerNorm, Linear, ParamSet, PatchEmbed};
use crate::rng::{rng_from, standard_normal};

pub const FD_STEP: f64 = 1e-4;

/// Anything with a flat parameter vector, a scalar loss and its analytic gradient.
pub trait Differentiable {
    fn parameters(&self) -> Vec<f64>;
    fn loss_at(&self, params: &[f64]) -> f64;
    fn analytic_gradient(&self) -> Vec<f64>;
}

/// `max_i |analytic_i - numeric_i| / max(|numeric_i|, 1e-8)`.
pub fn grad_check<D: Differentiable + ?Sized>(op: &D, step: f64) -> f64 {
    let p0 = op.parameters();
    let analytic = op.analytic_gradient();
    assert_eq!(p0.len(), analytic.len(), "gradient length mismatch");
    let mut p = p0.clone();
    let mut worst = 0.0f64;
    for i in 0..p0.len() {
        p[i] = p0[i] + step;
        let up = op.loss_at(&p);
        p[i] = p0[i] - step;
        let down = op.loss_at(&p);
        p[i] = p0[i];
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1e-8));
    }
    worst
}

/// Per-tensor maximum relative error, in visit order.
pub fn grad_check_by_tensor<P: ParamSet<f64> + Clone>(op: &ParamOp<P>, step: f64) -> Vec<(String, f64)> {
    let p0 = op.parameters();
    let analytic = op.analytic_gradient();
    let mut spans = Vec::new();
    let mut off = 0;
    op.params.visit(&mut |n, _, d| {
        spans.push((n.to_string(), off, off + d.len()));
        off += d.len();
    });
    let mut p = p0.clone();
    spans
        .into_iter()
        .map(|(name, lo, hi)| {
            let mut worst = 0.0f64;
            for i in lo..hi {
                p[i] = p0[i] + step;
                let up = op.loss_at(&p);
                p[i] = p0[i] - step;
                let down = op.loss_at(&p);
                p[i] = p0[i];
                let numeric = (up - down) / (2.0 * step);
                worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1e-8));
            }
            (name, worst)
        })
        .collect()
}

/// A parameter set with closures for its loss and gradient.
pub struct ParamOp<P> {
    pub params: P,
    pub loss: Box<dyn Fn(&P) -> f64>,
    pub grad: Box<dyn Fn(&P) -> P>,
}

impl<P: ParamSet<f64> + Clone> Differentiable for ParamOp<P> {
    fn parameters(&self) -> Vec<f64> {
        flatten(&self.params)
    }

    fn loss_at(&self, params: &[f64]) -> f64 {
        let mut p = self.params.clone();
        unflatten(&mut p, params);
        (self.loss)(&p)
    }

    fn analytic_gradient(&self) -> Vec<f64> {
        flatten(&(self.grad)(&self.params))
    }
}

/// Input-gradient check: parameters are the input values themselves.
pub struct InputOp {
    pub input: Vec<f64>,
    pub loss: Box<dyn Fn(&[f64]) -> f64>,
    pub grad: Box<dyn Fn(&[f64]) -> Vec<f64>>,
}

impl Differentiable for InputOp {
    fn parameters(&self) -> Vec<f64> {
        self.input.clone()
    }

    fn loss_at(&self, params: &[f64]) -> f64 {
        (self.loss)(params)
    }

    fn analytic_gradient(&self) -> Vec<f64> {
        (self.grad)(&self.input)
    }
}

pub(crate) fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * standard_normal(rng))
}

fn weighted(y: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (y * w).sum()
}

/// Random non-degenerate weights so that layer gradients are O(1).
fn randomize<P: ParamSet<f64>, R: Rng + ?Sized>(p: &mut P, rng: &mut R, scale: f64) {
    p.visit_mut(&mut |_, d| d.iter_mut().for_each(|v| *v = scale * standard_normal(rng)));
}

pub fn check_linear(seed: u64) -> f64 {
    let mut r = rng_from(seed);
    let mut lin = Linear::<f64>::zeros(4, 5);
    randomize(&mut lin, &mut r, 0.5);
    let x = random_matrix(&mut r, 3, 5, 1.0);
    let w = random_matrix(&mut r, 3, 4, 1.0);
    let (x1, w1) = (x.clone(), w.clone());
    grad_check(
        &ParamOp {
            params: lin,
            loss: Box::new(move |p: &Linear<f64>| weighted(&p.forward(&x), &w)),
            grad: Box::new(move |p: &Linear<f64>| p.backward(&x1, &w1).1),
        },
        FD_STEP,
    )
}

pub fn check_layer_norm(seed: u64) -> f64 {
    let mut r = rng_from(seed);
    let mut ln = LayerNorm::<f64>::new(6);
    randomize(&mut ln, &mut r, 1.0);
    let x = random_matrix(&mut r, 3, 6, 1.0);
    let w = random_matrix(&mut r, 3, 6, 1.0);
    let (x1, w1) = (x.clone(), w.clone());
    let params = grad_check(
        &ParamOp {
            params: ln.clone(),
            loss: Box::new(move |p: &LayerNorm<f64>| weighted(&p.forward(&x).0, &w)),
            grad: Box::new(move |p: &LayerNorm<f64>| {
                let (_, c) = p.forward(&x1);
                p.backward(&c, &w1).1
            }),
        },
        FD_STEP,
    );
    let x = random_matrix(&mut r, 3, 6, 1.0);
    let w = random_matrix(&mut r, 3, 6, 1.0);
    let (ln1, w1) = (ln.clone(), w.clone());
    let input = grad_check(
        &InputOp {
            input: x.iter().cloned().collect(),
            loss: Box::new(move |v| weighted(&ln.forward(&Array2::from_shape_vec((3, 6), v.to_vec()).unwrap()).0, &w)),
            grad: Box::new(move |v| {
                let x = Array2::from_shape_vec((3, 6), v.to_vec()).unwrap();
                let (_, c) = ln1.forward(&x);
                ln1.backward(&c, &w1).0.iter().cloned().collect()
            }),
        },
        FD_STEP,
    );
    params.max(input)
}

/// Softmax attention alone: parameters and input.
pub fn check_attention(seed: u64) -> f64 {
    let mut r = rng_from(seed);
    let mut att = Attention::<f64>::zeros(8, 2);
    randomize(&mut att, &mut r, 0.4);
    let x = random_matrix(&mut r, 5, 8, 1.0);
    // The key bias has an identically zero gradient; its numeric estimate is
    // pure rounding noise proportional to the loss scale, so keep the loss small.
    let w = random_matrix(&mut r, 5, 8, 1e-3);
    let (x1, w1) = (x.clone(), w.clone());
    let params = grad_check(
        &ParamOp {
            params: att.clone(),
            loss: Box::new(move |p: &Attention<f64>| weighted(&p.forward(&x).0, &w)),
            grad: Box::new(move |p: &Attention<f64>| {
                let (_, c) = p.forward(&x1);
                p.backward(&c, &w1).1
            }),
        },
        FD_STEP,
    );
    let x = random_matrix(&mut r, 5, 8, 1.0);
    let w = random_matrix(&mut r, 5, 8, 1.0);
    let (a1, w1) = (att.clone(), w.clone());
    let input = grad_check(
        &InputOp {
            input: x.iter().cloned().collect(),
            loss: Box::new(move |v| weighted(&att.forward(&Array2::from_shape_vec((5, 8), v.to_vec()).unwrap()).0, &w)),
            grad: Box::new(move |v| {
                let x = Array2::from_shape_vec((5, 8), v.to_vec()).unwrap();
                let (_, c) = a1.forward(&x);
                a1.backward(&c, &w1).0.iter().cloned().collect()
            }),
        },
        FD_STEP,
    );
    params.max(input)
}

/// Full pre-norm block with embedding width `dim`.
pub fn check_block(seed: u64, dim: usize) -> f64 {
    let mut r = rng_from(seed);
    let mut block = Block::<f64>::zeros(dim, 2, 2 * dim);
    randomize(&mut block, &mut r, 0.3);
    let x = random_matrix(&mut r, 5, dim, 1.0);
    let w = random_matrix(&mut r, 5, dim, 1.0);
    let (x1, w1) = (x.clone(), w.clone());
    let params = grad_check(
        &ParamOp {
            params: block.clone(),
            loss: Box::new(move |p: &Block<f64>| weighted(&p.forward(&x), &w)),
            grad: Box::new(move |p: &Block<f64>| {
                let (_, c) = p.forward_cached(&x1);
                p.backward(&c, &w1).1
            }),
        },
        FD_STEP,
    );
    let x = random_matrix(&mut r, 5, dim, 1.0);
    let w = random_matrix(&mut r, 5, dim, 1.0);
    let (b1, w1) = (block.clone(), w.clone());
    let input = grad_check(
        &InputOp {
            input: x.iter().cloned().collect(),
            loss: Box::new(move |v| weighted(&block.forward(&Array2::from_shape_vec((5, dim), v.to_vec()).unwrap()), &w)),
            grad: Box::new(move |v| {
                let x = Array2::from_shape_vec((5, dim), v.to_vec()).unwrap();
                let (_, c) = b1.forward_cached(&x);
                b1.backward(&c, &w1).0.iter().cloned().collect()
            }),
        },
        FD_STEP,
    );
    params.max(input)
}

pub fn check_patch_embed(seed: u64) -> f64 {
    let mut r = rng_from(seed);
    let mut pe = PatchEmbed::<f64>::zeros(8, 4, 6);
    randomize(&mut pe, &mut r, 0.5);
    let input = Array3::from_shape_simple_fn((3, 8, 8), || standard_normal(&mut r));
    let w = random_matrix(&mut r, 5, 6, 1.0);
    let (i1, w1) = (input.clone(), w.clone());
    grad_check(
        &ParamOp {
            params: pe,
            loss: Box::new(move |p: &PatchEmbed<f64>| weighted(&p.forward(&input).unwrap().0, &w)),
            grad: Box::new(move |p: &PatchEmbed<f64>| {
                let (_, c) = p.forward(&i1).unwrap();
                p.backward(&c, &w1)
            }),
        },
        FD_STEP,
    )
}
