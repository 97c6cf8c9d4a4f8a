use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{trunc_normal2, visit_array1, visit_array2, ParamSet, Real};

/// `y = x W^T + b` applied to each row of `x`; `weight` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Real> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    /// Truncated normal weights (σ = 0.02), zero bias.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, out_dim: usize, in_dim: usize) -> Self {
        Self { weight: trunc_normal2(rng, (out_dim, in_dim), 0.02), bias: Array1::zeros(out_dim) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Returns `(dx, grads)` for upstream gradient `dy`.
    pub fn backward(&self, x: &Array2<T>, dy: &Array2<T>) -> (Array2<T>, Linear<T>) {
        let dx = dy.dot(&self.weight);
        let weight = dy.t().dot(x).as_standard_layout().into_owned();
        let grads = Linear { weight, bias: dy.sum_axis(Axis(0)) };
        (dx, grads)
    }
}

impl<T: Real> ParamSet<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_array2("weight", &self.weight, f);
        visit_array1("bias", &self.bias, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        f("weight", self.weight.as_slice_mut().unwrap());
        f("bias", self.bias.as_slice_mut().unwrap());
    }
}
