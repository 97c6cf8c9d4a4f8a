use ndarray::Array2;
use rand::Rng;

use super::{Linear, ParamSet, Real};

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT2))
}

pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Real> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T: Real> {
    x: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

impl<T: Real> Mlp<T> {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self { fc1: Linear::zeros(hidden, dim), fc2: Linear::zeros(dim, hidden) }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, hidden: usize) -> Self {
        Self { fc1: Linear::init(rng, hidden, dim), fc2: Linear::init(rng, dim, hidden) }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, MlpCache<T>) {
        let pre = self.fc1.forward(x);
        let act = pre.mapv(|v| T::lit(gelu(v.as_f64())));
        let y = self.fc2.forward(&act);
        (y, MlpCache { x: x.clone(), pre, act })
    }

    pub fn backward(&self, cache: &MlpCache<T>, dy: &Array2<T>) -> (Array2<T>, Mlp<T>) {
        let (dact, g2) = self.fc2.backward(&cache.act, dy);
        let dpre = &dact * &cache.pre.mapv(|v| T::lit(gelu_grad(v.as_f64())));
        let (dx, g1) = self.fc1.backward(&cache.x, &dpre);
        (dx, Mlp { fc1: g1, fc2: g2 })
    }
}

impl<T: Real> ParamSet<T> for Mlp<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        super::visit_prefixed(&self.fc1, "fc1", f);
        super::visit_prefixed(&self.fc2, "fc2", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        super::visit_mut_prefixed(&mut self.fc1, "fc1", f);
        super::visit_mut_prefixed(&mut self.fc2, "fc2", f);
    }
}
