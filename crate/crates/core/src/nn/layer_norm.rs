use ndarray::{Array1, Array2, Axis};

use super::{visit_array1, ParamSet, Real};

pub const LN_EPS: f64 = 1e-5;

/// Row-wise LayerNorm with population variance and ε inside the root.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T: Real> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T: Real> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Real> LayerNormCache<T> {
    /// Normalized input before the affine map.
    pub fn normalized(&self) -> &Array2<T> {
        &self.xhat
    }
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Array1::ones(dim), beta: Array1::zeros(dim) }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let d = T::lit(x.ncols() as f64);
        let eps = T::lit(LN_EPS);
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d;
            let s = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * s);
            *is = s;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Array2<T>) -> (Array2<T>, LayerNorm<T>) {
        let d = T::lit(dy.ncols() as f64);
        let grads = LayerNorm {
            gamma: (dy * &cache.xhat).sum_axis(Axis(0)),
            beta: dy.sum_axis(Axis(0)),
        };
        let dxhat = dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let g = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let sum_g = g.sum();
            let sum_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
            let s = cache.inv_std[i] / d;
            for j in 0..dy.ncols() {
                dx[[i, j]] = s * (d * g[j] - sum_g - xh[j] * sum_gx);
            }
        }
        (dx, grads)
    }
}

impl<T: Real> ParamSet<T> for LayerNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        visit_array1("weight", &self.gamma, f);
        visit_array1("bias", &self.beta, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        f("weight", self.gamma.as_slice_mut().unwrap());
        f("bias", self.beta.as_slice_mut().unwrap());
    }
}
