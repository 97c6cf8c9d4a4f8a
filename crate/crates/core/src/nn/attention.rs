use ndarray::{s, Array2};
use rand::Rng;

use super::{softmax_rows, Linear, ParamSet, Real};

/// Multi-head self-attention with a fused QKV projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T: Real> {
    pub heads: usize,
    /// `(3d, d)`: output columns are `[q | k | v]`.
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T: Real> {
    x: Array2<T>,
    qkv: Array2<T>,
    /// Attention probabilities per head, each `(n, n)`.
    probs: Vec<Array2<T>>,
    merged: Array2<T>,
}

impl<T: Real> AttentionCache<T> {
    pub fn probs(&self) -> &[Array2<T>] {
        &self.probs
    }
}

impl<T: Real> Attention<T> {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self { heads, qkv: Linear::zeros(3 * dim, dim), proj: Linear::zeros(dim, dim) }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize) -> Self {
        Self { heads, qkv: Linear::init(rng, 3 * dim, dim), proj: Linear::init(rng, dim, dim) }
    }

    fn dim(&self) -> usize {
        self.proj.out_dim()
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, AttentionCache<T>) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let qkv = self.qkv.forward(x);
        let mut merged = Array2::zeros((x.nrows(), d));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut a = q.dot(&k.t());
            a.mapv_inplace(|e| e * scale);
            softmax_rows(&mut a);
            merged.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&a.dot(&v));
            probs.push(a);
        }
        let y = self.proj.forward(&merged);
        (y, AttentionCache { x: x.clone(), qkv, probs, merged })
    }

    pub fn backward(&self, cache: &AttentionCache<T>, dy: &Array2<T>) -> (Array2<T>, Attention<T>) {
        let d = self.dim();
        let dh = d / self.heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let (dmerged, g_proj) = self.proj.backward(&cache.merged, dy);
        let mut dqkv = Array2::zeros(cache.qkv.raw_dim());
        for h in 0..self.heads {
            let (qs, ks, vs) = (h * dh, d + h * dh, 2 * d + h * dh);
            let q = cache.qkv.slice(s![.., qs..qs + dh]);
            let k = cache.qkv.slice(s![.., ks..ks + dh]);
            let v = cache.qkv.slice(s![.., vs..vs + dh]);
            let a = &cache.probs[h];
            let dout = dmerged.slice(s![.., h * dh..(h + 1) * dh]);
            let da = dout.dot(&v.t());
            let dv = a.t().dot(&dout);
            // Softmax backward, row by row.
            let mut ds = Array2::zeros(a.raw_dim());
            for i in 0..a.nrows() {
                let dot: T = a.row(i).iter().zip(da.row(i).iter()).map(|(&p, &g)| p * g).sum();
                for j in 0..a.ncols() {
                    ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot) * scale;
                }
            }
            dqkv.slice_mut(s![.., qs..qs + dh]).assign(&ds.dot(&k));
            dqkv.slice_mut(s![.., ks..ks + dh]).assign(&ds.t().dot(&q));
            dqkv.slice_mut(s![.., vs..vs + dh]).assign(&dv);
        }
        let (dx, g_qkv) = self.qkv.backward(&cache.x, &dqkv);
        (dx, Attention { heads: self.heads, qkv: g_qkv, proj: g_proj })
    }
}

impl<T: Real> ParamSet<T> for Attention<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        super::visit_prefixed(&self.qkv, "qkv", f);
        super::visit_prefixed(&self.proj, "proj", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        super::visit_mut_prefixed(&mut self.qkv, "qkv", f);
        super::visit_mut_prefixed(&mut self.proj, "proj", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Scalar-by-scalar single-head attention for d = 2.
    #[test]
    fn single_head_matches_scalar_oracle() {
        let mut att = Attention::<f64>::zeros(2, 1);
        // q = x W_q^T etc, hand-chosen weights.
        let wq = [[1.0, 0.5], [-0.3, 0.8]];
        let wk = [[0.2, -1.0], [0.7, 0.1]];
        let wv = [[0.4, 0.0], [0.3, -0.6]];
        for i in 0..2 {
            for j in 0..2 {
                att.qkv.weight[[i, j]] = wq[i][j];
                att.qkv.weight[[2 + i, j]] = wk[i][j];
                att.qkv.weight[[4 + i, j]] = wv[i][j];
            }
        }
        att.proj.weight = array![[1.0, 0.0], [0.0, 1.0]];
        let x = array![[0.5, -1.0], [2.0, 0.25]];
        let (y, _) = att.forward(&x);

        let lin = |w: &[[f64; 2]; 2], r: usize| [w[0][0] * x[[r, 0]] + w[0][1] * x[[r, 1]], w[1][0] * x[[r, 0]] + w[1][1] * x[[r, 1]]];
        let q: Vec<[f64; 2]> = (0..2).map(|r| lin(&wq, r)).collect();
        let k: Vec<[f64; 2]> = (0..2).map(|r| lin(&wk, r)).collect();
        let v: Vec<[f64; 2]> = (0..2).map(|r| lin(&wv, r)).collect();
        for i in 0..2 {
            let s: Vec<f64> = (0..2).map(|j| (q[i][0] * k[j][0] + q[i][1] * k[j][1]) / 2f64.sqrt()).collect();
            let e: Vec<f64> = s.iter().map(|z| z.exp()).collect();
            let z = e[0] + e[1];
            for c in 0..2 {
                let want = (e[0] * v[0][c] + e[1] * v[1][c]) / z;
                assert!((y[[i, c]] - want).abs() < 1e-6);
            }
        }
    }
}
