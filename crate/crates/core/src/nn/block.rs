use ndarray::Array2;
use rand::Rng;

use super::{Attention, AttentionCache, LayerNorm, LayerNormCache, Mlp, MlpCache, ParamSet, Real};

/// Pre-norm transformer block: `h = x + attn(norm1(x))`, `y = h + mlp(norm2(h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T: Real> {
    pub norm1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T: Real> {
    n1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    n2: LayerNormCache<T>,
    mlp: MlpCache<T>,
}

impl<T: Real> Block<T> {
    pub fn zeros(dim: usize, heads: usize, hidden: usize) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            attn: Attention::zeros(dim, heads),
            norm2: LayerNorm::new(dim),
            mlp: Mlp::zeros(dim, hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize, hidden: usize) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            attn: Attention::init(rng, dim, heads),
            norm2: LayerNorm::new(dim),
            mlp: Mlp::init(rng, dim, hidden),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array2<T>) -> (Array2<T>, BlockCache<T>) {
        let (a_in, n1) = self.norm1.forward(x);
        let (a_out, attn) = self.attn.forward(&a_in);
        let h = x + &a_out;
        let (m_in, n2) = self.norm2.forward(&h);
        let (m_out, mlp) = self.mlp.forward(&m_in);
        (h + &m_out, BlockCache { n1, attn, n2, mlp })
    }

    pub fn backward(&self, cache: &BlockCache<T>, dy: &Array2<T>) -> (Array2<T>, Block<T>) {
        let (dm_in, g_mlp) = self.mlp.backward(&cache.mlp, dy);
        let (dh_norm, g_n2) = self.norm2.backward(&cache.n2, &dm_in);
        let dh = dy + &dh_norm;
        let (da_in, g_attn) = self.attn.backward(&cache.attn, &dh);
        let (dx_norm, g_n1) = self.norm1.backward(&cache.n1, &da_in);
        (dh + &dx_norm, Block { norm1: g_n1, attn: g_attn, norm2: g_n2, mlp: g_mlp })
    }
}

impl<T: Real> ParamSet<T> for Block<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        super::visit_prefixed(&self.norm1, "norm1", f);
        super::visit_prefixed(&self.attn, "attn", f);
        super::visit_prefixed(&self.norm2, "norm2", f);
        super::visit_prefixed(&self.mlp, "mlp", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        super::visit_mut_prefixed(&mut self.norm1, "norm1", f);
        super::visit_mut_prefixed(&mut self.attn, "attn", f);
        super::visit_mut_prefixed(&mut self.norm2, "norm2", f);
        super::visit_mut_prefixed(&mut self.mlp, "mlp", f);
    }
}

impl<T: Real> ParamSet<T> for Vec<Block<T>> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        for (i, b) in self.iter().enumerate() {
            super::visit_prefixed(b, &format!("block{i}"), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, b) in self.iter_mut().enumerate() {
            super::visit_mut_prefixed(b, &format!("block{i}"), f);
        }
    }
}
