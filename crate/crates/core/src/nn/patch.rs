use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;

use super::{trunc_normal2, visit_array1, visit_array2, Linear, ParamSet, Real};
use crate::error::{dim, Result};

/// Non-overlapping patch projection, CLS token and learned positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbed<T: Real> {
    pub patch_size: usize,
    /// `(d, 3 P P)`, input features ordered channel, row, column.
    pub proj: Linear<T>,
    pub cls_token: Array1<T>,
    /// `(N + 1, d)`; row 0 belongs to the CLS token.
    pub pos_embed: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct PatchCache<T: Real> {
    patches: Array2<T>,
}

impl<T: Real> PatchEmbed<T> {
    pub fn zeros(image_side: usize, patch_size: usize, dim: usize) -> Self {
        let n = (image_side / patch_size).pow(2);
        Self {
            patch_size,
            proj: Linear::zeros(dim, 3 * patch_size * patch_size),
            cls_token: Array1::zeros(dim),
            pos_embed: Array2::zeros((n + 1, dim)),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, image_side: usize, patch_size: usize, dim: usize) -> Self {
        let n = (image_side / patch_size).pow(2);
        Self {
            patch_size,
            proj: Linear::init(rng, dim, 3 * patch_size * patch_size),
            cls_token: Array1::zeros(dim),
            pos_embed: trunc_normal2(rng, (n + 1, dim), 0.02),
        }
    }

    pub fn num_patches(&self) -> usize {
        self.pos_embed.nrows() - 1
    }

    /// Rows are patches in row-major grid order.
    pub fn extract_patches(&self, input: &Array3<T>) -> Result<Array2<T>> {
        let p = self.patch_size;
        let (c, h, w) = input.dim();
        if c != 3 || h != w || h % p != 0 || (h / p).pow(2) != self.num_patches() {
            return Err(dim(format!(
                "input {c}x{h}x{w} does not fit {} patches of side {p}",
                self.num_patches()
            )));
        }
        let g = h / p;
        let mut patches = Array2::zeros((g * g, 3 * p * p));
        for gr in 0..g {
            for gc in 0..g {
                let mut row = patches.row_mut(gr * g + gc);
                let block = input.slice(s![.., gr * p..(gr + 1) * p, gc * p..(gc + 1) * p]);
                for (dst, src) in row.iter_mut().zip(block.iter()) {
                    *dst = *src;
                }
            }
        }
        Ok(patches)
    }

    pub fn forward(&self, input: &Array3<T>) -> Result<(Array2<T>, PatchCache<T>)> {
        let patches = self.extract_patches(input)?;
        let projected = self.proj.forward(&patches);
        let d = self.cls_token.len();
        let mut tokens = Array2::zeros((patches.nrows() + 1, d));
        tokens.row_mut(0).assign(&self.cls_token);
        tokens.slice_mut(s![1.., ..]).assign(&projected);
        tokens += &self.pos_embed;
        Ok((tokens, PatchCache { patches }))
    }

    pub fn backward(&self, cache: &PatchCache<T>, dtokens: &Array2<T>) -> PatchEmbed<T> {
        let dproj_out = dtokens.slice(s![1.., ..]).to_owned();
        let (_, g_proj) = self.proj.backward(&cache.patches, &dproj_out);
        PatchEmbed {
            patch_size: self.patch_size,
            proj: g_proj,
            cls_token: dtokens.index_axis(Axis(0), 0).to_owned(),
            pos_embed: dtokens.clone(),
        }
    }
}

impl<T: Real> ParamSet<T> for PatchEmbed<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        super::visit_prefixed(&self.proj, "patch_proj", f);
        visit_array1("cls_token", &self.cls_token, f);
        visit_array2("pos_embed", &self.pos_embed, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        super::visit_mut_prefixed(&mut self.proj, "patch_proj", f);
        f("cls_token", self.cls_token.as_slice_mut().unwrap());
        f("pos_embed", self.pos_embed.as_slice_mut().unwrap());
    }
}
