use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Block, BlockCache, PatchCache, PatchEmbed, ParamSet, Real};
use crate::data::SpectralBand;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViTConfig {
    pub image_side: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Final blocks that are trained, one independent copy per band.
    pub trainable_last_blocks: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            image_side: 32,
            patch_size: 4,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4.0,
            trainable_last_blocks: 1,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || !self.image_side.is_multiple_of(self.patch_size) || self.image_side == 0 {
            return bad(format!("image side {} not divisible by patch {}", self.image_side, self.patch_size));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!("embed dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.trainable_last_blocks > self.depth {
            return bad(format!(
                "{} trainable blocks exceed depth {}",
                self.trainable_last_blocks, self.depth
            ));
        }
        if !(self.mlp_ratio > 0.0) {
            return bad("mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_side / self.patch_size).pow(2)
    }

    pub fn hidden_dim(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round() as usize
    }

    pub fn trunk_depth(&self) -> usize {
        self.depth - self.trainable_last_blocks
    }
}

/// `(N + 1) x d` token matrix; row 0 is the CLS token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T: Real>(pub Array2<T>);

impl<T: Real> TokenSequence<T> {
    pub fn new(tokens: Array2<T>) -> Result<Self> {
        if tokens.nrows() < 2 {
            return Err(Error::Dimension("token sequence needs a CLS and at least one patch".into()));
        }
        if !tokens.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite token".into()));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &Array2<T> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

/// Encoder parameters: frozen embedding and trunk, plus an independent copy
/// of the final blocks for every band.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTParams<T: Real> {
    pub config: ViTConfig,
    pub embed: PatchEmbed<T>,
    pub trunk: Vec<Block<T>>,
    pub band_blocks: BTreeMap<SpectralBand, Vec<Block<T>>>,
}

/// Activations needed by [`ViTParams::backward`].
#[derive(Debug, Clone)]
pub struct EncodeCache<T: Real> {
    band: SpectralBand,
    embed: Option<PatchCache<T>>,
    trunk: Option<Vec<BlockCache<T>>>,
    band_blocks: Vec<BlockCache<T>>,
}

impl<T: Real> EncodeCache<T> {
    pub fn band(&self) -> SpectralBand {
        self.band
    }
}

/// Gradients for every encoder tensor. Frozen tensors are always zero.
#[derive(Debug, Clone)]
pub struct ViTGrads<T: Real> {
    pub embed: PatchEmbed<T>,
    pub trunk: Vec<Block<T>>,
    pub band: SpectralBand,
    pub band_blocks: Vec<Block<T>>,
    /// Gradient with respect to the encoder's input token sequence, when requested.
    pub input: Option<Array2<T>>,
}

impl<T: Real> ViTParams<T> {
    /// Truncated-normal initialization. Every band starts from the same copy
    /// of the final blocks and diverges only through training.
    pub fn init<R: Rng + ?Sized>(config: &ViTConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, h, hid) = (config.embed_dim, config.heads, config.hidden_dim());
        let embed = PatchEmbed::init(rng, config.image_side, config.patch_size, d);
        let trunk = (0..config.trunk_depth()).map(|_| Block::init(rng, d, h, hid)).collect();
        let template: Vec<Block<T>> =
            (0..config.trainable_last_blocks).map(|_| Block::init(rng, d, h, hid)).collect();
        let band_blocks = SpectralBand::ALL.into_iter().map(|b| (b, template.clone())).collect();
        Ok(Self { config: config.clone(), embed, trunk, band_blocks })
    }

    /// All-zero weights (LayerNorm affine stays identity).
    pub fn zeros(config: &ViTConfig) -> Result<Self> {
        config.validate()?;
        let (d, h, hid) = (config.embed_dim, config.heads, config.hidden_dim());
        Ok(Self {
            config: config.clone(),
            embed: PatchEmbed::zeros(config.image_side, config.patch_size, d),
            trunk: (0..config.trunk_depth()).map(|_| Block::zeros(d, h, hid)).collect(),
            band_blocks: SpectralBand::ALL
                .into_iter()
                .map(|b| (b, (0..config.trainable_last_blocks).map(|_| Block::zeros(d, h, hid)).collect()))
                .collect(),
        })
    }

    pub fn patch_embed(&self, input: &Array3<T>) -> Result<TokenSequence<T>> {
        let (t, _) = self.embed.forward(input)?;
        TokenSequence::new(t)
    }

    fn blocks_for(&self, band: SpectralBand) -> Result<&Vec<Block<T>>> {
        self.band_blocks
            .get(&band)
            .ok_or_else(|| Error::Config(format!("no encoder blocks for band {band}")))
    }

    fn check_seq(&self, seq: &TokenSequence<T>) -> Result<()> {
        let want = (self.config.num_patches() + 1, self.config.embed_dim);
        if seq.0.dim() != want {
            return Err(Error::Dimension(format!("token sequence {:?}, expected {want:?}", seq.0.dim())));
        }
        Ok(())
    }

    /// Frozen part of the encoder only.
    pub fn trunk_forward(&self, seq: &TokenSequence<T>) -> Result<TokenSequence<T>> {
        self.check_seq(seq)?;
        let mut x = seq.0.clone();
        for b in &self.trunk {
            x = b.forward(&x);
        }
        Ok(TokenSequence(x))
    }

    /// Band-specific final blocks applied to a trunk output.
    pub fn band_forward(&self, trunk_out: &TokenSequence<T>, band: SpectralBand) -> Result<TokenSequence<T>> {
        let blocks = self.blocks_for(band)?;
        let mut x = trunk_out.0.clone();
        for b in blocks {
            x = b.forward(&x);
        }
        TokenSequence::new(x)
    }

    /// Full encoder `X^0 -> X^L` for one band.
    pub fn encode(&self, seq: &TokenSequence<T>, band: SpectralBand) -> Result<TokenSequence<T>> {
        self.blocks_for(band)?;
        let t = self.trunk_forward(seq)?;
        self.band_forward(&t, band)
    }

    /// Band blocks with cached activations; the trunk output is taken as given.
    pub fn band_forward_cached(
        &self,
        trunk_out: &TokenSequence<T>,
        band: SpectralBand,
    ) -> Result<(TokenSequence<T>, EncodeCache<T>)> {
        let blocks = self.blocks_for(band)?;
        let mut x = trunk_out.0.clone();
        let mut caches = Vec::with_capacity(blocks.len());
        for b in blocks {
            let (y, c) = b.forward_cached(&x);
            caches.push(c);
            x = y;
        }
        Ok((TokenSequence::new(x)?, EncodeCache { band, embed: None, trunk: None, band_blocks: caches }))
    }

    /// Encoder with every activation cached, so [`ViTParams::backward`] can
    /// also return the gradient with respect to the input sequence.
    pub fn encode_cached(&self, seq: &TokenSequence<T>, band: SpectralBand) -> Result<(TokenSequence<T>, EncodeCache<T>)> {
        self.check_seq(seq)?;
        let mut x = seq.0.clone();
        let mut trunk = Vec::with_capacity(self.trunk.len());
        for b in &self.trunk {
            let (y, c) = b.forward_cached(&x);
            trunk.push(c);
            x = y;
        }
        let (out, mut cache) = self.band_forward_cached(&TokenSequence(x), band)?;
        cache.trunk = Some(trunk);
        Ok((out, cache))
    }

    /// Image to `X^L`, caching from the patch projection onwards.
    pub fn forward_image_cached(&self, input: &Array3<T>, band: SpectralBand) -> Result<(TokenSequence<T>, EncodeCache<T>)> {
        let (t, pc) = self.embed.forward(input)?;
        let (out, mut cache) = self.encode_cached(&TokenSequence::new(t)?, band)?;
        cache.embed = Some(pc);
        Ok((out, cache))
    }

    /// Gradients of the band blocks plus the gradient reaching the trunk output.
    pub fn backward_band(&self, cache: &EncodeCache<T>, dout: &Array2<T>) -> Result<(Vec<Block<T>>, Array2<T>)> {
        let blocks = self.blocks_for(cache.band)?;
        if cache.band_blocks.len() != blocks.len() {
            return Err(Error::State("encode cache does not match the band blocks".into()));
        }
        let mut g = dout.clone();
        let mut grads = Vec::with_capacity(blocks.len());
        for (b, c) in blocks.iter().zip(&cache.band_blocks).rev() {
            let (dx, gb) = b.backward(c, &g);
            grads.push(gb);
            g = dx;
        }
        grads.reverse();
        Ok((grads, g))
    }

    /// Reverse pass. Frozen tensors (embedding, trunk) receive zero gradient;
    /// the input gradient is returned when the trunk was cached.
    pub fn backward(&self, cache: &EncodeCache<T>, dout: &Array2<T>) -> Result<ViTGrads<T>> {
        let (band_grads, mut g) = self.backward_band(cache, dout)?;
        let input = match &cache.trunk {
            Some(tc) => {
                for (b, c) in self.trunk.iter().zip(tc).rev() {
                    g = b.backward(c, &g).0;
                }
                Some(g)
            }
            None => None,
        };
        Ok(ViTGrads {
            embed: super::zeros_like(&self.embed),
            trunk: self.trunk.iter().map(super::zeros_like).collect(),
            band: cache.band,
            band_blocks: band_grads,
            input,
        })
    }

    /// Unfrozen gradients for every layer on the cached path, including the
    /// patch embedding. Used by gradient checks; training never calls it.
    pub fn backward_all(&self, cache: &EncodeCache<T>, dout: &Array2<T>) -> Result<(PatchEmbed<T>, Vec<Block<T>>, Vec<Block<T>>)> {
        let (band_grads, mut g) = self.backward_band(cache, dout)?;
        let tc = cache.trunk.as_ref().ok_or_else(|| Error::State("trunk activations were not cached".into()))?;
        let mut trunk_grads = Vec::with_capacity(tc.len());
        for (b, c) in self.trunk.iter().zip(tc).rev() {
            let (dx, gb) = b.backward(c, &g);
            trunk_grads.push(gb);
            g = dx;
        }
        trunk_grads.reverse();
        let pc = cache.embed.as_ref().ok_or_else(|| Error::State("patch activations were not cached".into()))?;
        Ok((self.embed.backward(pc, &g), trunk_grads, band_grads))
    }

    /// Global block index of the first band-specific block.
    pub fn first_band_block(&self) -> usize {
        self.trunk.len()
    }

    /// Trunk and embedding tensors under their checkpoint names.
    pub fn visit_frozen(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        super::visit_prefixed(&self.embed, "embed", f);
        for (i, b) in self.trunk.iter().enumerate() {
            super::visit_prefixed(b, &format!("trunk.block{i}"), f);
        }
    }

    /// One band's trainable blocks under their checkpoint names.
    pub fn visit_band(&self, band: SpectralBand, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        if let Some(blocks) = self.band_blocks.get(&band) {
            for (j, b) in blocks.iter().enumerate() {
                let idx = self.first_band_block() + j;
                super::visit_prefixed(b, &format!("band{}.block{idx}", band.nm()), f);
            }
        }
    }

    /// Copy tensors whose names follow the encoder naming scheme. Returns the
    /// names that were imported; unknown names are ignored. Shapes must match
    /// exactly: positional embeddings are not interpolated.
    pub fn import_named(&mut self, tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<Vec<String>> {
        let mut imported = Vec::new();
        let mut error = None;
        self.visit_mut(&mut |name, dst| {
            if let Some((shape, data)) = tensors.get(name) {
                if data.len() != dst.len() {
                    error.get_or_insert_with(|| {
                        Error::Dimension(format!("{name}: {} values for a {}-element tensor (shape {shape:?})", data.len(), dst.len()))
                    });
                    return;
                }
                for (d, s) in dst.iter_mut().zip(data) {
                    *d = T::lit(*s as f64);
                }
                imported.push(name.to_string());
            }
        });
        match error {
            Some(e) => Err(e),
            None => Ok(imported),
        }
    }
}

impl<T: Real> ParamSet<T> for ViTParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.visit_frozen(f);
        for band in self.band_blocks.keys() {
            self.visit_band(*band, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        super::visit_mut_prefixed(&mut self.embed, "embed", f);
        for (i, b) in self.trunk.iter_mut().enumerate() {
            super::visit_mut_prefixed(b, &format!("trunk.block{i}"), f);
        }
        let first = self.trunk.len();
        for (band, blocks) in self.band_blocks.iter_mut() {
            for (j, b) in blocks.iter_mut().enumerate() {
                super::visit_mut_prefixed(b, &format!("band{}.block{}", band.nm(), first + j), f);
            }
        }
    }
}
