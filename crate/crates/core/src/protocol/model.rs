//! The trained detector: encoder, band heads, input statistics, fusion
//! weights and the development threshold, plus shared scoring.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array3};

use crate::data::{to_model_input, BandImage, BandStats, SpectralBand, SpectralSample};
use crate::ensemble::{fuse, EnsembleWeights, FusedDecision, ThresholdMode};
use crate::error::{Error, Result};
use crate::head::{BandHeadParams, HeadFlags, HeadOutput, Mode};
use crate::nn::{visit_mut_prefixed, TokenSequence, ViTConfig, ViTParams};

/// Named `f32` tensor, the unit of checkpoint storage.
pub type NamedTensors = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct PadModel {
    pub encoder: ViTParams<f32>,
    pub heads: BTreeMap<SpectralBand, BandHeadParams<f32>>,
    /// Pixel statistics used to standardize each band's input.
    pub input_stats: BTreeMap<SpectralBand, BandStats>,
    pub ensemble: EnsembleWeights,
    /// Fused-score equal-error threshold on the development split.
    pub dev_threshold: f64,
}

/// Fused score of one sample. `decision` is `None` when no usable band
/// remains; such samples are scored as attacks.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub sample_id: String,
    pub artefact_id: u8,
    pub label: u8,
    pub p_attack: f64,
    pub bands_used: BTreeSet<SpectralBand>,
}

impl PadModel {
    pub fn flags(&self) -> Option<HeadFlags> {
        self.heads.values().next().map(|h| h.flags)
    }

    pub fn threshold(&self, mode: ThresholdMode) -> f64 {
        match mode {
            ThresholdMode::Fixed => 0.5,
            ThresholdMode::Dev => self.dev_threshold,
        }
    }

    pub fn input(&self, image: &BandImage, band: SpectralBand) -> Result<Array3<f32>> {
        let stats = self
            .input_stats
            .get(&band)
            .ok_or_else(|| Error::State(format!("no input statistics for band {band}")))?;
        to_model_input(image, stats, self.encoder.config.image_side)
    }

    pub fn trunk(&self, image: &BandImage, band: SpectralBand) -> Result<TokenSequence<f32>> {
        let x = self.input(image, band)?;
        self.encoder.trunk_forward(&self.encoder.patch_embed(&x)?)
    }

    /// Eval-mode head output for one band image.
    pub fn band_output(&self, image: &BandImage, band: SpectralBand) -> Result<HeadOutput<f32>> {
        let head = self.heads.get(&band).ok_or_else(|| Error::State(format!("no head for band {band}")))?;
        let t = self.trunk(image, band)?;
        let enc = self.encoder.band_forward(&t, band)?;
        head.forward(&enc, Mode::Eval, 0)
    }

    /// Bands of `sample` that are valid, have a head, and lie in `restrict`.
    pub fn usable_bands(&self, sample: &SpectralSample, restrict: Option<&BTreeSet<SpectralBand>>) -> BTreeSet<SpectralBand> {
        sample
            .band_mask
            .iter()
            .copied()
            .filter(|b| self.heads.contains_key(b) && restrict.is_none_or(|r| r.contains(b)))
            .collect()
    }

    pub fn band_probs(
        &self,
        sample: &SpectralSample,
        restrict: Option<&BTreeSet<SpectralBand>>,
    ) -> Result<BTreeMap<SpectralBand, [f64; 2]>> {
        let mut out = BTreeMap::new();
        for b in self.usable_bands(sample, restrict) {
            let img = sample.valid_image(b).expect("usable band has an image");
            out.insert(b, self.band_output(img, b)?.class.probs);
        }
        Ok(out)
    }

    /// Mask-aware fused decision, `None` when no band is usable.
    pub fn fuse_sample(
        &self,
        sample: &SpectralSample,
        restrict: Option<&BTreeSet<SpectralBand>>,
    ) -> Result<Option<FusedDecision>> {
        let probs = self.band_probs(sample, restrict)?;
        if probs.is_empty() {
            return Ok(None);
        }
        let mask: BTreeSet<SpectralBand> = probs.keys().copied().collect();
        fuse(&probs, &self.ensemble, &mask).map(Some)
    }

    pub fn score(&self, sample: &SpectralSample, restrict: Option<&BTreeSet<SpectralBand>>) -> Result<SampleScore> {
        let fused = self.fuse_sample(sample, restrict)?;
        let (p_attack, bands_used) = match fused {
            Some(f) => (f.p_ens[1], f.bands_used),
            None => (1.0, BTreeSet::new()),
        };
        Ok(SampleScore {
            sample_id: sample.id.clone(),
            artefact_id: sample.artefact_id,
            label: sample.label as u8,
            p_attack,
            bands_used,
        })
    }

    /// Every stored value under its checkpoint name.
    pub fn to_tensors(&self) -> NamedTensors {
        let mut out = NamedTensors::new();
        let mut put = |n: &str, s: &[usize], d: &[f32]| {
            out.insert(n.to_string(), (s.to_vec(), d.to_vec()));
        };
        self.encoder.visit_frozen(&mut put);
        for band in self.heads.keys() {
            self.encoder.visit_band(*band, &mut put);
        }
        for head in self.heads.values() {
            head.visit_all(&mut put);
        }
        let scalar = |v: f64| (vec![1], vec![v as f32]);
        for (b, s) in &self.input_stats {
            out.insert(format!("data.band{}.mean", b.nm()), scalar(s.mean));
            out.insert(format!("data.band{}.std", b.nm()), scalar(s.std));
        }
        for b in SpectralBand::ALL {
            out.insert(format!("ensemble.acc.{}", b.nm()), scalar(self.ensemble.acc[&b]));
            out.insert(format!("ensemble.w.{}", b.nm()), scalar(self.ensemble.w[&b]));
        }
        out.insert("eval.dev_threshold".into(), scalar(self.dev_threshold));
        out
    }

    /// Rebuild from named tensors. Bands are those with a stored head; every
    /// tensor the model needs must be present with the right shape.
    pub fn from_tensors(config: &ViTConfig, flags: HeadFlags, tensors: &NamedTensors) -> Result<Self> {
        let mut encoder = ViTParams::<f32>::zeros(config)?;
        let bands: Vec<SpectralBand> = SpectralBand::ALL
            .into_iter()
            .filter(|b| tensors.contains_key(&format!("head.band{}.cls.weight", b.nm())))
            .collect();
        if bands.is_empty() {
            return Err(Error::Format("no band heads stored".into()));
        }
        encoder.band_blocks.retain(|b, _| bands.contains(b));
        let imported = encoder.import_named(tensors)?;
        let mut want = Vec::new();
        encoder.visit_frozen(&mut |n, _, _| want.push(n.to_string()));
        for b in &bands {
            encoder.visit_band(*b, &mut |n, _, _| want.push(n.to_string()));
        }
        if let Some(missing) = want.iter().find(|n| !imported.contains(n)) {
            return Err(Error::Format(format!("missing tensor {missing}")));
        }

        let scalar = |name: String| -> Result<f64> {
            match tensors.get(&name) {
                Some((_, d)) if d.len() == 1 => Ok(d[0] as f64),
                Some(_) => Err(Error::Format(format!("{name} is not a scalar"))),
                None => Err(Error::Format(format!("missing tensor {name}"))),
            }
        };
        let vector = |name: String, dim: usize| -> Result<Array1<f32>> {
            match tensors.get(&name) {
                Some((_, d)) if d.len() == dim => Ok(Array1::from(d.clone())),
                Some((s, _)) => Err(Error::Format(format!("{name} has shape {s:?}, expected [{dim}]"))),
                None => Err(Error::Format(format!("missing tensor {name}"))),
            }
        };

        let dim = config.embed_dim;
        let mut heads = BTreeMap::new();
        let mut input_stats = BTreeMap::new();
        for &b in &bands {
            let prefix = format!("head.band{}", b.nm());
            let mut head = BandHeadParams::<f32>::init(&mut crate::rng::rng_from(0), b, dim, flags, 0.0);
            let mut err = None;
            visit_mut_prefixed(&mut head, &prefix, &mut |n, dst| match tensors.get(n) {
                Some((_, d)) if d.len() == dst.len() => dst.copy_from_slice(d),
                Some((s, _)) => {
                    err.get_or_insert(Error::Format(format!("{n}: shape {s:?} does not fit {} values", dst.len())));
                }
                None => {
                    err.get_or_insert(Error::Format(format!("missing tensor {n}")));
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            head.p_k = scalar(format!("{prefix}.p_k"))?;
            head.feat_mu = vector(format!("{prefix}.feat_mu"), dim)?;
            head.feat_sigma = vector(format!("{prefix}.feat_sigma"), dim)?;
            heads.insert(b, head);
            input_stats.insert(
                b,
                BandStats { band: b, mean: scalar(format!("data.band{}.mean", b.nm()))?, std: scalar(format!("data.band{}.std", b.nm()))? },
            );
        }
        let mut acc = BTreeMap::new();
        let mut w = BTreeMap::new();
        for b in SpectralBand::ALL {
            acc.insert(b, scalar(format!("ensemble.acc.{}", b.nm()))?);
            w.insert(b, scalar(format!("ensemble.w.{}", b.nm()))?);
        }
        Ok(Self {
            encoder,
            heads,
            input_stats,
            ensemble: EnsembleWeights { acc, w },
            dev_threshold: scalar("eval.dev_threshold".into())?,
        })
    }

    /// The model exactly as a checkpoint would restore it.
    pub fn quantized(&self) -> Result<Self> {
        let flags = self.flags().ok_or_else(|| Error::State("model has no heads".into()))?;
        Self::from_tensors(&self.encoder.config, flags, &self.to_tensors())
    }

    /// Number of trainable values for one band (head plus band blocks).
    pub fn trainable_len(&self, band: SpectralBand) -> usize {
        let mut n = self.heads.get(&band).map_or(0, crate::nn::num_params);
        self.encoder.visit_band(band, &mut |_, _, d| n += d.len());
        n
    }
}
