//! Accuracy-weighted, mask-aware probability fusion across bands.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::SpectralBand;
use crate::error::{Error, Result};

/// Fraction of `preds` equal to `labels`.
pub fn band_accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() {
        return Err(Error::Protocol("band accuracy needs at least one development sample".into()));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Per-band development accuracy and normalized fusion weight. Every band in
/// [`SpectralBand::ALL`] has an entry; absent bands carry weight 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub acc: BTreeMap<SpectralBand, f64>,
    pub w: BTreeMap<SpectralBand, f64>,
}

impl EnsembleWeights {
    pub fn weight(&self, band: SpectralBand) -> f64 {
        self.w.get(&band).copied().unwrap_or(0.0)
    }

    /// Round-trip through `f32`, the checkpoint storage type.
    pub fn quantized(&self) -> Self {
        let q = |m: &BTreeMap<SpectralBand, f64>| m.iter().map(|(b, v)| (*b, *v as f32 as f64)).collect();
        Self { acc: q(&self.acc), w: q(&self.w) }
    }
}

/// `w_k = acc_k / Σ acc`; uniform over the present bands when every accuracy is 0.
pub fn band_weights(accs: &BTreeMap<SpectralBand, f64>) -> EnsembleWeights {
    let total: f64 = accs.values().sum();
    let mut acc = BTreeMap::new();
    let mut w = BTreeMap::new();
    for band in SpectralBand::ALL {
        match accs.get(&band) {
            Some(&a) => {
                acc.insert(band, a);
                w.insert(band, if total > 0.0 { a / total } else { 1.0 / accs.len() as f64 });
            }
            None => {
                acc.insert(band, 0.0);
                w.insert(band, 0.0);
            }
        }
    }
    EnsembleWeights { acc, w }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDecision {
    /// `(p_bona_fide, p_attack)`.
    pub p_ens: [f64; 2],
    pub pred: u8,
    /// Bands that contributed with nonzero weight.
    pub bands_used: BTreeSet<SpectralBand>,
}

/// `P_ens = Σ_{k∈mask} w_k P_k / Σ_{k∈mask} w_k`. Bands outside the mask or
/// without probabilities are ignored; zero total weight inside the mask falls
/// back to uniform.
pub fn fuse(
    probs: &BTreeMap<SpectralBand, [f64; 2]>,
    weights: &EnsembleWeights,
    mask: &BTreeSet<SpectralBand>,
) -> Result<FusedDecision> {
    let bands: Vec<SpectralBand> = mask.iter().copied().filter(|b| probs.contains_key(b)).collect();
    if bands.is_empty() {
        return Err(Error::Fusion("no band in the mask has probabilities".into()));
    }
    let total: f64 = bands.iter().map(|b| weights.weight(*b)).sum();
    let norm: Vec<(SpectralBand, f64)> = if total > 0.0 {
        bands.iter().map(|b| (*b, weights.weight(*b) / total)).filter(|(_, w)| *w > 0.0).collect()
    } else {
        let u = 1.0 / bands.len() as f64;
        bands.iter().map(|b| (*b, u)).collect()
    };
    let mut p_ens = [0.0; 2];
    for (b, w) in &norm {
        let p = probs[b];
        p_ens[0] += w * p[0];
        p_ens[1] += w * p[1];
    }
    Ok(FusedDecision { p_ens, pred: decide_unchecked(p_ens, 0.5), bands_used: norm.into_iter().map(|(b, _)| b).collect() })
}

fn decide_unchecked(p_ens: [f64; 2], threshold: f64) -> u8 {
    u8::from(p_ens[1] >= threshold)
}

/// Attack (1) iff `p_attack >= threshold`.
pub fn decide(p_ens: [f64; 2], threshold: f64) -> Result<u8> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(decide_unchecked(p_ens, threshold))
}

/// Operating threshold selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// The fixed 0.5 rule.
    #[default]
    Fixed,
    /// The equal-error threshold on the development split.
    Dev,
}

impl ThresholdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdMode::Fixed => "fixed",
            ThresholdMode::Dev => "dev",
        }
    }
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "dev" => Ok(Self::Dev),
            _ => Err(Error::Config(format!("threshold mode must be fixed or dev, got {s:?}"))),
        }
    }
}
