//! Multispectral sample model, quality control, normalization, partitioning,
//! augmentation and the synthetic dataset generator.

mod augment;
mod dataset;
mod io;
mod manifest;
mod normalize;
mod partition;
mod quality;
mod synth;

pub use augment::{apply_augment, augment, draw_augment, AugmentParams};
pub use dataset::{AccessEntry, AccessLog, Dataset};
pub use io::{load_band_image, save_png16, write_dataset};
pub use manifest::{DatasetManifest, ManifestRecord, Split};
pub use normalize::{compute_band_stats, resize_bilinear, to_model_input, BandStats};
pub use partition::partition_identity_disjoint;
pub use quality::{laplacian_variance, quality_filter, QualityReport, SATURATION_LEVEL};
pub use synth::{render_sample, synth_generate, BaseTexture, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the five NIR capture wavelengths, in nanometres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct SpectralBand(u16);

impl SpectralBand {
    pub const NM800: SpectralBand = SpectralBand(800);
    pub const NM830: SpectralBand = SpectralBand(830);
    pub const NM850: SpectralBand = SpectralBand(850);
    pub const NM870: SpectralBand = SpectralBand(870);
    pub const NM980: SpectralBand = SpectralBand(980);

    /// Canonical ascending order.
    pub const ALL: [SpectralBand; 5] =
        [Self::NM800, Self::NM830, Self::NM850, Self::NM870, Self::NM980];

    pub fn new(nm: u16) -> Result<Self> {
        Self::try_from(nm)
    }

    pub fn nm(self) -> u16 {
        self.0
    }

    /// Position in [`SpectralBand::ALL`].
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|b| *b == self).unwrap()
    }

    /// Parse a comma separated list such as `800,850`.
    pub fn parse_list(s: &str) -> Result<BTreeSet<SpectralBand>> {
        let mut out = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let nm: u16 = part
                .trim_end_matches("nm")
                .parse()
                .map_err(|_| Error::Config(format!("bad band `{part}`")))?;
            out.insert(SpectralBand::new(nm).map_err(|e| Error::Config(e.to_string()))?);
        }
        if out.is_empty() {
            return Err(Error::Config("empty band list".into()));
        }
        Ok(out)
    }
}

impl TryFrom<u16> for SpectralBand {
    type Error = Error;
    fn try_from(nm: u16) -> Result<Self> {
        match nm {
            800 | 830 | 850 | 870 | 980 => Ok(SpectralBand(nm)),
            _ => Err(Error::Input(format!("{nm} nm is not a capture band"))),
        }
    }
}

impl From<SpectralBand> for u16 {
    fn from(b: SpectralBand) -> u16 {
        b.0
    }
}

impl fmt::Display for SpectralBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Grayscale image, row-major, pixels nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl BandImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self { height, width, pixels: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.pixels[r * self.width + c]
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len().max(1) as f64
    }

    /// Both true: every pixel finite and inside `[0, 1]`.
    pub fn is_valid_range(&self) -> bool {
        self.pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p))
    }
}

/// Class label: bona fide presentation or attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    BonaFide = 0,
    Attack = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(Label::BonaFide),
            1 => Ok(Label::Attack),
            _ => Err(Error::Input(format!("label {i} outside {{0,1}}"))),
        }
    }
}

/// One capture event across up to five bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSample {
    pub id: String,
    pub images: BTreeMap<SpectralBand, BandImage>,
    pub label: Label,
    /// 0 for bona fide, 1..=8 for artefacts.
    pub artefact_id: u8,
    pub identity_id: String,
    pub band_mask: BTreeSet<SpectralBand>,
}

impl SpectralSample {
    pub fn new(
        id: impl Into<String>,
        images: BTreeMap<SpectralBand, BandImage>,
        artefact_id: u8,
        identity_id: impl Into<String>,
    ) -> Result<Self> {
        if artefact_id > 8 {
            return Err(Error::Input(format!("artefact id {artefact_id} outside 0..=8")));
        }
        let label = if artefact_id == 0 { Label::BonaFide } else { Label::Attack };
        let band_mask = images.keys().copied().collect();
        Ok(Self {
            id: id.into(),
            images,
            label,
            artefact_id,
            identity_id: identity_id.into(),
            band_mask,
        })
    }

    /// Drop bands from the mask; they stay in `images` for auditing.
    pub fn mask_out(&mut self, band: SpectralBand) {
        self.band_mask.remove(&band);
    }

    pub fn check_invariants(&self) -> Result<()> {
        if !self.band_mask.iter().all(|b| self.images.contains_key(b)) {
            return Err(Error::Input(format!("{}: mask names a band without an image", self.id)));
        }
        if (self.label == Label::BonaFide) != (self.artefact_id == 0) {
            return Err(Error::Input(format!("{}: label/artefact mismatch", self.id)));
        }
        Ok(())
    }

    /// The image for `band` if it is inside the validity mask.
    pub fn valid_image(&self, band: SpectralBand) -> Option<&BandImage> {
        if self.band_mask.contains(&band) {
            self.images.get(&band)
        } else {
            None
        }
    }
}
