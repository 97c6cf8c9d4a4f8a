use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{BandImage, SpectralBand};
use crate::error::{Error, Result};
use crate::nn::Real;

/// Floor applied to every standard deviation we divide by.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-band pixel statistics computed on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub band: SpectralBand,
    pub mean: f64,
    pub std: f64,
}

/// Global pixel mean and population standard deviation over every training
/// image of one band.
pub fn compute_band_stats(train_images: &[&BandImage], band: SpectralBand) -> Result<BandStats> {
    if train_images.is_empty() {
        return Err(Error::EmptyInput(format!("no training images for band {band}")));
    }
    let n: usize = train_images.iter().map(|i| i.pixels().len()).sum();
    if n == 0 {
        return Err(Error::EmptyInput(format!("training images for band {band} are empty")));
    }
    // Two passes keep the variance exact enough for 1e-10 agreement.
    let mean = train_images
        .iter()
        .flat_map(|i| i.pixels().iter())
        .map(|&p| p as f64)
        .sum::<f64>()
        / n as f64;
    let var = train_images
        .iter()
        .flat_map(|i| i.pixels().iter())
        .map(|&p| {
            let d = p as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    Ok(BandStats { band, mean, std: var.sqrt().max(STD_FLOOR) })
}

/// Bilinear resize with half-pixel centres (`align_corners = false`).
pub fn resize_bilinear(image: &BandImage, out_h: usize, out_w: usize) -> BandImage {
    let (h, w) = (image.height(), image.width());
    if h == out_h && w == out_w {
        return image.clone();
    }
    let coord = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, src - i0 as f64)
    };
    BandImage::from_fn(out_h, out_w, |r, c| {
        let (r0, r1, fr) = coord(r, h, out_h);
        let (c0, c1, fc) = coord(c, w, out_w);
        let top = image.get(r0, c0) as f64 * (1.0 - fc) + image.get(r0, c1) as f64 * fc;
        let bot = image.get(r1, c0) as f64 * (1.0 - fc) + image.get(r1, c1) as f64 * fc;
        (top * (1.0 - fr) + bot * fr) as f32
    })
}

/// Resize to `side x side`, repeat the grey channel three times and
/// standardize with the band statistics.
pub fn to_model_input<T: Real>(image: &BandImage, stats: &BandStats, side: usize) -> Result<Array3<T>> {
    if !(stats.std > 0.0) {
        return Err(Error::DegenerateStats(format!("band {} has std {}", stats.band, stats.std)));
    }
    if image.is_empty() {
        return Err(Error::Dimension("empty image".into()));
    }
    let resized = resize_bilinear(image, side, side);
    let mean = T::lit(stats.mean);
    let std = T::lit(stats.std);
    Ok(Array3::from_shape_fn((3, side, side), |(_, r, c)| {
        (T::lit(resized.get(r, c) as f64) - mean) / std
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SpectralBand;

    fn stats(mean: f64, std: f64) -> BandStats {
        BandStats { band: SpectralBand::NM800, mean, std }
    }

    #[test]
    fn constant_at_mean_is_zero() {
        let img = BandImage::filled(6, 6, 0.25);
        let t: Array3<f64> = to_model_input(&img, &stats(0.25, 0.1), 4).unwrap();
        assert!(t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_normalization_copies_channels() {
        let img = BandImage::from_fn(5, 5, |r, c| (r * 5 + c) as f32 / 25.0);
        let t: Array3<f32> = to_model_input(&img, &stats(0.0, 1.0), 5).unwrap();
        for ch in 0..3 {
            for r in 0..5 {
                for c in 0..5 {
                    assert_eq!(t[[ch, r, c]], img.get(r, c));
                }
            }
        }
    }

    #[test]
    fn ramp_downsample_matches_bilinear_oracle() {
        // 4x4 ramp v(r,c) = r*4 + c. Downsampling by two samples source
        // coordinates 0.5 and 2.5 on each axis; for a linear function the
        // bilinear value is the function evaluated there.
        let img = BandImage::from_fn(4, 4, |r, c| (r * 4 + c) as f32 / 16.0);
        let t: Array3<f64> = to_model_input(&img, &stats(0.0, 1.0), 2).unwrap();
        let oracle = |sr: f64, sc: f64| (sr * 4.0 + sc) / 16.0;
        let want = [[oracle(0.5, 0.5), oracle(0.5, 2.5)], [oracle(2.5, 0.5), oracle(2.5, 2.5)]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((t[[0, r, c]] - want[r][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_std_is_rejected() {
        let img = BandImage::filled(4, 4, 0.5);
        let r: Result<Array3<f32>> = to_model_input(&img, &stats(0.5, 0.0), 4);
        assert!(matches!(r, Err(Error::DegenerateStats(_))));
    }

    #[test]
    fn band_stats_hand_cases() {
        let c = BandImage::filled(3, 3, 0.7);
        let s = compute_band_stats(&[&c], SpectralBand::NM850).unwrap();
        assert!((s.mean - 0.7f32 as f64).abs() < 1e-15);
        assert_eq!(s.std, STD_FLOOR);

        let z = BandImage::filled(2, 2, 0.0);
        let o = BandImage::filled(2, 2, 1.0);
        let s = compute_band_stats(&[&z, &o], SpectralBand::NM850).unwrap();
        assert_eq!((s.mean, s.std), (0.5, 0.5));
        assert!(compute_band_stats(&[], SpectralBand::NM850).is_err());
    }
}
