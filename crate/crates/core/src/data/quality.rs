use super::BandImage;
use crate::error::{Error, Result};

/// Pixels at or above this level count as saturated.
pub const SATURATION_LEVEL: f32 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub laplacian_variance: f64,
    pub has_invalid_pixels: bool,
    pub saturation_fraction: f64,
    pub pass: bool,
}

/// Variance of the 4-neighbour Laplacian response over the valid region,
/// with pixels rescaled to `[0, 255]` first.
pub fn laplacian_variance(image: &BandImage) -> Result<f64> {
    let (h, w) = (image.height(), image.width());
    if h < 3 || w < 3 {
        return Err(Error::Dimension(format!("{h}x{w} image is smaller than the 3x3 kernel")));
    }
    let px = |r: usize, c: usize| image.get(r, c) as f64 * 255.0;
    let n = ((h - 2) * (w - 2)) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let v = px(r - 1, c) + px(r + 1, c) + px(r, c - 1) + px(r, c + 1) - 4.0 * px(r, c);
            sum += v;
            sum_sq += v * v;
        }
    }
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

/// Sharpness, invalid-pixel and saturation screening. Never fails: an image
/// that cannot be measured simply does not pass.
pub fn quality_filter(image: &BandImage, threshold: f64, sat_limit: f64) -> QualityReport {
    let has_invalid_pixels = image.pixels().iter().any(|p| !p.is_finite());
    let n = image.pixels().len().max(1) as f64;
    let saturated = image.pixels().iter().filter(|&&p| p >= SATURATION_LEVEL).count();
    let saturation_fraction = saturated as f64 / n;
    let laplacian_variance = if has_invalid_pixels {
        f64::NAN
    } else {
        laplacian_variance(image).unwrap_or(0.0)
    };
    let pass = !has_invalid_pixels
        && laplacian_variance > threshold
        && saturation_fraction < sat_limit;
    QualityReport { laplacian_variance, has_invalid_pixels, saturation_fraction, pass }
}
