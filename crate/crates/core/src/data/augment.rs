use rand::Rng;

use super::BandImage;
use crate::rng;

/// One draw of the geometric augmentation. Photometric operations are
/// deliberately absent so per-band reflectance is untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Rotation about the image centre in degrees, within `[-5, 5]`.
    pub rotation_deg: f64,
    pub flip: bool,
    /// Translation as a fraction of width (x) and height (y), within `[-0.05, 0.05]`.
    pub translate: (f64, f64),
    /// Isotropic scale within `[0.95, 1.05]`.
    pub scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams =
        AugmentParams { rotation_deg: 0.0, flip: false, translate: (0.0, 0.0), scale: 1.0 };
}

pub fn draw_augment(seed: u64) -> AugmentParams {
    let mut r = rng::rng_from(seed);
    AugmentParams {
        rotation_deg: r.random_range(-5.0..=5.0),
        flip: r.random_bool(0.5),
        translate: (r.random_range(-0.05..=0.05), r.random_range(-0.05..=0.05)),
        scale: r.random_range(0.95..=1.05),
    }
}

/// Seeded random rotation, flip, translation and scale; output clamped to `[0, 1]`.
pub fn augment(image: &BandImage, seed: u64) -> BandImage {
    apply_augment(image, &draw_augment(seed))
}

/// Inverse-mapped affine warp about the image centre with bilinear sampling
/// and edge clamping, followed by the optional horizontal flip.
pub fn apply_augment(image: &BandImage, p: &AugmentParams) -> BandImage {
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return image.clone();
    }
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    let tx = p.translate.0 * w as f64;
    let ty = p.translate.1 * h as f64;
    let warped = BandImage::from_fn(h, w, |r, c| {
        let dx = c as f64 - cx - tx;
        let dy = r as f64 - cy - ty;
        // Inverse rotation then inverse scale.
        let sx = cx + (cos * dx + sin * dy) / p.scale;
        let sy = cy + (-sin * dx + cos * dy) / p.scale;
        sample_clamped(image, sy, sx).clamp(0.0, 1.0)
    });
    if p.flip {
        BandImage::from_fn(h, w, |r, c| warped.get(r, w - 1 - c))
    } else {
        warped
    }
}

fn sample_clamped(image: &BandImage, y: f64, x: f64) -> f32 {
    let (h, w) = (image.height(), image.width());
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = image.get(y0, x0) as f64 * (1.0 - fx) + image.get(y0, x1) as f64 * fx;
    let bot = image.get(y1, x0) as f64 * (1.0 - fx) + image.get(y1, x1) as f64 * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}
