use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use rayon::prelude::*;

use super::{BandImage, DatasetManifest, SpectralSample};
use crate::error::{Error, Result};

/// Load an 8- or 16-bit grayscale PNG/PGM and scale it to `[0, 1]`.
pub fn load_band_image(path: &Path) -> Result<BandImage> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect()
        }
        other => {
            return Err(Error::Input(format!(
                "{}: expected a grayscale image, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    BandImage::new(h, w, pixels)
}

/// Write as 16-bit grayscale PNG. Pixels are clamped and rounded to the
/// nearest 16-bit level.
pub fn save_png16(image: &BandImage, path: &Path) -> Result<()> {
    let raw: Vec<u16> = image
        .pixels()
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, raw)
            .ok_or_else(|| Error::Dimension("pixel buffer does not match image size".into()))?;
    buf.save(path)?;
    Ok(())
}

/// Write every band image to the path its manifest row names, relative to
/// `root`, then `root/manifest.csv`. Returns the manifest path.
pub fn write_dataset(samples: &[SpectralSample], manifest: &DatasetManifest, root: &Path) -> Result<std::path::PathBuf> {
    let by_id: std::collections::BTreeMap<&str, &SpectralSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    for r in &manifest.records {
        if let Some(dir) = root.join(&r.path).parent() {
            std::fs::create_dir_all(dir)?;
        }
    }
    manifest.records.par_iter().try_for_each(|r| {
        let key = r.sample_key();
        let img = by_id
            .get(key.as_str())
            .and_then(|s| s.images.get(&r.band_nm))
            .ok_or_else(|| Error::Input(format!("no image for manifest row {}", r.path)))?;
        save_png16(img, &root.join(&r.path))
    })?;
    let path = root.join("manifest.csv");
    manifest.save(&path)?;
    Ok(path)
}

/// Round to the 16-bit grid so that a PNG round trip is exact.
pub(crate) fn quantize16(v: f64) -> f32 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as f32 / 65535.0
}
