//! Score band images with the focus and saturation checks and mask failures.

use spectrapad::data::{laplacian_variance, quality_filter, synth_generate, Dataset, SpectralBand, SynthConfig};
use spectrapad::protocol::{apply_quality_control, ProtocolConfig};

fn main() -> spectrapad::Result<()> {
    let cfg = SynthConfig { bona_fide_count: 20, attack_counts: vec![20; 8], identities_per_class: 5, ..SynthConfig::default() };
    let (samples, manifest) = synth_generate(&cfg, 3)?;
    let qc = ProtocolConfig::default();

    let s = &samples[0];
    for band in SpectralBand::ALL {
        let img = &s.images[&band];
        let r = quality_filter(img, qc.qc_threshold, qc.qc_saturation);
        println!(
            "{} band {band}: laplacian variance {:.1}, saturated {:.3}, pass {}",
            s.id,
            laplacian_variance(img)?,
            r.saturation_fraction,
            r.pass
        );
    }

    let mut ds = Dataset::from_samples(samples, manifest)?;
    let masked = apply_quality_control(&mut ds, &qc);
    println!("{masked} of {} band images masked", ds.len() * SpectralBand::ALL.len());

    // a stricter focus threshold masks more
    let strict = ProtocolConfig { qc_threshold: 1e6, ..qc };
    let masked = apply_quality_control(&mut ds, &strict);
    println!("threshold {}: {masked} masked", strict.qc_threshold);
    Ok(())
}
