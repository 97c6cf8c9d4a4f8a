//! Accuracy-weighted fusion of per-band probabilities with a band mask.

use std::collections::{BTreeMap, BTreeSet};

use spectrapad::data::SpectralBand;
use spectrapad::ensemble::{band_weights, decide, fuse};

fn main() -> spectrapad::Result<()> {
    let accs: BTreeMap<_, _> = SpectralBand::ALL.into_iter().zip([0.9, 0.8, 0.95, 0.7, 0.6]).collect();
    let weights = band_weights(&accs);
    for (b, w) in &weights.w {
        println!("band {b}: weight {w:.4}");
    }
    let probs: BTreeMap<_, _> = SpectralBand::ALL.into_iter().zip([[0.2, 0.8], [0.4, 0.6], [0.1, 0.9], [0.7, 0.3], [0.5, 0.5]]).collect();

    let all: BTreeSet<_> = SpectralBand::ALL.into_iter().collect();
    let f = fuse(&probs, &weights, &all)?;
    println!("all bands: p_attack {:.4}, decision {}", f.p_ens[1], decide(f.p_ens, 0.5)?);

    // 850 nm failed quality control for this sample
    let mask: BTreeSet<_> = all.iter().copied().filter(|b| *b != SpectralBand::NM850).collect();
    let f = fuse(&probs, &weights, &mask)?;
    let used: Vec<String> = f.bands_used.iter().map(ToString::to_string).collect();
    println!("without 850: p_attack {:.4} from {}", f.p_ens[1], used.join(" "));

    let zero = band_weights(&SpectralBand::ALL.into_iter().map(|b| (b, 0.0)).collect());
    println!("all-zero accuracies fall back to {:?}", zero.w.values().collect::<Vec<_>>());
    Ok(())
}
