//! Full model against every single-component removal on a reduced setup.
//!
//! `cargo run --release --example ablation -- [epochs]`

use spectrapad::data::{synth_generate, Dataset, SynthConfig};
use spectrapad::protocol::{ablation_rows, apply_quality_control, run_ablation, Experiment, Toggle};

fn main() -> spectrapad::Result<()> {
    let mut exp = Experiment::default();
    exp.train.epochs = std::env::args().nth(1).map_or(2, |e| e.parse().expect("epochs"));
    let synth = SynthConfig { bona_fide_count: 100, attack_counts: vec![100; 8], identities_per_class: 10, ..SynthConfig::default() };
    let (samples, manifest) = synth_generate(&synth, exp.seed)?;
    let mut ds = Dataset::from_samples(samples, manifest)?;
    apply_quality_control(&mut ds, &exp.train);

    let runs = run_ablation(&ds, &exp, &Toggle::ALL.into_iter().collect())?;
    for row in ablation_rows(&runs) {
        println!(
            "{:<16} dev loss {:>9.5}  intra D-EER {:.4}  cross D-EER {:.4} +- {:.4}{}",
            row.variant,
            row.dev_loss,
            row.intra_d_eer,
            row.cross_d_eer_mean,
            row.cross_d_eer_sd,
            if row.full_at_most { "" } else { "  (full not lower)" }
        );
    }
    Ok(())
}
