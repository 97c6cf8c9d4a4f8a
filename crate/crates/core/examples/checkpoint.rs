//! Save a trained model to the binary container and load it back.

use spectrapad::checkpoint::Checkpoint;
use spectrapad::data::{synth_generate, Dataset, Split, SynthConfig};
use spectrapad::nn::ViTConfig;
use spectrapad::protocol::{apply_quality_control, run_cross_artefact, Experiment};

fn main() -> spectrapad::Result<()> {
    let mut exp = Experiment {
        model: ViTConfig { image_side: 16, embed_dim: 16, depth: 2, heads: 2, ..ViTConfig::default() },
        ..Experiment::default()
    };
    exp.train.epochs = 2;
    let synth = SynthConfig { side: 16, bona_fide_count: 40, attack_counts: vec![24; 8], identities_per_class: 8, ..SynthConfig::default() };
    let (samples, manifest) = synth_generate(&synth, exp.seed)?;
    let digest = manifest.digest();
    let mut ds = Dataset::from_samples(samples, manifest)?;
    apply_quality_control(&mut ds, &exp.train);
    let run = run_cross_artefact(&ds, &exp)?;

    let ckpt = Checkpoint::from_model(&run.model, exp.config_hash(), digest)?;
    let path = std::env::temp_dir().join("spectrapad_example.ckpt");
    ckpt.save(&path)?;
    let back = Checkpoint::load(&path)?;
    println!("{} tensors, {} bytes", back.tensors.len(), std::fs::metadata(&path)?.len());
    let model = back.model()?;
    let s = ds.split(Split::Test, None)[0];
    println!("score before {:.6}, after {:.6}", run.model.score(s, None)?.p_attack, model.score(s, None)?.p_attack);
    println!("identical model: {}", model == run.model);
    Ok(())
}
