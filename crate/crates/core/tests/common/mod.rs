//! Small fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use spectrapad::config::GlobalConfig;
use spectrapad::data::{synth_generate, Dataset, SynthConfig};
use spectrapad::nn::ViTConfig;
use spectrapad::protocol::{apply_quality_control, Experiment};

pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        side: 16,
        bona_fide_count: 40,
        attack_counts: vec![24; 8],
        identities_per_class: 8,
        ..SynthConfig::default()
    }
}

pub fn tiny_model() -> ViTConfig {
    ViTConfig {
        image_side: 16,
        patch_size: 4,
        embed_dim: 16,
        depth: 2,
        heads: 2,
        mlp_ratio: 2.0,
        trainable_last_blocks: 1,
    }
}

pub fn tiny_experiment(seed: u64) -> Experiment {
    let mut e = Experiment { seed, model: tiny_model(), ..Experiment::default() };
    e.train.epochs = 3;
    e.train.batch_size = 8;
    e
}

pub fn tiny_dataset(seed: u64) -> Dataset {
    let (samples, manifest) = synth_generate(&tiny_synth(), seed).unwrap();
    let mut ds = Dataset::from_samples(samples, manifest).unwrap();
    apply_quality_control(&mut ds, &tiny_experiment(seed).train);
    ds
}

/// A config file for the tiny setup, written into `dir`.
pub fn write_tiny_config(dir: &Path, seed: u64, manifest: Option<&Path>) -> std::path::PathBuf {
    let mut cfg = GlobalConfig::synthetic(tiny_synth(), seed);
    cfg.output_dir = dir.join("runs");
    cfg.model = tiny_model();
    cfg.train = tiny_experiment(seed).train;
    if let Some(m) = manifest {
        cfg.dataset.synth = None;
        cfg.dataset.manifest_path = Some(m.to_path_buf());
    }
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}
