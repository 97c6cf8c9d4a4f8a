//! Run one image through the encoder and a band head.

use spectrapad::data::{compute_band_stats, synth_generate, to_model_input, SpectralBand, SynthConfig};
use spectrapad::head::{head_grad_check, BandHeadParams, HeadFlags, Mode};
use spectrapad::nn::{ViTConfig, ViTParams};
use spectrapad::rng::rng_from;

fn main() -> spectrapad::Result<()> {
    let band = SpectralBand::NM850;
    let (samples, _) = synth_generate(&SynthConfig { bona_fide_count: 8, attack_counts: vec![8; 8], identities_per_class: 4, ..SynthConfig::default() }, 5)?;
    let images: Vec<_> = samples.iter().map(|s| &s.images[&band]).collect();
    let stats = compute_band_stats(&images, band)?;

    let cfg = ViTConfig::default();
    let encoder = ViTParams::<f64>::init(&cfg, &mut rng_from(1))?;
    let head = BandHeadParams::<f64>::init(&mut rng_from(2), band, cfg.embed_dim, HeadFlags::default(), 0.1);

    let x = to_model_input::<f64>(images[0], &stats, cfg.image_side)?;
    let tokens = encoder.encode(&encoder.patch_embed(&x)?, band)?;
    let eval = head.forward(&tokens, Mode::Eval, 0)?;
    let train = head.forward(&tokens, Mode::Train, 42)?;
    println!("{} tokens of width {}", tokens.len(), tokens.dim());
    println!("eval  probs {:?} pred {}", eval.class.probs, eval.class.pred);
    println!("train probs {:?} (dropout p = {})", train.class.probs, head.p_k);

    for flags in [HeadFlags::default(), HeadFlags { spe: false, token_fusion: false }] {
        let worst = head_grad_check(7, flags).into_iter().map(|(_, e)| e).fold(0.0, f64::max);
        println!("{flags:?}: max gradient error {worst:.2e}");
    }
    Ok(())
}
