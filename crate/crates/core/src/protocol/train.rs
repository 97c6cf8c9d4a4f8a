//! Independent training of one band: its head plus its copy of the final
//! encoder blocks, over the band loss, with dev-loss checkpoint selection.

use std::ops::Range;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::data::{augment, to_model_input, BandImage, BandStats, SpectralBand};
use crate::error::{Error, Result};
use crate::head::{band_dropout_rate, BandHeadParams, DropoutConstants, FeatureStats, HeadFlags, HeadOutput, Mode};
use crate::losses::{band_loss_with_grads, class_weights_with, ClassWeights, LossConfig};
use crate::nn::{flatten, num_params, unflatten, Block, TokenSequence, ViTParams};
use crate::rng::{self, derive_indexed, STREAM_AUGMENT, STREAM_DROPOUT, STREAM_INIT, STREAM_SHUFFLE};

/// Everything `train_band` needs besides the data. Ablation toggles have
/// already been folded into the flags and the loss configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub augment: bool,
    pub flags: HeadFlags,
    pub loss: LossConfig,
    pub band_dropout: bool,
    pub dropout: DropoutConstants,
    pub feat_norm: bool,
    pub seed: u64,
}

/// One band's training and development images with labels.
#[derive(Debug, Clone, Default)]
pub struct BandData<'a> {
    pub train: Vec<(&'a BandImage, u8)>,
    pub dev: Vec<(&'a BandImage, u8)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub band_nm: u16,
    pub epoch: usize,
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    pub contrastive: f64,
}

#[derive(Debug, Clone)]
pub struct BandTrainResult {
    pub band: SpectralBand,
    /// Head and blocks of the selected epoch.
    pub head: BandHeadParams<f32>,
    pub blocks: Vec<Block<f32>>,
    /// Development loss after each epoch; index 0 is the initialization.
    pub dev_loss: Vec<f64>,
    pub selected_epoch: usize,
    pub trace: Vec<StepLoss>,
    pub n_bona: usize,
    pub n_attack: usize,
    pub p_k: f64,
    pub class_weights: ClassWeights,
}

/// Contiguous batches of at most `size`; a trailing batch of one joins the
/// previous batch so every batch has pairs for the contrastive term.
pub fn batch_ranges(n: usize, size: usize) -> Vec<Range<usize>> {
    let size = size.max(1);
    let mut out: Vec<Range<usize>> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").end = last.end;
    }
    out
}

struct Trainable {
    head: BandHeadParams<f32>,
    enc: ViTParams<f32>,
}

impl Trainable {
    fn flat(&self, band: SpectralBand) -> Vec<f32> {
        let mut v = flatten(&self.head);
        v.extend(flatten(&self.enc.band_blocks[&band]));
        v
    }

    fn set_flat(&mut self, band: SpectralBand, flat: &[f32]) {
        let n = num_params(&self.head);
        unflatten(&mut self.head, &flat[..n]);
        unflatten(self.enc.band_blocks.get_mut(&band).expect("band blocks"), &flat[n..]);
    }
}

pub fn train_band(
    encoder: &ViTParams<f32>,
    band: SpectralBand,
    data: &BandData<'_>,
    stats: &BandStats,
    s: &TrainSettings,
) -> Result<BandTrainResult> {
    if s.batch_size < 2 {
        return Err(Error::Config(format!("batch size {} < 2", s.batch_size)));
    }
    let labels: Vec<u8> = data.train.iter().map(|(_, l)| *l).collect();
    let n_attack = labels.iter().filter(|l| **l == 1).count();
    let n_bona = labels.len() - n_attack;
    if n_bona == 0 || n_attack == 0 {
        return Err(Error::Protocol(format!(
            "band {band}: training needs both classes ({n_bona} bona fide, {n_attack} attack)"
        )));
    }
    if data.dev.is_empty() {
        return Err(Error::Protocol(format!("band {band}: empty development split")));
    }
    let weights = class_weights_with(n_bona, n_attack, s.loss.weight_form)?;
    let p_k = if s.band_dropout { band_dropout_rate(labels.len(), &s.dropout) } else { 0.0 };
    let nm = band.nm() as u64;

    let mut enc = encoder.clone();
    enc.band_blocks.retain(|b, _| *b == band);
    if !enc.band_blocks.contains_key(&band) {
        return Err(Error::State(format!("encoder has no blocks for band {band}")));
    }
    let mut init_rng = rng::substream(s.seed, &[STREAM_INIT, "head", &band.nm().to_string()]);
    let head = BandHeadParams::init(&mut init_rng, band, enc.config.embed_dim, s.flags, p_k);
    let mut model = Trainable { head, enc };

    let side = model.enc.config.image_side;
    let trunk_of = |enc: &ViTParams<f32>, img: &BandImage| -> Result<TokenSequence<f32>> {
        enc.trunk_forward(&enc.patch_embed(&to_model_input(img, stats, side)?)?)
    };
    // The trunk is frozen, so unaugmented trunk outputs are computed once.
    let train_trunk: Vec<TokenSequence<f32>> =
        data.train.par_iter().map(|(img, _)| trunk_of(&model.enc, img)).collect::<Result<_>>()?;
    let dev_trunk: Vec<TokenSequence<f32>> =
        data.dev.par_iter().map(|(img, _)| trunk_of(&model.enc, img)).collect::<Result<_>>()?;
    let dev_labels: Vec<u8> = data.dev.iter().map(|(_, l)| *l).collect();

    let sweep = |m: &mut Trainable| -> Result<()> {
        if s.feat_norm {
            let outs = eval_outputs(m, band, &train_trunk)?;
            let feats: Vec<Array1<f64>> = outs.iter().map(|o| o.features.mapv(f64::from)).collect();
            m.head.set_feature_stats(&FeatureStats::compute(&feats)?)?;
        }
        Ok(())
    };
    let dev_loss_of = |m: &Trainable| -> Result<f64> {
        let outs = eval_outputs(m, band, &dev_trunk)?;
        let mut total = 0.0;
        for r in batch_ranges(outs.len(), s.batch_size) {
            let (probs, feats) = batch_arrays(&outs[r.clone()]);
            let l = band_loss_with_grads(&probs, &dev_labels[r.clone()], &feats, weights, &s.loss)?;
            total += l.total * r.len() as f64;
        }
        let loss = total / outs.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("band {band}: non-finite development loss")));
        }
        Ok(loss)
    };

    sweep(&mut model)?;
    let mut dev_loss = vec![dev_loss_of(&model)?];
    let mut best = (0usize, model.head.clone(), model.enc.band_blocks[&band].clone());
    let mut adam = Adam::new(s.adam, model.flat(band).len());
    let mut trace = Vec::new();

    for epoch in 1..=s.epochs {
        if epoch > 1 {
            sweep(&mut model)?;
        }
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng::rng_from(derive_indexed(s.seed, STREAM_SHUFFLE, &[nm, epoch as u64])));
        for (step, r) in batch_ranges(order.len(), s.batch_size).into_iter().enumerate() {
            let idx = &order[r];
            let fwd: Vec<_> = idx
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let trunk = if s.augment {
                        let seed = derive_indexed(s.seed, STREAM_AUGMENT, &[nm, epoch as u64, i as u64]);
                        trunk_of(&model.enc, &augment(data.train[i].0, seed))?
                    } else {
                        train_trunk[i].clone()
                    };
                    let (tokens, ecache) = model.enc.band_forward_cached(&trunk, band)?;
                    let drop_seed = derive_indexed(s.seed, STREAM_DROPOUT, &[nm, epoch as u64, step as u64, pos as u64]);
                    let (out, hcache) = model.head.forward_cached(&tokens, Mode::Train, drop_seed)?;
                    Ok((out, hcache, ecache))
                })
                .collect::<Result<_>>()?;
            let outs: Vec<HeadOutput<f32>> = fwd.iter().map(|(o, _, _)| o.clone()).collect();
            let (probs, feats) = batch_arrays(&outs);
            let batch_labels: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let loss = band_loss_with_grads(&probs, &batch_labels, &feats, weights, &s.loss)?;
            if !loss.total.is_finite() {
                return Err(Error::Numeric(format!("band {band}: non-finite loss at epoch {epoch}, step {step}")));
            }
            trace.push(StepLoss {
                band_nm: band.nm(),
                epoch,
                step,
                total: loss.total,
                ce: loss.ce,
                contrastive: loss.contrastive,
            });

            let grads: Vec<Vec<f32>> = fwd
                .par_iter()
                .enumerate()
                .map(|(pos, (_, hcache, ecache))| {
                    let dl = loss.d_logits[pos].map(|v| v as f32);
                    let df = loss.d_features.as_ref().map(|g| g.row(pos).mapv(|v| v as f32));
                    let (hg, dtokens) = model.head.backward(hcache, dl, df.as_ref());
                    let (bg, _) = model.enc.backward_band(ecache, &dtokens)?;
                    let mut v = flatten(&hg);
                    v.extend(flatten(&bg));
                    Ok(v)
                })
                .collect::<Result<_>>()?;
            // Fixed-order reduction keeps the update independent of scheduling.
            let mut sum = vec![0.0f64; grads[0].len()];
            for g in &grads {
                for (a, b) in sum.iter_mut().zip(g) {
                    *a += *b as f64;
                }
            }
            let g32: Vec<f32> = sum.iter().map(|v| *v as f32).collect();
            let mut params = model.flat(band);
            adam.step(&mut params, &g32);
            model.set_flat(band, &params);
        }
        let l = dev_loss_of(&model)?;
        if l < dev_loss[best.0] {
            best = (epoch, model.head.clone(), model.enc.band_blocks[&band].clone());
        }
        dev_loss.push(l);
    }

    let (selected_epoch, head, blocks) = best;
    Ok(BandTrainResult {
        band,
        head,
        blocks,
        dev_loss,
        selected_epoch,
        trace,
        n_bona,
        n_attack,
        p_k,
        class_weights: weights,
    })
}

fn eval_outputs(m: &Trainable, band: SpectralBand, trunks: &[TokenSequence<f32>]) -> Result<Vec<HeadOutput<f32>>> {
    trunks
        .par_iter()
        .map(|t| m.head.forward(&m.enc.band_forward(t, band)?, Mode::Eval, 0))
        .collect()
}

fn batch_arrays(outs: &[HeadOutput<f32>]) -> (Vec<[f64; 2]>, Array2<f64>) {
    let probs = outs.iter().map(|o| o.class.probs).collect();
    let d = outs.first().map_or(0, |o| o.f_norm.len());
    let feats = Array2::from_shape_fn((outs.len(), d), |(i, j)| outs[i].f_norm[j] as f64);
    (probs, feats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_everything_without_singletons() {
        assert_eq!(batch_ranges(10, 4), vec![0..4, 4..8, 8..10]);
        assert_eq!(batch_ranges(9, 4), vec![0..4, 4..9]);
        assert_eq!(batch_ranges(1, 4), vec![0..1]);
        assert_eq!(batch_ranges(0, 4), Vec::<Range<usize>>::new());
        for n in 1..50 {
            for b in 2..9 {
                let r = batch_ranges(n, b);
                assert_eq!(r.first().unwrap().start, 0);
                assert_eq!(r.last().unwrap().end, n);
                assert!(r.windows(2).all(|w| w[0].end == w[1].start));
                if n > 1 {
                    assert!(r.iter().all(|x| x.len() >= 2));
                }
            }
        }
    }
}
