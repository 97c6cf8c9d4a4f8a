//! Balanced cross-entropy and the contrastive term on a toy batch.

use ndarray::array;
use spectrapad::losses::{balanced_ce, band_loss_with_grads, class_weights, contrastive, LossConfig};

fn main() -> spectrapad::Result<()> {
    let w = class_weights(100, 300)?;
    println!("class weights for 100 bona fide / 300 attack: ({}, {:.4})", w.w0, w.w1);

    let probs = [[0.9, 0.1], [0.2, 0.8]];
    let labels = [0, 1];
    println!("balanced CE {:.4}", balanced_ce(&probs, &labels, w)?);

    let feats = array![[0.0, 0.0], [2.0, 0.0]];
    println!("contrastive, same class at distance 2: {}", contrastive(&feats, &[0, 0], 1e-6)?);
    println!("contrastive, opposite classes:         {:.3e}", contrastive(&feats, &[0, 1], 1e-6)?);

    // the push term is unbounded below, so well separated batches go negative
    let far = array![[0.0, 0.0], [0.1, 0.0], [50.0, 0.0], [50.1, 0.0]];
    let l = band_loss_with_grads(&[[0.99, 0.01], [0.99, 0.01], [0.01, 0.99], [0.01, 0.99]], &[0, 0, 1, 1], &far, class_weights(2, 2)?, &LossConfig::default())?;
    println!("separated batch: total {:.4} = ce {:.4} + 0.1 x {:.4}", l.total, l.ce, l.contrastive);
    Ok(())
}
