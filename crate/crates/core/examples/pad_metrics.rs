//! APCER, BPCER, HTER and the detection EER on a small score set.

use spectrapad::metrics::{apcer_bpcer, d_eer, d_eer_convex_hull, threshold_sweep};

fn main() -> spectrapad::Result<()> {
    let bona = [0.05, 0.1, 0.2, 0.35, 0.4, 0.7];
    let attack = [0.3, 0.55, 0.6, 0.8, 0.9, 0.95];
    let (apcer, bpcer) = apcer_bpcer(&bona, &attack, 0.5)?;
    println!("t = 0.5: APCER {apcer:.4} BPCER {bpcer:.4} HTER {:.4}", (apcer + bpcer) / 2.0);
    let (eer, t) = d_eer(&bona, &attack)?;
    println!("D-EER {eer:.4} at threshold {t:.3}");
    println!("convex-hull EER {:.4}", d_eer_convex_hull(&bona, &attack)?.0);
    for p in threshold_sweep(&bona, &attack)? {
        println!("  {:.3}  APCER {:.3}  BPCER {:.3}", p.threshold, p.apcer, p.bpcer);
    }
    Ok(())
}
