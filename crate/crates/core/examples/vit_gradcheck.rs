//! Compare analytic encoder gradients against central differences in f64.

use spectrapad::nn::gradcheck::{check_attention, check_block, check_layer_norm, check_linear, check_patch_embed};

fn main() {
    for seed in 0..3 {
        println!("seed {seed}");
        println!("  linear       {:.2e}", check_linear(seed));
        println!("  layer norm   {:.2e}", check_layer_norm(seed));
        println!("  patch embed  {:.2e}", check_patch_embed(seed));
        println!("  attention    {:.2e}", check_attention(seed));
        println!("  block (d=8)  {:.2e}", check_block(seed, 8));
    }
}
