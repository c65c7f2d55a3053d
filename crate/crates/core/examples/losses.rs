//! The relevance losses and the gradient-penalty baselines on hand-made
//! inputs.

use relmap::image::Mask;
use relmap::objectives::{
    loss_bg, loss_confidence, loss_fg, loss_gradmask, loss_relevance, loss_rrr, loss_total,
    LossWeights, PatchMask,
};
use relmap::tensor::{Tape, Tensor};

fn main() -> relmap::Result<()> {
    let tape = Tape::new();
    // 2x2 patch grid, foreground in the top-left patch
    let relevance = tape.constant(Tensor::new(&[4], vec![1.0, 0.2, 0.4, 0.0])?);
    let mask = PatchMask { grid: 2, values: vec![1.0, 0.0, 0.0, 0.0] };
    let w = LossWeights::default();
    let bg = loss_bg(relevance, &mask)?.value().item();
    let fg = loss_fg(relevance, &mask)?.value().item();
    let cls = loss_confidence(tape.constant(Tensor::new(&[2], vec![0.0, 0.0])?))?.value().item();
    let rel = loss_relevance(bg, fg, &w);
    println!("L_bg {bg:.4}  L_fg {fg:.4}  L_relevance {rel:.4}  L_classification {cls:.4}");
    println!("L_total {:.6}", loss_total(rel, cls, &w));

    let grad = Tensor::new(&[2, 2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0])?;
    let pixels = Mask::new(2, 2, vec![1, 0, 0, 0])?;
    println!("gradmask {:.6}  rrr {:.6}", loss_gradmask(&grad, &pixels)?, loss_rrr(&grad, &pixels)?);
    Ok(())
}
