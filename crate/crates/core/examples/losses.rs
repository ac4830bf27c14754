//! Evaluate each loss term and its gradient on a captioned frame.

use bvd::datagen::{generate_clip, GenConfig};
use bvd::losses::{self, total_loss, LossWeights};

fn main() -> bvd::Result<()> {
    let clip = generate_clip(2, &GenConfig::with_size(32, 32, 3))?;
    let (pred, target) = (&clip.corrupted[1], &clip.clean[1]);
    let weights = LossWeights::default();
    let step = clip.step(1).expect("two frames");

    println!("l1        {:.6}", losses::l1_loss(pred, target)?);
    println!("grad_l1   {:.6}", losses::gradient_l1_loss(pred, target)?);
    println!("ssim      {:.6}", losses::ssim(pred, target, &weights)?);
    println!("1 - ssim  {:.6}", losses::ssim_loss(pred, target, &weights)?);
    println!(
        "temporal  {:.6}",
        losses::temporal_loss(pred, &clip.clean[0], &step.backward, &step.mask)?
    );

    let (_, grad) = losses::l1_loss_grad(pred, target)?;
    let nonzero = grad.data().iter().filter(|g| **g != 0.0).count();
    println!("l1 gradient is nonzero at {nonzero} of {} entries", grad.data().len());

    let target_t = losses::TemporalTarget::new(&clip.clean[0], &step.backward, step.mask.clone())?;
    // every term is enabled by default
    let all = total_loss(pred, target, Some(&target_t), &weights)?;
    println!("weighted total {:.6} ({all:?})", all.total);
    Ok(())
}
