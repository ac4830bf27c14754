//! Warp a frame with the generator's exact flow, build the occlusion mask and
//! measure the warping error. Also runs the block-matching estimator on the
//! same pair.

use bvd::datagen::{generate_clip, GenConfig};
use bvd::flowwarp::{estimate_flow, occlusion_mask, warp};
use bvd::metrics;

fn main() -> bvd::Result<()> {
    let clip = generate_clip(5, &GenConfig::with_size(64, 64, 4))?;
    let step = clip.step(1).expect("two frames");
    let (prev, next) = (&clip.clean[0], &clip.clean[1]);

    let warped = warp(prev, &step.backward)?;
    let mask = occlusion_mask(&step.forward, &step.backward, 1.0)?;
    println!(
        "{} of {} pixels have a reliable correspondence",
        mask.count_valid(),
        mask.values().len()
    );
    println!(
        "warping error with the exact flow: {:.6}",
        metrics::warping_error(next, prev, &step.backward, &mask)?
    );
    println!(
        "mse between next and prev:         {:.6}",
        metrics::frame_mse(next, prev)?
    );
    println!(
        "mse between next and warped prev:  {:.6}",
        metrics::frame_mse(next, &warped)?
    );

    let estimated = estimate_flow(next, prev)?;
    println!(
        "warping error with estimated flow: {:.6}",
        metrics::warping_error(next, prev, &estimated, &mask)?
    );
    Ok(())
}
