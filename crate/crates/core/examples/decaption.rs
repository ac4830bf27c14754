//! Restore a captioned clip frame by frame and compare with the clean frames.
//!
//! Without a checkpoint argument an untrained model with a zeroed head is
//! used, which returns the input unchanged.
//!
//! ```text
//! cargo run --release --example decaption -- [model.ckpt]
//! ```

use bvd::datagen::{generate_clip, GenConfig};
use bvd::metrics;
use bvd::model::{build_model, ModelConfig};
use bvd::pipeline::{infer_clip_traced, load_checkpoint, InferenceConfig};

fn main() -> bvd::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => load_checkpoint(p.as_ref())?.model,
        None => build_model(&ModelConfig::desk())?,
    };
    let clip = generate_clip(11, &GenConfig::with_size(64, 64, 12))?;
    let cfg = InferenceConfig {
        emit_debug_features: true,
        ..Default::default()
    };
    let trace = infer_clip_traced(&model, &clip.corrupted, &cfg)?;

    let out = std::env::temp_dir().join("bvd_decaption_example");
    std::fs::create_dir_all(&out).map_err(|e| bvd::Error::io(&out, e))?;
    for (t, frame) in trace.frames.iter().enumerate() {
        frame.write_png(&out.join(format!("{t:05}.png")))?;
        let moved = trace.residuals[t].data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!(
            "frame {t:2}: mse in {:.5} out {:.5}, largest residual {moved:.4}",
            metrics::frame_mse(&clip.corrupted[t], &clip.clean[t])?,
            metrics::frame_mse(frame, &clip.clean[t])?,
        );
    }
    println!("frames written to {}", out.display());
    Ok(())
}
