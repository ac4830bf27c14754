//! Inference throughput of the desk and paper-scale models at 128×128.
//!
//! ```text
//! cargo run --release --example bench -- [frames]
//! ```

use bvd::model::{build_model, count_parameters, ModelConfig};
use bvd::pipeline::cli::measure_fps;

fn main() -> bvd::Result<()> {
    let frames: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    println!("reference: 62.5 fps reported for the original GPU implementation");
    for (name, cfg) in [
        ("desk", ModelConfig::desk()),
        ("paper_scale", ModelConfig::paper_scale()),
    ] {
        let params = count_parameters(&build_model(&cfg)?);
        let fps = measure_fps(&cfg, 128, 128, frames)?;
        println!("{name:12} {params:>10} parameters  {fps:8.3} fps");
    }
    Ok(())
}
