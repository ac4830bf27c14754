//! Score the do-nothing baseline and a model on a corpus, and print the
//! report as JSON.
//!
//! ```text
//! cargo run --release --example evaluate -- <corpus dir> [model.ckpt]
//! ```

use std::path::PathBuf;

use bvd::datagen::{read_corpus, write_corpus, GenConfig};
use bvd::metrics::{baseline_report, evaluate};
use bvd::model::{build_model, ModelConfig};
use bvd::pipeline::{load_checkpoint, InferenceConfig};

fn main() -> bvd::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = match args.next() {
        Some(p) => PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("bvd_eval_example");
            if !p.join("manifest.txt").exists() {
                write_corpus(2, &p, 3, &GenConfig::with_size(32, 32, 12))?;
            }
            p
        }
    };
    let corpus = read_corpus(&root)?;
    let (model, step) = match args.next() {
        Some(p) => {
            let s = load_checkpoint(p.as_ref())?;
            (s.model, s.step)
        }
        None => (build_model(&ModelConfig::desk())?, 0),
    };

    let base = baseline_report(&corpus)?;
    let report = evaluate(&model, &corpus, &InferenceConfig::default(), step)?;
    println!("{}", base.table_row("identity"));
    println!("{}", report.table_row("model"));
    println!("{}", report.to_json()?);
    Ok(())
}
