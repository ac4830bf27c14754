//! Training, inference, checkpoints, configuration and the command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod infer;
pub mod optim;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::{parse_kv, Ablation, InferenceConfig, RunConfig, TemporalReference, TrainConfig};
pub use infer::{copy_back, infer_clip, infer_clip_traced, InferenceTrace};
pub use optim::{Adam, AdamParams};
pub use train::{checkpoint_path, train, train_step, LossRecord, TrainOptions, TrainState, FINAL_CHECKPOINT};
