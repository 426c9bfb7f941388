//! Two-stage training: configuration, schedule, AdamW, checkpoints, and
//! the contrastive loop.

pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod schedule;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{AnnotationCondition, ModelPreset, TrainConfig, UnfreezePolicy};
pub use optim::{adamw_step, clip_global_norm, AdamWState};
pub use schedule::{lr_at, warmup_steps};
pub use train::{apply_freezing, condition_text, train_stage1, train_stage2, AlignModel};
