//! Step-wise training: plans, optimizer, schedule, checkpoints and the loop.

mod adam;
mod checkpoint;
mod config;
mod gradcheck;
mod plan;
mod trainer;

pub use adam::{Adam, OptimError};
pub use checkpoint::{load_checkpoint, read_miac, save_checkpoint, sidecar_path, write_miac, Checkpoint, CheckpointError, CheckpointMeta};
pub use config::{lr_schedule, parse_config, ConfigEntry, ConfigError, StepSchedule, TrainConfig};
pub use gradcheck::{check_step_gradients, loss_params, synthetic_batch, synthetic_captions};
pub use plan::{Ablation, StepPlan, StepTerms, Trained};
pub use trainer::{EpochLog, PreparedPairs, TrainError, Trainer};
