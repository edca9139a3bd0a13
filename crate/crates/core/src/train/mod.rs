//! Optimization: losses, learning-rate schedules, Adam and the reconstruction
//! loop.

pub mod adam;
pub mod config;
pub mod losses;
pub mod schedule;
pub mod trainer;

pub use adam::AdamState;
pub use config::{apply_override, load_with_overrides, GroupRates, TrainConfig, TrainerConfig};
pub use losses::LossWeights;
pub use schedule::{schedule_rate, ScheduleSpec};
pub use trainer::{evaluate, reconstruct, rotation_error, EvalReport, LogRecord, LossBreakdown, TrainState, Trainer};
