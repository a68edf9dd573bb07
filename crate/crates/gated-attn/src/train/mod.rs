pub mod adam;
pub mod loss;
pub mod trainer;

pub use adam::{clip_global_norm, AdamState};
pub use loss::joint_loss;
pub use trainer::{evaluate, train_model, EpochStats, EvalStats, TrainOutcome};
