//! Semi-supervised rotation regression on a synthetic keypoint task.

pub mod config;
pub mod data;
pub mod eval;
pub mod io;
pub mod net;
pub mod train;

pub use config::{EvalModel, HeadKind, OptimizerKind, TrainConfig, TrainMode, CONFIG_SCHEMA};
pub use data::{gen_synthetic_dataset, Augmentation, SyntheticSample};
pub use eval::{evaluate, EvalReport};
pub use net::{Regressor, Shape};
pub use train::{
    ema_update, metrics_csv, pretrain, run, ssl_train, GateRecord, Snapshot, TeacherStudent, TrainOutput, CSV_HEADER,
};
