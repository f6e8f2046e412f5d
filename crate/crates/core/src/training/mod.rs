//! Loss-driven optimisation, the data pipeline and evaluation metrics.

pub mod augment;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use augment::{augment, normalize, preprocess, rotate_inplane, sharpen, AugmentConfig};
pub use data::{oversample, MINORITY, stratified_split, synth_generate, Dataset, Sample, Splits, SynthConfig, TabularBatch, VolumeBatch};
pub use metrics::{auroc, compute_metrics, MetricsReport};
pub use optim::{sgd_step, sgd_update};
pub use trainer::{predict, train, EpochRecord, Predictions, TrainConfig, TrainOutcome};
