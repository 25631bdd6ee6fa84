//! Stream pretraining by repainting, and the classifier protocols built on
//! the pretrained encoders.

pub mod classify;
pub mod config;
pub mod data;
pub mod optim;
pub mod pretrain;
pub mod subset;

pub use classify::{
    extract_features, finetune, fuse_features, linear_probe, metrics_csv, run_protocol, write_metrics_csv,
    ClassifyOutcome, EpochRecord, FusedClassifier, LinearClassifier,
};
pub use config::{ClassifierConfig, DataConfig, Fusion, PretrainConfig, Protocol, ProtocolKind, RunConfig};
pub use data::{model_input, prepare_cloud, repaint_target, LabeledSet, UnlabeledSet};
pub use optim::{cosine_lr, epoch_lr, Adam, AdamConfig, NesterovSgd};
pub use pretrain::{baseline_model, init_stream_model, pretrain_stream, PretrainOutcome};
pub use subset::{labeled_count, sample_from_pools, sample_labeled_subset, LabeledSubset};
