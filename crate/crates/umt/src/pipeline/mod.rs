//! Training orchestration: configuration, optimization, batching,
//! checkpoints, metrics, evaluation, accounting and ablations.

pub mod ablate;
pub mod account;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod loader;
pub mod metrics;
pub mod optim;
pub mod train;

pub use ablate::{run_ablation, AblationAxis, AblationTable};
pub use account::TokenAccount;
pub use checkpoint::{load_snapshot, save_snapshot, InitReport, Snapshot, TrainerCounters};
pub use config::{
    DataConfig, MaskConfig, MaskKind, ObjectiveSet, OptimConfig, RunConfig, SamplingKind,
};
pub use eval::{retrieval, RetrievalReport};
pub use loader::CorpusLoader;
pub use metrics::{format_line, parse_line, MetricsLog, StepRecord};
pub use optim::{adamw_step, cosine_lr, AdamState};
pub use train::{Stage, Trainer};
