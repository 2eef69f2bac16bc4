//! Configuration, data splits, synthetic data, training and export.

mod config;
mod export;
mod features;
mod optim;
mod split;
mod synthetic;
mod train;

pub use config::{FeatType, TrainConfig};
pub use export::{
    export_embeddings, read_embeddings, write_embeddings, EmbeddingRow, Embeddings, INTEGRATED_SLOT,
};
pub use features::apply_feat_type;
pub use optim::AdamW;
pub use split::{hold_out, split_lp, split_nc, LpSplit, NodeSplit};
pub use synthetic::{generate_synthetic, Relation, SyntheticData, SyntheticSpec};
pub use train::{
    evaluate, init_model, link_scores, prepare_graph, train, EpochRecord, LpTask, Metrics, NcTask,
    Part, Task, TaskKind, TrainOutcome, TrainedModel, Trainer,
};
