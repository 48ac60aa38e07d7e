//! Decoder-only transformer trained from scratch, with greedy decoding that
//! records the logit row of every generated step.

mod checkpoint;
mod config;
mod generate;
pub mod kernels;
mod params;
mod train;
mod transformer;

pub use checkpoint::{load_model, save_model, CHECKPOINT_MAGIC};
pub use config::{ModelConfig, TrainHyper};
pub use generate::{
    accuracy_of, read_traces_jsonl, write_traces_jsonl, Generation, LogitTrace,
    MAX_GENERATION_STEPS,
};
pub use params::{Model, ParamKind, ParamLayout, INIT_STD};
pub use train::{make_batch, TrainReport};
pub use transformer::Batch;

/// Seeded model initialisation.
pub fn init_model(cfg: ModelConfig, seed: u64) -> crate::Result<Model> {
    Model::init(cfg, seed)
}
