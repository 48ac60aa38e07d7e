//! Semi-supervised pseudo-labeling for high-level process planning.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`] enumerates every part encoding, derives its feasible process
//!   chains from a fixed rule table, tokenizes them and produces splits.
//! * [`seqmodel`] is a small decoder-only transformer with hand-written
//!   backpropagation, greedy decoding and logit-trace recording.
//! * [`trace_features`] turns one logit trace into the 132-wide oracle input.
//! * [`oracle`] fits gradient-boosted trees on logistic loss over those
//!   features to predict whether a generation is correct.
//! * [`pipeline`] runs the baseline / random / detector augmentation arms.

pub mod config;
pub mod corpus;
pub mod error;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod seqmodel;
pub mod trace_features;

pub use config::RunConfig;
pub use corpus::{
    enumerate_parts, plan_feasible_chains, Dataset, Operation, PartEncoding, ProcessChain, Split,
    Vocabulary,
};
pub use error::{Error, Result};
pub use oracle::{GbdtOracle, OracleDataset};
pub use pipeline::{ExperimentConfig, ExperimentResult, Strategy};
pub use seqmodel::{LogitTrace, Model, ModelConfig, TrainHyper};
pub use trace_features::FeatureVector;
