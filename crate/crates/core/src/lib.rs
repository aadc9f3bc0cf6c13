//! Structured random parameter sharing for the input and output embedding
//! layers of LSTM language models.
//!
//! Word embeddings are built by concatenating `K` sub-vectors drawn from a
//! shared pool of `M` rows through a fixed random [`mapping`]. On the input
//! side this shrinks the embedding matrix from `V·N` to `M·N/K` parameters.
//! On the output side, a position-partitioned mapping lets the logits be
//! computed from `M` partial dot products plus `V·K` additions instead of a
//! full `V × H` product ([`softmax::OutputLayer`]).

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod lstm;
pub mod mapping;
pub mod model;
pub mod rng;
pub mod softmax;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use corpus::{TokenStream, Vocabulary, Window};
pub use embedding::{EmbeddingPool, PoolGradient, SlimEmbedding};
pub use error::{Error, Result};
pub use mapping::{Scheme, SubVectorMapping};
pub use model::{LossKind, Model, ModelConfig, Sharing};
pub use softmax::{DenseOutput, NoiseTable, Output, OutputLayer};
pub use train::{OptimizerKind, TrainConfig};
