//! Cross-modal and uni-modal soft-label alignment for contrastive image-text retrieval.
//!
//! A student maps frozen base features to retrieval embeddings and is trained
//! with InfoNCE plus two KL terms whose targets come from teacher feature
//! similarities: one aligns the cross-modal distributions, the other the
//! uni-modal ones. The crate also provides retrieval metrics, the on-disk
//! formats, a synthetic data generator, and a finite-difference gradient check.

pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod math;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod soft_labels;
pub mod synth;
pub mod trainer;

pub use losses::{LossReport, LossWeights};
pub use math::{EmbeddingMatrix, MathError, RowStochasticMatrix, SimilarityMatrix};
pub use matrix::RealMatrix;
pub use metrics::{CrossModalReport, RetrievalRelevance, UniModalReport};
pub use model::{ModelDims, Representation, StudentParams};
pub use parallel::Execution;
pub use trainer::{train, TrainConfig, TrainLog};
