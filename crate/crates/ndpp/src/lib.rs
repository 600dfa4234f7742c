//! Streaming and online MAP inference and single-pass learning for low-rank
//! nonsymmetric determinantal point processes.
//!
//! The kernel is L = V^T V + B^T C B with V, B in R^{d x n} and C a d x d
//! skew-symmetric matrix; all algorithms work on the d-scale column blocks
//! and never materialize the n x n kernel.

pub mod data;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod learning;
pub mod linalg;
pub mod model;

pub use error::{Error, Result};
pub use inference::{
    brute_force_map, enumerate_neighborhood, model_stream, offline_greedy, InferenceState,
    PartitionGreedy, SearchOrder, StreamPoint,
};
pub use kernel::{f_det, logdet_normalizer, logdet_normalizer_factored};
pub use learning::{
    apply_update, full_log_likelihood, grad_first_term, grad_regularizer, grad_z, online_learn,
    psi_gradient, sample_exact_small, BasketEvent, ExactDistribution, GradientTriple,
    LearningConfig, OccurrenceCounts,
};
pub use model::{DetCounter, ModelDiagnostic, NdppModel, Subset};
