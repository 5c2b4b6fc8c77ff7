//! App-level retrieval and design-consistency scoring over sets of
//! screenshot embeddings.
//!
//! An app is a [`store::ScreenSet`]: an ordered set of unit-norm screenshot
//! vectors with a probability mass on each. Apps are compared with a
//! discrete optimal transport distance under the cosine ground cost
//! ([`ot`]), and scored for internal consistency with the Gaussian-potential
//! uniformity loss ([`uniformity`]).

pub mod error;
pub mod exec;
pub mod experiments;
pub mod geometry;
pub mod ot;
pub mod retrieval;
pub mod stats;
pub mod store;
pub mod synthetic;
pub mod uniformity;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{cosine_distance, normalize, pairwise_cost, CostMatrix, EmbeddingVector};
pub use ot::{
    app_distance, solve_exact, solve_sinkhorn, Marginal, OtCache, OtResult, SolverConfig,
    SolverMode,
};
pub use store::{Dataset, ScreenSet};
