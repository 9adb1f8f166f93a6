//! Teacher-guided multi-prototype retrieval with confidence-gated fusion.
//!
//! A classifier posterior is kept unless a strict confidence gate decides that
//! a prototype-retrieval posterior is both confident and in disagreement, in
//! which case the two are mixed. The [`lab`] module builds synthetic worlds with
//! known conditional risks to check the risk properties of that gate.

pub mod cluster;
pub mod error;
pub mod gate;
pub mod io;
pub mod lab;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod retrieval;

pub use cluster::{build_bank, ClusterAssignment, FitOptions, PrototypeBank};
pub use error::{Error, Result};
pub use gate::{predict_batch, GateConfig, GateSignals};
pub use metrics::{evaluate, EvalReport};
pub use model::{
    argmax_class, normalize, softmax, EmbeddingRecord, LabeledEmbeddingSet, Posterior,
    PredictionRecord, Source, UnitEmbedding,
};
pub use retrieval::retrieve;
