//! Video question answering over syntactic hypergraphs.
//!
//! Questions arrive as dependency parses and become hypergraphs whose
//! hyperedges are the word sets of syntactic subtrees. Hyperedge
//! representations are aligned with frame and clip features through an
//! optimal-transport plan, the cross-modal influences are fused back into
//! both modalities by stacked blocks, and a pooled representation feeds one
//! of three answer heads.
//!
//! Module map:
//!
//! - [`deptree`]: CoNLL-U ingestion and tree traversal
//! - [`hypergraph`]: subtree enumeration and incidence/degree matrices
//! - [`numcore`]: matrices, the differentiation tape and elementary layers
//! - [`otalign`]: cosine costs, the proximal-point transport solver, baselines
//! - [`fusion`]: the cross-modal hypergraph convolution block and stacking
//! - [`qahead`]: attention pooling and the open-ended/count/multiple-choice heads
//! - [`pipeline`]: file formats, synthetic data, configuration, training and evaluation

pub mod deptree;
pub mod error;
pub mod fusion;
pub mod hypergraph;
pub mod numcore;
pub mod otalign;
pub mod pipeline;
pub mod qahead;

pub use deptree::{DependencyTree, Token};
pub use error::{Error, Result};
pub use fusion::{AlignMode, BlockParams, FeatureBundle, SyntaxMode};
pub use hypergraph::{Hyperedge, SyntacticHypergraph};
pub use numcore::{Graph, Matrix, ParamId, ParamStore, Var};
pub use otalign::TransportPlan;
