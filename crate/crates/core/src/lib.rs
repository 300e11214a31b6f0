//! Sound output bounds for feedforward ReLU networks over box input regions.
//!
//! Supported analyses are interval bound propagation (IBP), CROWN (with lazy
//! intermediate bounds or with IBP intermediates) and alpha-CROWN, which
//! optimizes the ReLU lower relaxation slopes by projected gradient descent.

pub mod alpha;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod graph;
pub mod interval;
pub mod onnx;
pub mod tape;
pub mod tensor;
pub mod vnnlib;

pub use analysis::{analyze, AnalysisOptions, Method, RunReport, Verdict};
pub use config::Configuration;
pub use error::{Error, Result};
pub use graph::{GraphNode, NetworkGraph, NodeId, NodeInput, NodeKind};
pub use tensor::{BoundedTensor, Tensor};
