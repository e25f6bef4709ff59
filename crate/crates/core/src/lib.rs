//! Layer-wise analysis of LLM residual-stream activations under truthful,
//! neutral and deceptive instructions.
//!
//! The crate is organised around the stages of the analysis pipeline:
//!
//! - [`corpus`]: statement datasets, logical variants and instruction prompts.
//! - [`store`]: the tensor container format, activation stores and manifests.
//! - [`probes`]: logistic-regression and TTPD probes plus layer sweeps.
//! - [`sae`]: JumpReLU sparse autoencoders, shift metrics and feature rankings.
//! - [`geometry`]: PCA fitting and 2-D projections.
//! - [`report`]: run configuration, CLI orchestration, CSV/JSON/SVG output.
//!
//! [`synth`] builds small synthetic activation dumps with planted structure,
//! used by the test suites and the `make-fixture` subcommand.

pub mod corpus;
pub mod geometry;
pub mod matrix;
pub mod probes;
pub mod report;
pub mod sae;
pub mod store;
pub mod synth;

pub use corpus::{Condition, LogicalForm, Polarity, Statement, StatementSet};
pub use matrix::Matrix;
pub use store::{ActivationStore, StoreManifest, Tensor};
