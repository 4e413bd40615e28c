//! Affective Processes: neural-process regression of per-frame affect from
//! frozen backbone features, conditioned on a context set of pseudo-labelled
//! frames.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autodiff`]) drives the model ([`model`]), the composite objective and
//! optimiser ([`training`]), and windowed evaluation ([`eval`]).

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod context;
pub mod data;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use config::{ContextMode, LossVariant, LossWeights, ModelConfig, ModelVariant, RegPooling, RunConfig, Task};
pub use context::{ContextTargetSplit, LabelSource};
pub use data::{Sequence, SyntheticSpec};
pub use distributions::DiagonalGaussian;
pub use error::{Error, Result};
pub use eval::{EvalConfig, EvalReport};
pub use model::{ApModel, ModelParams};
pub use tensor::Tensor;
