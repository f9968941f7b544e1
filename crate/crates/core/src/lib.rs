//! Link prediction over hyper-relational temporal knowledge graphs.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: facts, vocabularies, inverse augmentation, neighbor indexes,
//!   proportion sampling and statistics.
//! - [`tensor`]: dense matrices with a reverse-mode autodiff tape.
//! - [`encoder`]: the qualifier-attentional time-aware graph encoder.
//! - [`transformer`] and [`decoder`]: the qualifier-matching decoder.
//! - [`model`]: parameters, configuration presets and batch scoring.
//! - [`train`] and [`eval`]: BCE training with Adam, filtered ranking.
//! - [`bench_builder`]: benchmark reconstruction from quadruple TKGs.

pub mod bench_builder;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;
pub mod transformer;

pub use data::{Dataset, EntityId, HyperFact, LpQuery, Qualifier, RelationId, TiFact, TimeId};
pub use error::{HtkgError, Result};
pub use model::{Model, ModelConfig, Preset};
pub use tensor::{Graph, Matrix, ParamStore, Var};
