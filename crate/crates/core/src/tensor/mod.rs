//! Dense double-precision tensors with reverse-mode differentiation.

mod checkpoint;
mod gradcheck;
mod graph;
mod matrix;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{sigmoid, Axis, Graph, Segments, Var};
pub use matrix::{dot, Matrix};
pub use params::{Gradients, ParamId, ParamStore, Parameter};

#[allow(unused_imports)]
pub(crate) use graph::softmax_in_place;
