//! Constrained statistical learning by dual ascent over an empirical
//! Lagrangian.

// `!(x > 0.0)` deliberately rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod data;
pub mod error;
pub mod lagrangian;
pub mod loss;
pub mod models;
pub mod oracle;
pub mod primaldual;
pub mod problem;
pub mod rate;
pub mod robust;

pub use error::{Error, Result};
pub use lagrangian::{DualState, InnerSolverConfig};
pub use loss::{LossKind, LossSpec};
pub use models::{Architecture, ModelState};
pub use primaldual::{train, train_alternating, TrainConfig, TrainTrace};
pub use problem::{ConstraintSpec, Dataset, Label, Problem, RiskTerm, Sample};
