//! Vakonomic and nonholonomic dynamics of Lagrangian systems with velocity
//! constraints in solved form, and tools to compare the two.

// Negated comparisons such as `!(x > 0.0)` are used on purpose so that NaN
// is rejected together with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod comparison;
pub mod error;
pub mod expr;
pub mod integrate;
pub mod maps;
pub mod models;
pub mod nonholonomic;
mod reduced;
pub mod system;
pub mod vakonomic;

pub use error::{Error, Result};
pub use expr::Expression;
pub use system::{load_system, NhState, SystemDef, VakState};
