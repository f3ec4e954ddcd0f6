//! Automatic differentiation of straight-line numeric programs in four
//! accumulation modes: forward (`J v`), reverse (`Jᵀ v`), forward inverse
//! (`J⁻ᵀ v`) and reverse inverse (`J⁻¹ v`).
//!
//! Programs are either constant-width register traces ([`trace::Trace`]) or
//! general data-flow graphs ([`lumpify::Dag`]) that are scheduled into
//! constant-width lumps before inversion. [`oracle`] holds an independent
//! dense reference used to check every mode.

pub mod basis;
pub mod checks;
pub mod corpus;
pub mod error;
mod linalg;
pub mod lumpify;
pub mod modes;
pub mod ode;
pub mod oracle;
pub mod program;
pub mod solvers;
pub mod trace;

pub use basis::{builtin_ops, BasisOp, StepLinearization, DEFAULT_SINGULAR_TOL};
pub use error::{AdError, Result};
pub use lumpify::Dag;
pub use modes::Mode;
pub use program::{Differentiable, Program};
pub use trace::{eval_primal, Instruction, Operand, SlotId, Tape, Trace};
