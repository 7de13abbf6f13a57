//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive applied to its variables; calling
//! [`Graph::backward`] on a scalar walks that record in reverse. All CNN
//! layers used by the models are expressed with the primitives here.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_random, primitive_cases, relative_error, GradCheckReport, PrimitiveCase};
pub use graph::{CustomBackward, Graph, Var};
pub use tensor::Tensor;
