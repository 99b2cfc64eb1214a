//! Numerical laboratory for a two-strain SIR model with coinfection and a
//! logistic susceptible population.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bifurcation;
pub mod equilibria;
pub mod error;
pub mod export;
pub mod integrator;
pub mod lyapunov;
pub mod model;
pub mod sampling;
pub mod stability;

pub use error::{Error, Result};
pub use model::{Admissibility, DerivedQuantities, FullModelParameters, ModelParameters, State};
