//! Symbolic variational calculus on jet spaces.
//!
//! The crate covers the free jet space (total derivatives, evolutionary
//! fields, Euler operator, Noether forms), equation manifolds given in
//! solved form, internal Lagrangians with their presymplectic structures,
//! and section functionals pulled back from internal Lagrangians.

pub mod eqvariety;
pub mod error;
pub mod forms;
pub mod intlag;
pub mod jetspace;
pub mod linalg;
pub mod notation;
pub mod sections;
pub mod symexpr;
pub mod varcalc;

pub use error::{Error, Result};
