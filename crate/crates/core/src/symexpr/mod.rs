//! Exact expression kernel: canonical rational forms over a fixed atom universe.

mod atom;
mod expr;
mod poly;
mod registry;

pub use atom::{ArgSet, Atom, AtomDerivative, MultiIndex};
pub use expr::Expr;
pub use poly::{coeff_int, coeff_ratio, Coeff, Monomial, Poly};
pub use registry::InvertibleRegistry;
