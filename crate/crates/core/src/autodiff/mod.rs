//! Second-order capable automatic differentiation over matrix-valued graphs.

mod graph;
mod params;
mod reverse;

pub use graph::{sigmoid, softplus, Expr, Graph, Shape};
pub use params::{ParamId, ParamInfo, ParamStore};
pub(crate) use params::write_atomic;

#[cfg(test)]
mod tests;
