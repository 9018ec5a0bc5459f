//! Hamiltonian normalizing flows whose densities respect known Lie-group
//! symmetries.
//!
//! A separable Hamiltonian `H(q, p) = K(p) + U(q)` built from softplus MLPs
//! drives a leapfrog flow that is exactly invertible and volume preserving.
//! Momenta are latent: an encoder proposes `p` given data `q`, and training
//! maximizes the evidence lower bound while a Lagrange-multiplier penalty on
//! the Poisson bracket `{g, H}` keeps the flow equivariant under the supplied
//! symmetry generators `g`.

pub mod autodiff;
pub mod densities;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod networks;
pub mod phase;
pub mod seed;
pub mod symmetry;
pub mod training;

pub use error::{Error, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
