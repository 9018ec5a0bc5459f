//! Base densities, the flow-induced model density, and kernel density
//! estimates on 2-D grids.

mod base;
mod kde;
mod model;

pub use base::{adaptive_simpson, soft_uniform_normalizer, BaseDensity, BaseKind};
pub use kde::{column_means, kde_grid, scott_bandwidth, Bandwidth, Grid, GridSpec};
pub use model::{standard_normal_rows, ModelDensity};
