//! ELBO and constrained-Lagrangian training, datasets, export and sweeps.

mod adam;
mod build;
mod config;
mod data;
mod export;
mod objective;
mod sweep;
mod train;

pub use adam::Adam;
pub use build::{build_model, load_model, BuiltModel};
pub use config::{
    ConstraintConfig, DataConfig, DatasetKind, EncoderConfig, ExperimentConfig, ExportConfig,
    FlowConfig, OptimizerConfig, SymmetryConfig, TrainingConfig,
};
pub use data::{
    gather_rows, head_rows, make_dataset, read_positions_csv, Dataset, EpochSampler, Target,
    MIXTURE_CENTERS, MIXTURE_SIGMA, RING_RADIUS, RING_SIGMA,
};
pub use export::*;
pub use objective::{
    elbo, elbo_expr, lagrangian, lagrangian_expr, lagrangian_with_grad, mean_elbo, LagrangianExprs,
};
pub use sweep::*;
pub use train::*;
