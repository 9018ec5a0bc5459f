use std::path::Path;

use crate::autodiff::ParamStore;
use crate::densities::{BaseDensity, ModelDensity};
use crate::dynamics::{FlowSpec, Hamiltonian};
use crate::error::{Error, Result};
use crate::fields::{half_square_norm, Dependence, ScalarField, SumField};
use crate::networks::{Activation, GaussianEncoder, Mlp, MlpField, MlpSpec};
use crate::seed::rng_for;
use crate::symmetry::GeneratorSet;

use super::config::ExperimentConfig;

/// A model with freshly initialized parameters.
pub struct BuiltModel {
    pub model: ModelDensity,
    pub store: ParamStore,
    pub generators: GeneratorSet,
}

/// Builds networks, flow, base density and generator set for `d`-dimensional
/// positions. Parameters are drawn from the `init` sub-seed.
pub fn build_model(cfg: &ExperimentConfig, d: usize) -> Result<BuiltModel> {
    let mut rng = rng_for(cfg.seed, "init");
    let mut store = ParamStore::new();
    let mut hams = Vec::with_capacity(cfg.flow.hamiltonians);
    for i in 0..cfg.flow.hamiltonians {
        let k = Mlp::new(
            MlpSpec::with_hidden(d, &cfg.flow.hidden, 1, Activation::Softplus, format!("h{i}.kinetic")),
            &mut store,
            &mut rng,
            cfg.flow.final_layer_scale,
        )?;
        let u = Mlp::new(
            MlpSpec::with_hidden(d, &cfg.flow.hidden, 1, Activation::Softplus, format!("h{i}.potential")),
            &mut store,
            &mut rng,
            cfg.flow.final_layer_scale,
        )?;
        let mut kinetic: Box<dyn ScalarField> = Box::new(MlpField::new(k, Dependence::Momentum)?);
        if cfg.flow.quadratic_kinetic {
            kinetic = Box::new(SumField::new(vec![
                kinetic,
                Box::new(half_square_norm(Dependence::Momentum)),
            ])?);
        }
        hams.push(Hamiltonian::new(
            kinetic,
            Box::new(MlpField::new(u, Dependence::Position)?),
        )?);
    }
    let flow = FlowSpec::new(hams, cfg.flow.dt, cfg.flow.leapfrog_steps)?;
    let encoder = GaussianEncoder::new(d, &cfg.encoder.hidden, &mut store, &mut rng)?;
    let base = BaseDensity::new(cfg.base.clone(), 2 * d)?;
    let model = ModelDensity::new(flow, base, encoder)?;
    let mut generators = GeneratorSet::new();
    for (i, c) in cfg.symmetry.constraints.iter().enumerate() {
        c.generator
            .validate(d)
            .map_err(|e| Error::config(format!("symmetry.constraints[{i}].generator"), e.to_string()))?;
        generators.push(c.generator.clone(), c.kappa, cfg.symmetry.lambda_init)?;
    }
    Ok(BuiltModel {
        model,
        store,
        generators,
    })
}

/// Rebuilds the architecture from `cfg` and loads trained values from a
/// checkpoint file. A file that does not parse or does not match the
/// architecture is a checkpoint error.
pub fn load_model(cfg: &ExperimentConfig, d: usize, checkpoint: &Path) -> Result<BuiltModel> {
    let mut built = build_model(cfg, d)?;
    let loaded = ParamStore::load(checkpoint).map_err(|e| match e {
        Error::Io(io) => Error::Checkpoint(format!("{}: {io}", checkpoint.display())),
        other => other,
    })?;
    built.store.assign(&loaded)?;
    Ok(built)
}
