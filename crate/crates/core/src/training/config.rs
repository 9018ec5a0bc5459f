use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::densities::BaseKind;
use crate::error::{Error, Result};
use crate::symmetry::Generator;

/// Where training positions come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetKind {
    /// Ring of radius 2 with radial spread 0.2; exactly rotation invariant.
    So2Ring,
    /// Four equal-weight isotropic Gaussians at `(±2, ±2)`, `σ = 0.4`.
    GaussianMixture,
    /// Positions read from a CSV file (header row, one column per coordinate).
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Fixed training-set size; `null` draws fresh samples every step.
    pub train_size: Option<usize>,
    pub test_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_size: None,
            test_size: 2048,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub dt: f64,
    pub leapfrog_steps: usize,
    /// Number of distinct Hamiltonians chained in the flow.
    pub hamiltonians: usize,
    /// Hidden widths of the `K` and `U` networks.
    pub hidden: Vec<usize>,
    /// Scale applied to the initial final-layer weights of `K` and `U`.
    pub final_layer_scale: f64,
    /// Adds `‖p‖²/2` to the learned kinetic energy.
    pub quadratic_kinetic: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 0.5,
            leapfrog_steps: 2,
            hamiltonians: 1,
            hidden: vec![128, 128],
            final_layer_scale: 1.0,
            quadratic_kinetic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: vec![128, 128],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub generator: Generator,
    /// Constraint precision; the squared bracket is penalized above it.
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SymmetryConfig {
    /// Empty for an unconstrained model.
    pub constraints: Vec<ConstraintConfig>,
    pub lambda_init: f64,
    pub ascent_rate: f64,
    /// Base-density samples per step for the penalty expectation.
    pub batch_size: usize,
}

impl Default for SymmetryConfig {
    fn default() -> Self {
        SymmetryConfig {
            constraints: Vec::new(),
            lambda_init: 1.0,
            ascent_rate: 0.01,
            batch_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: usize,
    pub eval_every: usize,
    /// Positions used for each train/test ELBO evaluation.
    pub eval_size: usize,
    /// `0` writes a checkpoint only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: 20_000,
            eval_every: 250,
            eval_size: 2048,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub grid_half_width: f64,
    pub grid_points: usize,
    /// Model samples behind the model KDE grid.
    pub kde_samples: usize,
    pub trajectories: usize,
    pub trajectory_steps: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            grid_half_width: 4.0,
            grid_points: 101,
            kde_samples: 10_000,
            trajectories: 32,
            trajectory_steps: 40,
        }
    }
}

/// Complete description of one training run. Only `dataset` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_base")]
    pub base: BaseKind,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub symmetry: SymmetryConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub export: ExportConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_base() -> BaseKind {
    BaseKind::SphericalNormal
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetKind) -> Self {
        ExperimentConfig {
            dataset,
            data: DataConfig::default(),
            base: default_base(),
            flow: FlowConfig::default(),
            encoder: EncoderConfig::default(),
            symmetry: SymmetryConfig::default(),
            optimizer: OptimizerConfig::default(),
            training: TrainingConfig::default(),
            export: ExportConfig::default(),
            seed: 0,
            output_dir: default_output_dir(),
        }
    }

    /// Parses and validates JSON text. Errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.to_string();
            // serde reports a missing top-level field at the root
            let path = match (path.as_str(), missing_field(&message)) {
                (".", Some(f)) => f.to_string(),
                (_, Some(f)) => format!("{path}.{f}"),
                _ => path,
            };
            Error::config(path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(path: &str, x: f64) -> Result<()> {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(path, format!("must be positive and finite, got {x}")))
            }
        }
        fn nonzero(path: &str, x: usize) -> Result<()> {
            if x > 0 {
                Ok(())
            } else {
                Err(Error::config(path, "must be at least 1"))
            }
        }
        if let Some(n) = self.data.train_size {
            nonzero("data.train_size", n)?;
        }
        nonzero("data.test_size", self.data.test_size)?;
        if let BaseKind::SoftUniform { width, sharpness } = self.base {
            positive("base.width", width)?;
            positive("base.sharpness", sharpness)?;
        }
        positive("flow.dt", self.flow.dt)?;
        nonzero("flow.leapfrog_steps", self.flow.leapfrog_steps)?;
        nonzero("flow.hamiltonians", self.flow.hamiltonians)?;
        for (i, &w) in self.flow.hidden.iter().enumerate() {
            nonzero(&format!("flow.hidden[{i}]"), w)?;
        }
        positive("flow.final_layer_scale", self.flow.final_layer_scale)?;
        for (i, &w) in self.encoder.hidden.iter().enumerate() {
            nonzero(&format!("encoder.hidden[{i}]"), w)?;
        }
        for (i, c) in self.symmetry.constraints.iter().enumerate() {
            if !(c.kappa >= 0.0 && c.kappa.is_finite()) {
                return Err(Error::config(
                    format!("symmetry.constraints[{i}].kappa"),
                    format!("must be finite and ≥ 0, got {}", c.kappa),
                ));
            }
        }
        positive("symmetry.lambda_init", self.symmetry.lambda_init)?;
        positive("symmetry.ascent_rate", self.symmetry.ascent_rate)?;
        nonzero("symmetry.batch_size", self.symmetry.batch_size)?;
        let o = &self.optimizer;
        positive("optimizer.learning_rate", o.learning_rate)?;
        positive("optimizer.eps", o.eps)?;
        for (path, b) in [("optimizer.beta1", o.beta1), ("optimizer.beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(path, format!("must lie in [0, 1), got {b}")));
            }
        }
        nonzero("optimizer.batch_size", o.batch_size)?;
        nonzero("training.eval_every", self.training.eval_every)?;
        nonzero("training.eval_size", self.training.eval_size)?;
        positive("export.grid_half_width", self.export.grid_half_width)?;
        if self.export.grid_points < 3 {
            return Err(Error::config("export.grid_points", "must be at least 3"));
        }
        nonzero("export.kde_samples", self.export.kde_samples)?;
        Ok(())
    }

    /// Number of position coordinates implied by the dataset, when known
    /// without reading files.
    pub fn synthetic_dim(&self) -> Option<usize> {
        match self.dataset {
            DatasetKind::So2Ring | DatasetKind::GaussianMixture => Some(2),
            DatasetKind::File { .. } => None,
        }
    }
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}
