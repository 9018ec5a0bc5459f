//! Neural parameterizations: softplus MLP energies and the relu Gaussian
//! momentum encoder.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Expr, Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::fields::{Dependence, ScalarField};

/// Lower bound added to the encoder scale so it never reaches zero.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Softplus,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub prefix: String,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, activation: Activation, prefix: impl Into<String>) -> Self {
        MlpSpec {
            sizes,
            activation,
            prefix: prefix.into(),
        }
    }

    /// `[input, hidden.., output]`.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        prefix: impl Into<String>,
    ) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, activation, prefix)
    }

    fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::contract(format!(
                "MLP `{}` needs at least two non-zero layer sizes, got {:?}",
                self.prefix, self.sizes
            )));
        }
        Ok(())
    }
}

/// Multi-layer perceptron with a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers the weights in `store` and initializes them: He-scaled normals
    /// for relu nets, Xavier-scaled for softplus nets, zero biases. The final
    /// layer's weights are multiplied by `final_scale`.
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        store: &mut ParamStore,
        rng: &mut R,
        final_scale: f64,
    ) -> Result<Self> {
        spec.validate()?;
        let n_layers = spec.sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (spec.sizes[l], spec.sizes[l + 1]);
            let var = match spec.activation {
                Activation::Relu => 2.0 / fan_in as f64,
                Activation::Softplus => 2.0 / (fan_in + fan_out) as f64,
            };
            let scale = var.sqrt() * if l + 1 == n_layers { final_scale } else { 1.0 };
            let w = store.register(format!("{}.w{l}", spec.prefix), fan_in, fan_out, || {
                scale * rng.sample::<f64, _>(StandardNormal)
            })?;
            let b = store.register(format!("{}.b{l}", spec.prefix), 1, fan_out, || 0.0)?;
            layers.push((w, b));
        }
        Ok(Mlp { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.spec.sizes.last().expect("validated")
    }

    /// `(weight, bias)` handles per layer.
    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Network output for an `n × input` batch.
    pub fn apply(&self, g: &mut Graph<'_>, x: Expr) -> Result<Expr> {
        let cols = g.shape(x).1;
        if cols != self.input_dim() {
            return Err(Error::contract(format!(
                "MLP `{}` expects {} inputs, got {cols}",
                self.spec.prefix,
                self.input_dim()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let w = g.param(w)?;
            let b = g.param(b)?;
            h = g.affine(h, w, b);
            if l < last {
                h = match self.spec.activation {
                    Activation::Softplus => g.softplus(h),
                    Activation::Relu => g.relu(h),
                };
            }
        }
        Ok(h)
    }
}

/// Scalar energy given by a softplus MLP of one coordinate block,
/// e.g. the kinetic energy `K(p)` or the potential `U(q)`.
#[derive(Clone, Debug)]
pub struct MlpField {
    mlp: Mlp,
    block: Dependence,
}

impl MlpField {
    /// Fails unless the network is softplus (the bracket needs smooth second
    /// derivatives), scalar-valued, and `block` is a single block.
    pub fn new(mlp: Mlp, block: Dependence) -> Result<Self> {
        if mlp.spec().activation != Activation::Softplus {
            return Err(Error::contract(
                "energy networks must use softplus; relu has no useful second derivative",
            ));
        }
        if mlp.output_dim() != 1 {
            return Err(Error::contract("energy networks must have one output"));
        }
        if block == Dependence::Both {
            return Err(Error::contract("MlpField reads exactly one coordinate block"));
        }
        Ok(MlpField { mlp, block })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }
}

impl ScalarField for MlpField {
    fn build(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        let x = if self.block == Dependence::Position { q } else { p };
        self.mlp.apply(g, x)
    }

    fn dependence(&self) -> Dependence {
        self.block
    }
}

/// Softplus MLP of the squared norm of one block, `f(‖x‖²)`. Rotation
/// invariant by construction.
#[derive(Clone, Debug)]
pub struct RadialField {
    mlp: Mlp,
    block: Dependence,
}

impl RadialField {
    pub fn new(mlp: Mlp, block: Dependence) -> Result<Self> {
        if mlp.input_dim() != 1 || mlp.output_dim() != 1 {
            return Err(Error::contract("radial field network must map 1 → 1"));
        }
        if mlp.spec().activation != Activation::Softplus || block == Dependence::Both {
            return Err(Error::contract(
                "radial field needs a softplus network on a single block",
            ));
        }
        Ok(RadialField { mlp, block })
    }
}

impl ScalarField for RadialField {
    fn build(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        let x = if self.block == Dependence::Position { q } else { p };
        let sq = g.square(x);
        let r2 = g.sum_cols(sq);
        self.mlp.apply(g, r2)
    }

    fn dependence(&self) -> Dependence {
        self.block
    }
}

/// Diagonal Gaussian `h(p | q) = N(p; μ(q), σ(q))` with two disjoint relu MLPs.
/// The scale is `softplus(raw) + SCALE_FLOOR`.
#[derive(Clone, Debug)]
pub struct GaussianEncoder {
    mean: Mlp,
    scale: Mlp,
}

/// Pathwise momentum sample and its log-density under the encoder.
#[derive(Clone, Copy, Debug)]
pub struct EncoderSample {
    /// `n × d`
    pub p: Expr,
    /// `n × 1`
    pub log_density: Expr,
}

impl GaussianEncoder {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let mean = Mlp::new(
            MlpSpec::with_hidden(dim, hidden, dim, Activation::Relu, "encoder.mean"),
            store,
            rng,
            1.0,
        )?;
        let scale = Mlp::new(
            MlpSpec::with_hidden(dim, hidden, dim, Activation::Relu, "encoder.scale"),
            store,
            rng,
            1.0,
        )?;
        Self::from_parts(mean, scale)
    }

    pub fn from_parts(mean: Mlp, scale: Mlp) -> Result<Self> {
        let d = mean.input_dim();
        if mean.output_dim() != d || scale.input_dim() != d || scale.output_dim() != d {
            return Err(Error::contract("encoder networks must map d → d"));
        }
        Ok(GaussianEncoder { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean
    }

    pub fn scale_net(&self) -> &Mlp {
        &self.scale
    }

    pub fn mean(&self, g: &mut Graph<'_>, q: Expr) -> Result<Expr> {
        self.mean.apply(g, q)
    }

    pub fn scale(&self, g: &mut Graph<'_>, q: Expr) -> Result<Expr> {
        let raw = self.scale.apply(g, q)?;
        let sp = g.softplus(raw);
        Ok(g.offset(sp, SCALE_FLOOR))
    }

    /// `p = μ(q) + σ(q) ⊙ noise` and `ln h(p | q)`.
    pub fn sample(&self, g: &mut Graph<'_>, q: Expr, noise: Expr) -> Result<EncoderSample> {
        if g.shape(noise) != g.shape(q) {
            return Err(Error::contract(format!(
                "noise shape {:?} does not match positions {:?}",
                g.shape(noise),
                g.shape(q)
            )));
        }
        let d = self.dim() as f64;
        let mu = self.mean(g, q)?;
        let sigma = self.scale(g, q)?;
        let shift = g.mul(sigma, noise);
        let p = g.add(mu, shift);

        let log_sigma = g.ln(sigma);
        let n2 = g.square(noise);
        let half_n2 = g.scale(n2, 0.5);
        let per_dim = g.add(log_sigma, half_n2);
        let total = g.sum_cols(per_dim);
        let neg = g.neg(total);
        let log_density = g.offset(neg, -0.5 * d * (2.0 * PI).ln());
        Ok(EncoderSample { p, log_density })
    }
}

/// Diagonal Gaussian log-density, evaluated directly.
pub fn diag_gaussian_log_density(x: &[f64], mean: &[f64], scale: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(scale)
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -0.5 * (2.0 * PI).ln() - s.ln() - 0.5 * z * z
        })
        .sum()
}
