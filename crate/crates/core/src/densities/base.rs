use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Expr, Graph};
use crate::error::{Error, Result};
use crate::phase::{PhaseBatch, StateVector};
use crate::seed::stream_rng;

/// Base density family and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseKind {
    /// `N(s; 0, I)` over all of phase space.
    SphericalNormal,
    /// Per coordinate `∝ sigmoid(β(s + w/2)) · sigmoid(−β(s − w/2))`: a box of
    /// width `w` with edges of sharpness `β`.
    SoftUniform { width: f64, sharpness: f64 },
}

/// Normalized base density `π` on the `2d`-dimensional phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseDensity {
    kind: BaseKind,
    phase_dim: usize,
    /// Log normalizer of one coordinate.
    log_norm: f64,
}

impl BaseDensity {
    pub fn new(kind: BaseKind, phase_dim: usize) -> Result<Self> {
        if phase_dim == 0 || !phase_dim.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "phase-space dimension must be even and positive, got {phase_dim}"
            )));
        }
        let log_norm = match kind {
            BaseKind::SphericalNormal => 0.5 * (2.0 * PI).ln(),
            BaseKind::SoftUniform { width, sharpness } => {
                if !(width > 0.0 && width.is_finite()) {
                    return Err(Error::config("base.width", "width must be positive"));
                }
                if !(sharpness > 0.0 && sharpness.is_finite()) {
                    return Err(Error::config("base.sharpness", "sharpness must be positive"));
                }
                soft_uniform_normalizer(width, sharpness).ln()
            }
        };
        Ok(BaseDensity {
            kind,
            phase_dim,
            log_norm,
        })
    }

    pub fn spherical_normal(phase_dim: usize) -> Result<Self> {
        Self::new(BaseKind::SphericalNormal, phase_dim)
    }

    pub fn soft_uniform(phase_dim: usize, width: f64, sharpness: f64) -> Result<Self> {
        Self::new(BaseKind::SoftUniform { width, sharpness }, phase_dim)
    }

    pub fn kind(&self) -> &BaseKind {
        &self.kind
    }

    pub fn phase_dim(&self) -> usize {
        self.phase_dim
    }

    /// Unnormalized log-density of one coordinate.
    pub fn coordinate_log_weight(&self, x: f64) -> f64 {
        match self.kind {
            BaseKind::SphericalNormal => -0.5 * x * x,
            BaseKind::SoftUniform { width, sharpness } => {
                soft_uniform_log_weight(x, width, sharpness)
            }
        }
    }

    pub fn coordinate_log_prob(&self, x: f64) -> f64 {
        self.coordinate_log_weight(x) - self.log_norm
    }

    pub fn log_prob(&self, s: &StateVector) -> Result<f64> {
        if 2 * s.dim() != self.phase_dim {
            return Err(Error::contract(format!(
                "state of dimension {} for base density on {} coordinates",
                2 * s.dim(),
                self.phase_dim
            )));
        }
        Ok(s.q
            .iter()
            .chain(&s.p)
            .map(|&x| self.coordinate_log_prob(x))
            .sum())
    }

    /// Log-density of the position marginal; the base density factorizes, so
    /// this is the sum over the position coordinates only.
    pub fn position_log_prob(&self, q: &[f64]) -> f64 {
        q.iter().map(|&x| self.coordinate_log_prob(x)).sum()
    }

    /// `ln π(q, p)` per row, as a differentiable `n × 1` node.
    pub fn log_prob_expr(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        if g.shape(q) != g.shape(p) || 2 * g.shape(q).1 != self.phase_dim {
            return Err(Error::contract("state batch does not match base density"));
        }
        let s = g.concat(q, p);
        let weights = match self.kind {
            BaseKind::SphericalNormal => {
                let sq = g.square(s);
                g.scale(sq, -0.5)
            }
            BaseKind::SoftUniform { width, sharpness } => {
                // ln sigmoid(a) = −softplus(−a)
                let bs = g.scale(s, sharpness);
                let lower = g.offset(bs, 0.5 * sharpness * width);
                let lower = g.neg(lower);
                let lower = g.softplus(lower);
                let upper = g.offset(bs, -0.5 * sharpness * width);
                let upper = g.softplus(upper);
                let both = g.add(lower, upper);
                g.neg(both)
            }
        };
        let total = g.sum_cols(weights);
        Ok(g.offset(total, -(self.phase_dim as f64) * self.log_norm))
    }

    /// `count` i.i.d. states; sample `i` uses the stream `(seed, i)`.
    pub fn sample(&self, count: usize, seed: u64) -> PhaseBatch {
        let d = self.phase_dim / 2;
        let mut q = ndarray::Array2::zeros((count, d));
        let mut p = ndarray::Array2::zeros((count, d));
        for i in 0..count {
            let mut rng = stream_rng(seed, i as u64);
            for j in 0..d {
                q[[i, j]] = self.sample_coordinate(&mut rng);
            }
            for j in 0..d {
                p[[i, j]] = self.sample_coordinate(&mut rng);
            }
        }
        PhaseBatch { q, p }
    }

    fn sample_coordinate<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.kind {
            BaseKind::SphericalNormal => rng.sample(StandardNormal),
            BaseKind::SoftUniform { width, sharpness } => {
                // envelope: 1 on the plateau, e^{-β(|x|-w/2)} beyond it
                let edge = 0.5 * width;
                let tail = 1.0 / sharpness;
                let total = width + 2.0 * tail;
                loop {
                    let u = rng.random::<f64>() * total;
                    let (x, log_env) = if u < width {
                        (u - edge, 0.0)
                    } else {
                        let e = -tail * rng.random::<f64>().ln();
                        let side = if u < width + tail { 1.0 } else { -1.0 };
                        (side * (edge + e), -sharpness * e)
                    };
                    let log_ratio = soft_uniform_log_weight(x, width, sharpness) - log_env;
                    if rng.random::<f64>().ln() < log_ratio {
                        return x;
                    }
                }
            }
        }
    }

    /// Per-coordinate acceptance probability of the soft-uniform rejection
    /// sampler, `Z / (w + 2/β)`; 1 for the normal.
    pub fn acceptance_rate(&self) -> f64 {
        match self.kind {
            BaseKind::SphericalNormal => 1.0,
            BaseKind::SoftUniform { width, sharpness } => {
                self.log_norm.exp() / (width + 2.0 / sharpness)
            }
        }
    }
}

fn soft_uniform_log_weight(x: f64, width: f64, sharpness: f64) -> f64 {
    -softplus(-sharpness * (x + 0.5 * width)) - softplus(sharpness * (x - 0.5 * width))
}

/// One-dimensional normalizer of the soft-uniform density, by adaptive Simpson
/// quadrature to an absolute tolerance of `1e-10`.
pub fn soft_uniform_normalizer(width: f64, sharpness: f64) -> f64 {
    // beyond 40/β past each edge the integrand is below e^{-40}
    let reach = 0.5 * width + 40.0 / sharpness;
    let f = |x: f64| soft_uniform_log_weight(x, width, sharpness).exp();
    // integrate the plateau and each edge separately so no interval straddles
    // a sharp transition at the coarsest level
    let edge = 0.5 * width;
    adaptive_simpson(&f, -reach, -edge, 1e-11)
        + adaptive_simpson(&f, -edge, edge, 1e-11)
        + adaptive_simpson(&f, edge, reach, 1e-11)
}

pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}
