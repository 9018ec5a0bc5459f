//! Symmetry generators, the commutator penalty, conserved-charge diagnostics
//! and invariance checks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Expr, Graph, ParamStore};
use crate::densities::{BaseDensity, ModelDensity};
use crate::dynamics::{graph_for, leapfrog_step, poisson_bracket, Direction, FlowSpec};
use crate::error::{Error, Result};
use crate::fields::{build_checked, coord, field_values, ScalarField};
use crate::dynamics::infinitesimal_transform_at;
use crate::phase::{rotate_rows, PhaseBatch, StateVector};

/// Momentum of the exponential moving average of constraint slacks.
pub const EMA_MOMENTUM: f64 = 0.99;

/// A built-in symmetry generator. Indices are zero-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Generator {
    /// `g = q_i p_j − q_j p_i`, rotations in the `(i, j)` plane.
    AngularMomentum { i: usize, j: usize },
    /// `g = qᵀ A p` for a square matrix `A` given as rows.
    Bilinear { matrix: Vec<Vec<f64>> },
}

impl Generator {
    /// The single generator of planar rotations, `q₁p₂ − q₂p₁`.
    pub fn so2() -> Self {
        Generator::AngularMomentum { i: 0, j: 1 }
    }

    /// Checks the generator is defined on `d`-dimensional positions.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            Generator::AngularMomentum { i, j } => {
                if i == j || *i >= d || *j >= d {
                    return Err(Error::contract(format!(
                        "angular momentum ({i}, {j}) needs two distinct indices below {d}"
                    )));
                }
            }
            Generator::Bilinear { matrix } => {
                if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::contract(format!("bilinear generator needs a {d}×{d} matrix")));
                }
                if matrix.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::contract("bilinear generator matrix is not finite"));
                }
            }
        }
        Ok(())
    }

    /// Largest `|∂²g/∂p_i∂p_j|` over `states`, computed by differentiating
    /// the momentum gradient a second time.
    pub fn momentum_hessian_max(&self, states: &PhaseBatch) -> Result<f64> {
        let mut g = Graph::new();
        let q = g.input(states.q.clone());
        let p = g.input(states.p.clone());
        let v = build_checked(self, &mut g, q, p)?;
        let total = g.sum(v);
        let dp = g.grad(total, &[p])?[0];
        let mut worst = 0.0f64;
        for j in 0..states.dim() {
            let col = g.columns(dp, j, 1);
            let s = g.sum(col);
            let h = g.grad(s, &[p])?[0];
            worst = g.value(h).iter().fold(worst, |m, x| m.max(x.abs()));
        }
        Ok(worst)
    }
}

impl ScalarField for Generator {
    fn build(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        let d = g.shape(q).1;
        self.validate(d)?;
        match self {
            Generator::AngularMomentum { i, j } => {
                let qi = coord(g, q, *i);
                let qj = coord(g, q, *j);
                let pi = coord(g, p, *i);
                let pj = coord(g, p, *j);
                let a = g.mul(qi, pj);
                let b = g.mul(qj, pi);
                Ok(g.sub(a, b))
            }
            Generator::Bilinear { matrix } => {
                let a = Array2::from_shape_fn((d, d), |(r, c)| matrix[r][c]);
                let a = g.constant(a);
                let qa = g.matmul(q, a);
                let prod = g.mul(qa, p);
                Ok(g.sum_cols(prod))
            }
        }
    }
}

/// One generator with its constraint precision `κ`, multiplier `λ` and slack
/// average.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub generator: Generator,
    pub kappa: f64,
    pub lambda: f64,
    /// `None` until the first slack is observed; the average starts there.
    pub slack_ema: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratorSet {
    constraints: Vec<Constraint>,
}

impl GeneratorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, generator: Generator, kappa: f64, lambda: f64) -> Result<()> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::contract(format!("κ must be finite and ≥ 0, got {kappa}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::contract(format!("λ must be finite and ≥ 0, got {lambda}")));
        }
        self.constraints.push(Constraint {
            generator,
            kappa,
            lambda,
            slack_ema: None,
        });
        Ok(())
    }

    pub fn with(mut self, generator: Generator, kappa: f64, lambda: f64) -> Result<Self> {
        self.push(generator, kappa, lambda)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.lambda).collect()
    }

    pub fn set_lambdas(&mut self, lambdas: &[f64]) -> Result<()> {
        if lambdas.len() != self.len() {
            return Err(Error::contract("one multiplier per generator"));
        }
        for (c, &l) in self.constraints.iter_mut().zip(lambdas) {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::contract(format!("λ must be finite and ≥ 0, got {l}")));
            }
            c.lambda = l;
        }
        Ok(())
    }

    /// Folds one step's slacks into the running averages.
    pub fn observe(&mut self, slacks: &[f64]) -> Result<()> {
        if slacks.len() != self.len() {
            return Err(Error::contract("one slack per generator"));
        }
        for (c, &s) in self.constraints.iter_mut().zip(slacks) {
            c.slack_ema = Some(match c.slack_ema {
                None => s,
                Some(e) => EMA_MOMENTUM * e + (1.0 - EMA_MOMENTUM) * s,
            });
        }
        Ok(())
    }

    /// Multiplier ascent on every generator with an observed slack average.
    pub fn ascend(&mut self, rate: f64) {
        for c in &mut self.constraints {
            if let Some(e) = c.slack_ema {
                c.lambda = lambda_ascent(c.lambda, e, rate);
            }
        }
    }

    /// All constraints satisfied: every slack average is `≤ 0`.
    pub fn satisfied(&self) -> bool {
        self.constraints
            .iter()
            .all(|c| c.slack_ema.is_some_and(|e| e <= 0.0))
    }
}

/// `λ ← max(0, λ·exp(rate·ema))`.
pub fn lambda_ascent(lambda: f64, slack_ema: f64, rate: f64) -> f64 {
    (lambda * (rate * slack_ema).exp()).max(0.0)
}

/// `Ĉ_k = mean_s {g_k, H}(s)² − κ_k` as `1 × 1` nodes.
pub fn commutator_penalty_exprs(
    g: &mut Graph<'_>,
    set: &GeneratorSet,
    h: &dyn ScalarField,
    q: Expr,
    p: Expr,
) -> Result<Vec<Expr>> {
    if g.shape(q).0 == 0 {
        return Err(Error::contract("commutator penalty over an empty batch"));
    }
    set.constraints
        .iter()
        .map(|c| {
            let b = poisson_bracket(g, &c.generator, h, q, p)?;
            let sq = g.square(b);
            let m = g.mean(sq);
            Ok(g.offset(m, -c.kappa))
        })
        .collect()
}

pub fn commutator_penalty(
    set: &GeneratorSet,
    h: &dyn ScalarField,
    params: Option<&ParamStore>,
    samples: &PhaseBatch,
) -> Result<Vec<f64>> {
    let mut g = graph_for(params);
    let q = g.input(samples.q.clone());
    let p = g.input(samples.p.clone());
    let c = commutator_penalty_exprs(&mut g, set, h, q, p)?;
    Ok(c.iter().map(|&e| g.scalar_value(e)).collect())
}

/// Per-state `max_t |g(s_t) − g(s_0)|` over `steps` leapfrog steps of the
/// flow, cycling through its Hamiltonians as one pass of the flow would.
pub fn noether_drift_batch(
    gen: &dyn ScalarField,
    flow: &FlowSpec,
    params: Option<&ParamStore>,
    s0: &PhaseBatch,
    steps: usize,
) -> Result<Vec<f64>> {
    let g0 = field_values(gen, params, s0)?;
    let mut drift = vec![0.0f64; s0.len()];
    let mut cur = s0.clone();
    let hams = flow.hamiltonians();
    for t in 0..steps {
        let h = &hams[(t / flow.steps()) % hams.len()];
        let mut g = graph_for(params);
        let q = g.input(cur.q.clone());
        let p = g.input(cur.p.clone());
        let (q, p) = leapfrog_step(&mut g, h, flow.dt(), q, p, Direction::Forward)
            .map_err(|e| match e {
                Error::Numeric { message, .. } => Error::numeric(format!("leapfrog step {t}"), message),
                other => other,
            })?;
        cur = PhaseBatch::new(g.value(q).clone(), g.value(p).clone())?;
        let gt = field_values(gen, params, &cur)?;
        for ((d, a), b) in drift.iter_mut().zip(&gt).zip(&g0) {
            *d = d.max((a - b).abs());
        }
    }
    Ok(drift)
}

pub fn noether_drift(
    gen: &dyn ScalarField,
    flow: &FlowSpec,
    params: Option<&ParamStore>,
    s0: &StateVector,
    steps: usize,
) -> Result<f64> {
    Ok(noether_drift_batch(gen, flow, params, &PhaseBatch::single(s0), steps)?[0])
}

/// `|ln π(T_g^ε(s)) − ln π(s)|` for an arbitrary log-density.
pub fn invariance_residual(
    log_prob: impl Fn(&StateVector) -> Result<f64>,
    gen: &dyn ScalarField,
    params: Option<&ParamStore>,
    s: &StateVector,
    eps: f64,
) -> Result<f64> {
    let moved = infinitesimal_transform_at(gen, eps, params, s)?;
    Ok((log_prob(&moved)? - log_prob(s)?).abs())
}

pub fn base_invariance_check(
    pi: &BaseDensity,
    gen: &dyn ScalarField,
    s: &StateVector,
    eps: f64,
) -> Result<f64> {
    invariance_residual(|x| pi.log_prob(x), gen, None, s, eps)
}

/// Result of rotating model states by a fixed angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub angle: f64,
    /// Mean `|ln p(Rq, Rp) − ln p(q, p)|` with `p` drawn from the encoder.
    pub joint: f64,
    /// Mean `|U(Rq) − U(q)|`, summed over the flow's potentials.
    pub marginal: f64,
}

/// Planar-rotation invariance probe of a model on `d = 2` positions.
pub fn density_invariance_probe(
    model: &ModelDensity,
    params: &ParamStore,
    angle: f64,
    qs: &Array2<f64>,
    seed: u64,
) -> Result<ProbeReport> {
    if model.dim() != 2 || qs.ncols() != 2 {
        return Err(Error::Unsupported(format!(
            "the rotation probe needs d = 2, model has d = {}",
            model.dim()
        )));
    }
    if qs.nrows() == 0 {
        return Err(Error::contract("invariance probe over an empty batch"));
    }
    let p = model.encode(params, qs, seed)?;
    let s = PhaseBatch::new(qs.clone(), p)?;
    let r = PhaseBatch::new(rotate_rows(&s.q, angle), rotate_rows(&s.p, angle))?;
    let a = model.joint_log_prob(params, &s)?;
    let b = model.joint_log_prob(params, &r)?;
    let n = qs.nrows() as f64;
    let joint = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
    let mut marginal = vec![0.0; qs.nrows()];
    for h in model.flow.hamiltonians() {
        let u0 = field_values(h.potential(), Some(params), &s)?;
        let u1 = field_values(h.potential(), Some(params), &r)?;
        for (m, (x, y)) in marginal.iter_mut().zip(u0.iter().zip(&u1)) {
            *m += y - x;
        }
    }
    let marginal = marginal.iter().map(|m| m.abs()).sum::<f64>() / n;
    Ok(ProbeReport {
        angle,
        joint,
        marginal,
    })
}

#[cfg(test)]
mod tests;
