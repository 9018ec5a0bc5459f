//! Phase-space mechanics: Poisson brackets, infinitesimal transformations and
//! the leapfrog flow for separable Hamiltonians.
//!
//! Every function here has a graph-level form (taking `q`, `p` nodes so that
//! derivatives with respect to parameters flow through it) and most have a
//! numeric convenience wrapper operating on [`StateVector`] or [`PhaseBatch`].

use nalgebra::DMatrix;

use crate::autodiff::{Expr, Graph, ParamStore};
use crate::error::{Error, Result};
use crate::fields::{build_checked, Dependence, ScalarField};
use crate::phase::{PhaseBatch, StateVector};

/// `H(q, p) = K(p) + U(q)`.
pub struct Hamiltonian {
    kinetic: Box<dyn ScalarField>,
    potential: Box<dyn ScalarField>,
}

impl Hamiltonian {
    /// Fails if `kinetic` reads positions or `potential` reads momenta.
    pub fn new(kinetic: Box<dyn ScalarField>, potential: Box<dyn ScalarField>) -> Result<Self> {
        if kinetic.dependence() != Dependence::Momentum {
            return Err(Error::contract("kinetic energy must depend on momentum only"));
        }
        if potential.dependence() != Dependence::Position {
            return Err(Error::contract("potential energy must depend on position only"));
        }
        Ok(Hamiltonian { kinetic, potential })
    }

    pub fn kinetic(&self) -> &dyn ScalarField {
        self.kinetic.as_ref()
    }

    pub fn potential(&self) -> &dyn ScalarField {
        self.potential.as_ref()
    }

    fn potential_grad(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        let u = build_checked(self.potential(), g, q, p)?;
        let total = g.sum(u);
        Ok(g.grad(total, &[q])?[0])
    }

    fn kinetic_grad(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        let k = build_checked(self.kinetic(), g, q, p)?;
        let total = g.sum(k);
        Ok(g.grad(total, &[p])?[0])
    }
}

impl ScalarField for Hamiltonian {
    fn build(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        let k = build_checked(self.kinetic(), g, q, p)?;
        let u = build_checked(self.potential(), g, q, p)?;
        Ok(g.add(k, u))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Chain of Hamiltonians, each integrated for `steps` leapfrog steps of size `dt`.
pub struct FlowSpec {
    hamiltonians: Vec<Hamiltonian>,
    dt: f64,
    steps: usize,
}

impl FlowSpec {
    pub fn new(hamiltonians: Vec<Hamiltonian>, dt: f64, steps: usize) -> Result<Self> {
        if hamiltonians.is_empty() {
            return Err(Error::config("flow.hamiltonians", "flow needs at least one Hamiltonian"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config("flow.dt", format!("dt must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(Error::config("flow.leapfrog_steps", "at least one leapfrog step"));
        }
        Ok(FlowSpec {
            hamiltonians,
            dt,
            steps,
        })
    }

    pub fn single(h: Hamiltonian, dt: f64, steps: usize) -> Result<Self> {
        Self::new(vec![h], dt, steps)
    }

    pub fn hamiltonians(&self) -> &[Hamiltonian] {
        &self.hamiltonians
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Total number of leapfrog steps in one pass of the flow.
    pub fn total_steps(&self) -> usize {
        self.steps * self.hamiltonians.len()
    }

    pub fn forward_batch(&self, params: Option<&ParamStore>, s: &PhaseBatch) -> Result<PhaseBatch> {
        self.run_batch(params, s, Direction::Forward)
    }

    pub fn inverse_batch(&self, params: Option<&ParamStore>, s: &PhaseBatch) -> Result<PhaseBatch> {
        self.run_batch(params, s, Direction::Inverse)
    }

    pub fn forward_state(&self, params: Option<&ParamStore>, s: &StateVector) -> Result<StateVector> {
        Ok(self.forward_batch(params, &PhaseBatch::single(s))?.state(0))
    }

    pub fn inverse_state(&self, params: Option<&ParamStore>, s: &StateVector) -> Result<StateVector> {
        Ok(self.inverse_batch(params, &PhaseBatch::single(s))?.state(0))
    }

    fn run_batch(
        &self,
        params: Option<&ParamStore>,
        s: &PhaseBatch,
        dir: Direction,
    ) -> Result<PhaseBatch> {
        let mut g = graph_for(params);
        let q = g.input(s.q.clone());
        let p = g.input(s.p.clone());
        let (q, p) = match dir {
            Direction::Forward => flow_forward(&mut g, self, q, p)?,
            Direction::Inverse => flow_inverse(&mut g, self, q, p)?,
        };
        PhaseBatch::new(g.value(q).clone(), g.value(p).clone())
    }

    /// States after every leapfrog step of one forward pass, starting with `s`.
    pub fn trace(&self, params: Option<&ParamStore>, s: &PhaseBatch) -> Result<Vec<PhaseBatch>> {
        let mut out = vec![s.clone()];
        for h in &self.hamiltonians {
            for _ in 0..self.steps {
                let cur = out.last().expect("non-empty");
                let mut g = graph_for(params);
                let q = g.input(cur.q.clone());
                let p = g.input(cur.p.clone());
                let (q, p) = leapfrog_step(&mut g, h, self.dt, q, p, Direction::Forward)?;
                let next = PhaseBatch::new(g.value(q).clone(), g.value(p).clone())?;
                if !next.is_finite() {
                    return Err(Error::numeric(
                        format!("leapfrog step {}", out.len() - 1),
                        "non-finite state",
                    ));
                }
                out.push(next);
            }
        }
        Ok(out)
    }
}

pub(crate) fn graph_for(params: Option<&ParamStore>) -> Graph<'_> {
    match params {
        Some(s) => Graph::with_params(s),
        None => Graph::new(),
    }
}

/// `{f, h} = Σ_i ∂f/∂q_i ∂h/∂p_i − ∂f/∂p_i ∂h/∂q_i`, one value per row.
pub fn poisson_bracket(
    g: &mut Graph<'_>,
    f: &dyn ScalarField,
    h: &dyn ScalarField,
    q: Expr,
    p: Expr,
) -> Result<Expr> {
    if g.shape(q) != g.shape(p) {
        return Err(Error::contract(format!(
            "position {:?} and momentum {:?} shapes differ",
            g.shape(q),
            g.shape(p)
        )));
    }
    let fv = build_checked(f, g, q, p)?;
    let fs = g.sum(fv);
    let df = g.grad(fs, &[q, p])?;
    let hv = build_checked(h, g, q, p)?;
    let hs = g.sum(hv);
    let dh = g.grad(hs, &[q, p])?;
    let a = g.mul(df[0], dh[1]);
    let b = g.mul(df[1], dh[0]);
    let diff = g.sub(a, b);
    Ok(g.sum_cols(diff))
}

/// `T_f^ε(s) = s + ε {s, f} = (q + ε ∂f/∂p, p − ε ∂f/∂q)`.
pub fn infinitesimal_transform(
    g: &mut Graph<'_>,
    f: &dyn ScalarField,
    eps: f64,
    q: Expr,
    p: Expr,
) -> Result<(Expr, Expr)> {
    let fv = build_checked(f, g, q, p)?;
    let fs = g.sum(fv);
    let d = g.grad(fs, &[q, p])?;
    let dq = g.scale(d[1], eps);
    let dp = g.scale(d[0], eps);
    Ok((g.add(q, dq), g.sub(p, dp)))
}

/// One leapfrog step; `Inverse` runs the same three shears with `−dt`, which is
/// the exact algebraic inverse.
pub fn leapfrog_step(
    g: &mut Graph<'_>,
    h: &Hamiltonian,
    dt: f64,
    q: Expr,
    p: Expr,
    direction: Direction,
) -> Result<(Expr, Expr)> {
    let dt = match direction {
        Direction::Forward => dt,
        Direction::Inverse => -dt,
    };
    integrate(g, h, dt, 1, q, p, 0)
}

fn integrate(
    g: &mut Graph<'_>,
    h: &Hamiltonian,
    dt: f64,
    steps: usize,
    mut q: Expr,
    mut p: Expr,
    first_index: usize,
) -> Result<(Expr, Expr)> {
    // ∇U at the end of one step is reused as the first kick of the next.
    let mut grad_u = h.potential_grad(g, q, p)?;
    for k in 0..steps {
        let kick = g.scale(grad_u, 0.5 * dt);
        p = g.sub(p, kick);
        let grad_k = h.kinetic_grad(g, q, p)?;
        let drift = g.scale(grad_k, dt);
        q = g.add(q, drift);
        grad_u = h.potential_grad(g, q, p)?;
        let kick = g.scale(grad_u, 0.5 * dt);
        p = g.sub(p, kick);
        let finite = g.value(q).iter().chain(g.value(p).iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::numeric(
                format!("leapfrog step {}", first_index + k),
                "non-finite state",
            ));
        }
    }
    Ok((q, p))
}

pub fn flow_forward(
    g: &mut Graph<'_>,
    flow: &FlowSpec,
    mut q: Expr,
    mut p: Expr,
) -> Result<(Expr, Expr)> {
    for (i, h) in flow.hamiltonians.iter().enumerate() {
        (q, p) = integrate(g, h, flow.dt, flow.steps, q, p, i * flow.steps)?;
    }
    Ok((q, p))
}

/// Inverse flow: Hamiltonians in reverse order, each integrated with `−dt`.
pub fn flow_inverse(
    g: &mut Graph<'_>,
    flow: &FlowSpec,
    mut q: Expr,
    mut p: Expr,
) -> Result<(Expr, Expr)> {
    for (i, h) in flow.hamiltonians.iter().enumerate().rev() {
        (q, p) = integrate(g, h, -flow.dt, flow.steps, q, p, i * flow.steps)?;
    }
    Ok((q, p))
}

pub fn poisson_bracket_at(
    f: &dyn ScalarField,
    h: &dyn ScalarField,
    params: Option<&ParamStore>,
    s: &StateVector,
) -> Result<f64> {
    let mut g = graph_for(params);
    let b = PhaseBatch::single(s);
    let q = g.input(b.q);
    let p = g.input(b.p);
    let v = poisson_bracket(&mut g, f, h, q, p)?;
    Ok(g.value(v)[[0, 0]])
}

pub fn infinitesimal_transform_at(
    f: &dyn ScalarField,
    eps: f64,
    params: Option<&ParamStore>,
    s: &StateVector,
) -> Result<StateVector> {
    let mut g = graph_for(params);
    let b = PhaseBatch::single(s);
    let q = g.input(b.q);
    let p = g.input(b.p);
    let (q, p) = infinitesimal_transform(&mut g, f, eps, q, p)?;
    StateVector::new(g.value(q).iter().copied().collect(), g.value(p).iter().copied().collect())
}

pub fn leapfrog_step_at(
    h: &Hamiltonian,
    dt: f64,
    params: Option<&ParamStore>,
    s: &StateVector,
    direction: Direction,
) -> Result<StateVector> {
    let mut g = graph_for(params);
    let b = PhaseBatch::single(s);
    let q = g.input(b.q);
    let p = g.input(b.p);
    let (q, p) = leapfrog_step(&mut g, h, dt, q, p, direction)?;
    StateVector::new(g.value(q).iter().copied().collect(), g.value(p).iter().copied().collect())
}

/// Determinant of the central-difference Jacobian (step `1e-5`) of the
/// forward flow at `s`.
pub fn jacobian_determinant_check(
    flow: &FlowSpec,
    params: Option<&ParamStore>,
    s: &StateVector,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let x = s.to_vec();
    let n = x.len();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += STEP;
        minus[j] -= STEP;
        let fp = flow.forward_state(params, &StateVector::from_slice(&plus)?)?.to_vec();
        let fm = flow.forward_state(params, &StateVector::from_slice(&minus)?)?.to_vec();
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * STEP);
        }
    }
    Ok(jac.determinant())
}

/// `‖T_g^ε(T_H^dt(s)) − T_H^dt(T_g^ε(s))‖₂` with both maps the first-order
/// transformation `T_f^ε`. Vanishes to first order in `ε·dt` when `{g, H} = 0`.
pub fn commutation_residual(
    h: &dyn ScalarField,
    gen: &dyn ScalarField,
    eps: f64,
    dt: f64,
    params: Option<&ParamStore>,
    s: &StateVector,
) -> Result<f64> {
    let a = infinitesimal_transform_at(h, dt, params, s)?;
    let a = infinitesimal_transform_at(gen, eps, params, &a)?;
    let b = infinitesimal_transform_at(gen, eps, params, s)?;
    let b = infinitesimal_transform_at(h, dt, params, &b)?;
    Ok(a
        .to_vec()
        .iter()
        .zip(b.to_vec())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests;
