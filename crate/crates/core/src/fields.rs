//! Differentiable scalar functions of phase space.

use ndarray::Array2;

use crate::autodiff::{Expr, Graph, ParamStore};
use crate::error::{Error, Result};
use crate::phase::{PhaseBatch, StateVector};

/// Which coordinate block a field reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dependence {
    Position,
    Momentum,
    Both,
}

/// A scalar field `f(q, p)` expressed as a graph so that its value, input
/// gradient, and parameter gradient (of any expression built from it) are
/// all available.
pub trait ScalarField: Send + Sync {
    /// Builds `f` for a batch: `q` and `p` are `n × d`, the result is `n × 1`.
    fn build(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr>;

    fn dependence(&self) -> Dependence {
        Dependence::Both
    }
}

/// Field defined by a graph-building closure. Handy for analytic fields.
pub struct FnField<F> {
    dependence: Dependence,
    f: F,
}

impl<F> FnField<F>
where
    F: for<'a> Fn(&mut Graph<'a>, Expr, Expr) -> Result<Expr> + Send + Sync,
{
    pub fn new(dependence: Dependence, f: F) -> Self {
        FnField { dependence, f }
    }
}

impl<F> ScalarField for FnField<F>
where
    F: for<'a> Fn(&mut Graph<'a>, Expr, Expr) -> Result<Expr> + Send + Sync,
{
    fn build(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        (self.f)(g, q, p)
    }

    fn dependence(&self) -> Dependence {
        self.dependence
    }
}

impl<T: ScalarField + ?Sized> ScalarField for Box<T> {
    fn build(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        (**self).build(g, q, p)
    }

    fn dependence(&self) -> Dependence {
        (**self).dependence()
    }
}

/// Pointwise sum of fields.
pub struct SumField {
    parts: Vec<Box<dyn ScalarField>>,
}

impl SumField {
    pub fn new(parts: Vec<Box<dyn ScalarField>>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::contract("sum of no fields"));
        }
        Ok(SumField { parts })
    }
}

impl ScalarField for SumField {
    fn build(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        let mut total = self.parts[0].build(g, q, p)?;
        for f in &self.parts[1..] {
            let v = f.build(g, q, p)?;
            total = g.add(total, v);
        }
        Ok(total)
    }

    fn dependence(&self) -> Dependence {
        let first = self.parts[0].dependence();
        if self.parts.iter().all(|f| f.dependence() == first) {
            first
        } else {
            Dependence::Both
        }
    }
}

/// Builds `field` and checks it returns one value per row.
pub fn build_checked(
    field: &dyn ScalarField,
    g: &mut Graph<'_>,
    q: Expr,
    p: Expr,
) -> Result<Expr> {
    let rows = g.shape(q).0;
    let out = field.build(g, q, p)?;
    if g.shape(out) != (rows, 1) {
        return Err(Error::contract(format!(
            "scalar field returned shape {:?} for {rows} states",
            g.shape(out)
        )));
    }
    Ok(out)
}

/// Column `i` of an `n × d` block as an `n × 1` node.
pub fn coord(g: &mut Graph<'_>, x: Expr, i: usize) -> Expr {
    g.columns(x, i, 1)
}

pub fn field_values(
    field: &dyn ScalarField,
    params: Option<&ParamStore>,
    batch: &PhaseBatch,
) -> Result<Vec<f64>> {
    let mut g = match params {
        Some(s) => Graph::with_params(s),
        None => Graph::new(),
    };
    let q = g.input(batch.q.clone());
    let p = g.input(batch.p.clone());
    let f = build_checked(field, &mut g, q, p)?;
    Ok(g.value(f).iter().copied().collect())
}

pub fn field_value(
    field: &dyn ScalarField,
    params: Option<&ParamStore>,
    s: &StateVector,
) -> Result<f64> {
    Ok(field_values(field, params, &PhaseBatch::single(s))?[0])
}

/// `(∂f/∂q, ∂f/∂p)` at a batch of states, each `n × d`.
pub fn field_gradients(
    field: &dyn ScalarField,
    params: Option<&ParamStore>,
    batch: &PhaseBatch,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut g = match params {
        Some(s) => Graph::with_params(s),
        None => Graph::new(),
    };
    let q = g.input(batch.q.clone());
    let p = g.input(batch.p.clone());
    let f = build_checked(field, &mut g, q, p)?;
    let total = g.sum(f);
    let d = g.grad(total, &[q, p])?;
    Ok((g.value(d[0]).clone(), g.value(d[1]).clone()))
}

/// `‖x‖² / 2` of one block: the quadratic kinetic energy or the harmonic potential.
pub fn half_square_norm(block: Dependence) -> impl ScalarField {
    FnField::new(block, move |g: &mut Graph<'_>, q, p| {
        let x = if block == Dependence::Position { q } else { p };
        let sq = g.square(x);
        let s = g.sum_cols(sq);
        Ok(g.scale(s, 0.5))
    })
}

/// The constant zero field on one block.
pub fn zero_field(block: Dependence) -> impl ScalarField {
    FnField::new(block, |g: &mut Graph<'_>, q, _p| {
        let rows = g.shape(q).0;
        Ok(g.zeros((rows, 1)))
    })
}
