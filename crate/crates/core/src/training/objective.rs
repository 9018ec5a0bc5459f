use ndarray::{s, Array2};

use crate::autodiff::{Expr, Graph, ParamStore};
use crate::densities::{standard_normal_rows, ModelDensity};
use crate::dynamics::flow_inverse;
use crate::error::Result;
use crate::phase::PhaseBatch;
use crate::symmetry::{commutator_penalty_exprs, GeneratorSet};

/// Single-sample ELBO per row: `ln π(flow⁻¹(q, p)) − ln h(p | q)` with
/// `p = μ(q) + σ(q) ⊙ noise`.
pub fn elbo_expr(g: &mut Graph<'_>, model: &ModelDensity, q: Expr, noise: Expr) -> Result<Expr> {
    let h = model.encoder.sample(g, q, noise)?;
    let (q0, p0) = flow_inverse(g, &model.flow, q, h.p)?;
    let lp = model.base.log_prob_expr(g, q0, p0)?;
    Ok(g.sub(lp, h.log_density))
}

pub fn elbo(
    model: &ModelDensity,
    params: &ParamStore,
    q: &Array2<f64>,
    noise: &Array2<f64>,
) -> Result<Vec<f64>> {
    let mut g = Graph::with_params(params);
    let qe = g.input(q.clone());
    let ne = g.input(noise.clone());
    let e = elbo_expr(&mut g, model, qe, ne)?;
    Ok(g.value(e).iter().copied().collect())
}

/// Mean ELBO over `q` with noise from stream `seed`, in chunks of 1024 rows.
pub fn mean_elbo(model: &ModelDensity, params: &ParamStore, q: &Array2<f64>, seed: u64) -> Result<f64> {
    let noise = standard_normal_rows(q.nrows(), q.ncols(), seed);
    let mut total = 0.0;
    for start in (0..q.nrows()).step_by(1024) {
        let end = (start + 1024).min(q.nrows());
        let v = elbo(
            model,
            params,
            &q.slice(s![start..end, ..]).to_owned(),
            &noise.slice(s![start..end, ..]).to_owned(),
        )?;
        total += v.iter().sum::<f64>();
    }
    Ok(total / q.nrows() as f64)
}

/// Nodes of the constrained objective.
#[derive(Clone, Debug)]
pub struct LagrangianExprs {
    /// `−mean ELBO + Σ_k λ_k Ĉ_k`
    pub loss: Expr,
    pub mean_elbo: Expr,
    /// `Ĉ_k`, averaged over the flow's Hamiltonians.
    pub slacks: Vec<Expr>,
}

/// Builds the Lagrangian. `penalty_states` are base-density samples; they may
/// be `None` only when the generator set is empty. Multipliers enter as
/// constants, so parameter gradients reach the networks only.
pub fn lagrangian_expr(
    g: &mut Graph<'_>,
    model: &ModelDensity,
    set: &GeneratorSet,
    q: Expr,
    noise: Expr,
    penalty_states: Option<(Expr, Expr)>,
) -> Result<LagrangianExprs> {
    let e = elbo_expr(g, model, q, noise)?;
    let mean_elbo = g.mean(e);
    let mut loss = g.neg(mean_elbo);
    let mut slacks = Vec::new();
    if !set.is_empty() {
        let (pq, pp) = penalty_states.ok_or_else(|| {
            crate::error::Error::contract("constrained objective needs base-density samples")
        })?;
        let hams = model.flow.hamiltonians();
        let mut per_h: Vec<Vec<Expr>> = Vec::with_capacity(hams.len());
        for h in hams {
            per_h.push(commutator_penalty_exprs(g, set, h, pq, pp)?);
        }
        for k in 0..set.len() {
            let mut c = per_h[0][k];
            for terms in &per_h[1..] {
                c = g.add(c, terms[k]);
            }
            let c = g.scale(c, 1.0 / hams.len() as f64);
            let weighted = g.scale(c, set.constraints()[k].lambda);
            loss = g.add(loss, weighted);
            slacks.push(c);
        }
    }
    Ok(LagrangianExprs {
        loss,
        mean_elbo,
        slacks,
    })
}

/// Value of the Lagrangian and the slacks `Ĉ_k`.
pub fn lagrangian(
    model: &ModelDensity,
    params: &ParamStore,
    set: &GeneratorSet,
    q: &Array2<f64>,
    noise: &Array2<f64>,
    penalty_states: Option<&PhaseBatch>,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::with_params(params);
    let qe = g.input(q.clone());
    let ne = g.input(noise.clone());
    let ps = penalty_states.map(|s| (g.input(s.q.clone()), g.input(s.p.clone())));
    let l = lagrangian_expr(&mut g, model, set, qe, ne, ps)?;
    let slacks = l.slacks.iter().map(|&c| g.scalar_value(c)).collect();
    Ok((g.scalar_value(l.loss), slacks))
}

/// Loss, slacks and the flat parameter gradient of the Lagrangian.
pub fn lagrangian_with_grad(
    model: &ModelDensity,
    params: &ParamStore,
    set: &GeneratorSet,
    q: &Array2<f64>,
    noise: &Array2<f64>,
    penalty_states: Option<&PhaseBatch>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut g = Graph::with_params(params);
    let qe = g.input(q.clone());
    let ne = g.input(noise.clone());
    let ps = penalty_states.map(|s| (g.input(s.q.clone()), g.input(s.p.clone())));
    let l = lagrangian_expr(&mut g, model, set, qe, ne, ps)?;
    let slacks = l.slacks.iter().map(|&c| g.scalar_value(c)).collect();
    let loss = g.scalar_value(l.loss);
    let grad = g.grad_params(l.loss)?;
    Ok((loss, slacks, grad))
}
