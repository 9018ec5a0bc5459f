use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use super::base::BaseDensity;
use crate::autodiff::{Expr, Graph, ParamStore};
use crate::dynamics::{flow_forward, flow_inverse, graph_for, FlowSpec};
use crate::error::{Error, Result};
use crate::networks::GaussianEncoder;
use crate::phase::PhaseBatch;
use crate::seed::stream_rng;

/// Hamiltonian-flow density over phase space plus the momentum encoder used
/// for inference.
pub struct ModelDensity {
    pub flow: FlowSpec,
    pub base: BaseDensity,
    pub encoder: GaussianEncoder,
}

impl ModelDensity {
    pub fn new(flow: FlowSpec, base: BaseDensity, encoder: GaussianEncoder) -> Result<Self> {
        if base.phase_dim() != 2 * encoder.dim() {
            return Err(Error::contract(format!(
                "base density on {} coordinates, encoder for d = {}",
                base.phase_dim(),
                encoder.dim()
            )));
        }
        Ok(ModelDensity {
            flow,
            base,
            encoder,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    /// `ln p(q, p) = ln π(flow⁻¹(q, p))`; the flow has unit Jacobian.
    pub fn joint_log_prob_expr(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<Expr> {
        let (q0, p0) = flow_inverse(g, &self.flow, q, p)?;
        self.base.log_prob_expr(g, q0, p0)
    }

    pub fn joint_log_prob(&self, params: &ParamStore, s: &PhaseBatch) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(params);
        let q = g.input(s.q.clone());
        let p = g.input(s.p.clone());
        let lp = self.joint_log_prob_expr(&mut g, q, p)?;
        Ok(g.value(lp).iter().copied().collect())
    }

    /// Base samples pushed through the forward flow (full states).
    pub fn sample_states(&self, params: &ParamStore, count: usize, seed: u64) -> Result<PhaseBatch> {
        let s0 = self.base.sample(count, seed);
        // chunked to bound graph size
        let mut q = Array2::zeros((count, self.dim()));
        let mut p = Array2::zeros((count, self.dim()));
        for start in (0..count).step_by(1024) {
            let end = (start + 1024).min(count);
            let chunk = PhaseBatch {
                q: s0.q.slice(ndarray::s![start..end, ..]).to_owned(),
                p: s0.p.slice(ndarray::s![start..end, ..]).to_owned(),
            };
            let out = self.flow.forward_batch(Some(params), &chunk)?;
            q.slice_mut(ndarray::s![start..end, ..]).assign(&out.q);
            p.slice_mut(ndarray::s![start..end, ..]).assign(&out.p);
        }
        PhaseBatch::new(q, p)
    }

    /// Positions `q_n` of model samples; the final momenta are dropped.
    pub fn sample(&self, params: &ParamStore, count: usize, seed: u64) -> Result<Array2<f64>> {
        Ok(self.sample_states(params, count, seed)?.q)
    }

    /// Momenta drawn from the encoder at `q` with noise stream `seed`.
    pub fn encode(&self, params: &ParamStore, q: &Array2<f64>, seed: u64) -> Result<Array2<f64>> {
        let noise = standard_normal_rows(q.nrows(), q.ncols(), seed);
        let mut g = graph_for(Some(params));
        let qe = g.input(q.clone());
        let ne = g.input(noise);
        let s = self.encoder.sample(&mut g, qe, ne)?;
        Ok(g.value(s.p).clone())
    }

    pub fn forward(&self, g: &mut Graph<'_>, q: Expr, p: Expr) -> Result<(Expr, Expr)> {
        flow_forward(g, &self.flow, q, p)
    }
}

/// `rows × cols` standard normals; row `i` comes from stream `(seed, i)`.
pub fn standard_normal_rows(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        let mut rng = stream_rng(seed, i as u64);
        for j in 0..cols {
            out[[i, j]] = StandardNormal.sample(&mut rng);
        }
    }
    out
}
