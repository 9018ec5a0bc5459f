//! Reverse-mode differentiation whose adjoints are themselves graph nodes.
//!
//! Because every derivative rule is written with graph primitives, the
//! result of [`Graph::grad`] can be differentiated again.

use super::graph::{Expr, Graph, Op};
use crate::error::{Error, Result};

impl Graph<'_> {
    /// Gradient of the scalar `output` with respect to each node in `wrt`.
    ///
    /// The returned nodes have the shapes of the corresponding `wrt` nodes.
    /// Nodes that `output` does not depend on get an all-zero constant.
    pub fn grad(&mut self, output: Expr, wrt: &[Expr]) -> Result<Vec<Expr>> {
        if self.shape(output) != (1, 1) {
            return Err(Error::contract(format!(
                "grad needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let n = output.0 + 1;
        let Some(start) = wrt.iter().map(|e| e.0).filter(|&i| i < n).min() else {
            return Ok(wrt.iter().map(|&w| self.zeros(self.shape(w))).collect());
        };

        let mut depends = vec![false; n];
        for w in wrt {
            if w.0 < n {
                depends[w.0] = true;
            }
        }
        for i in start..n {
            if !depends[i] && self.nodes[i].op.operands().any(|o| depends[o.0]) {
                depends[i] = true;
            }
        }

        let mut adj: Vec<Option<Expr>> = vec![None; n];
        if depends[output.0] {
            adj[output.0] = Some(self.scalar(1.0));
        }
        for i in (start..n).rev() {
            let Some(g) = adj[i] else { continue };
            if !depends[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.backprop(Expr(i), &op, g, &depends, &mut adj);
        }

        Ok(wrt
            .iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => self.zeros(self.shape(w)),
            })
            .collect())
    }

    /// Gradient of `output` with respect to every parameter of the bound store,
    /// flattened in store order. Parameters not used by the graph get zeros.
    pub fn grad_params(&mut self, output: Expr) -> Result<Vec<f64>> {
        let store = self
            .params()
            .ok_or_else(|| Error::config("params", "graph has no parameter store bound"))?;
        let leaves = self.param_leaves.clone();
        let exprs: Vec<Expr> = leaves.iter().map(|&(_, e)| e).collect();
        let grads = self.grad(output, &exprs)?;
        let mut flat = vec![0.0; store.len()];
        for (&(id, _), g) in leaves.iter().zip(grads) {
            let off = store.info(id).offset;
            let v = self.value(g);
            for (dst, src) in flat[off..off + v.len()].iter_mut().zip(v.iter()) {
                *dst = *src;
            }
        }
        Ok(flat)
    }

    fn backprop(
        &mut self,
        y: Expr,
        op: &Op,
        g: Expr,
        depends: &[bool],
        adj: &mut [Option<Expr>],
    ) {
        let needs = |e: Expr| depends[e.0];
        match *op {
            Op::Input(_) | Op::Param(_) | Op::Const | Op::Step(_) => {}
            Op::Add(a, b) => {
                if needs(a) {
                    self.accumulate(adj, a, g);
                }
                if needs(b) {
                    self.accumulate(adj, b, g);
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    self.accumulate(adj, a, g);
                }
                if needs(b) {
                    let d = self.neg(g);
                    self.accumulate(adj, b, d);
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let d = self.mul(g, b);
                    self.accumulate(adj, a, d);
                }
                if needs(b) {
                    let d = self.mul(g, a);
                    self.accumulate(adj, b, d);
                }
            }
            Op::Div(a, b) => {
                if needs(a) {
                    let d = self.div(g, b);
                    self.accumulate(adj, a, d);
                }
                if needs(b) {
                    // d(a/b)/db = -(a/b)/b
                    let gy = self.mul(g, y);
                    let q = self.div(gy, b);
                    let d = self.neg(q);
                    self.accumulate(adj, b, d);
                }
            }
            Op::Neg(a) => {
                let d = self.neg(g);
                self.accumulate(adj, a, d);
            }
            Op::Scale(a, c) => {
                let d = self.scale(g, c);
                self.accumulate(adj, a, d);
            }
            Op::Offset(a, _) => self.accumulate(adj, a, g),
            Op::Exp(a) => {
                let d = self.mul(g, y);
                self.accumulate(adj, a, d);
            }
            Op::Ln(a) => {
                let d = self.div(g, a);
                self.accumulate(adj, a, d);
            }
            Op::Tanh(a) => {
                let y2 = self.square(y);
                let n = self.neg(y2);
                let one_minus = self.offset(n, 1.0);
                let d = self.mul(g, one_minus);
                self.accumulate(adj, a, d);
            }
            Op::Sigmoid(a) => {
                let n = self.neg(y);
                let one_minus = self.offset(n, 1.0);
                let slope = self.mul(y, one_minus);
                let d = self.mul(g, slope);
                self.accumulate(adj, a, d);
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a);
                let d = self.mul(g, s);
                self.accumulate(adj, a, d);
            }
            Op::Relu(a) => {
                let s = self.step(a);
                let d = self.mul(g, s);
                self.accumulate(adj, a, d);
            }
            Op::Square(a) => {
                let two_a = self.scale(a, 2.0);
                let d = self.mul(g, two_a);
                self.accumulate(adj, a, d);
            }
            Op::Sqrt(a) => {
                let half = self.scale(g, 0.5);
                let d = self.div(half, y);
                self.accumulate(adj, a, d);
            }
            Op::MatMul { a, b, ta, tb } => {
                // y = A'·B' with A' = op(A), B' = op(B).
                if needs(a) {
                    let d = if ta {
                        self.matmul_t(b, g, tb, true)
                    } else {
                        self.matmul_t(g, b, false, !tb)
                    };
                    self.accumulate(adj, a, d);
                }
                if needs(b) {
                    let d = if tb {
                        self.matmul_t(g, a, true, ta)
                    } else {
                        self.matmul_t(a, g, !ta, false)
                    };
                    self.accumulate(adj, b, d);
                }
            }
            Op::Affine { x, w, b } => {
                if needs(x) {
                    let d = self.matmul_t(g, w, false, true);
                    self.accumulate(adj, x, d);
                }
                if needs(w) {
                    let d = self.matmul_t(x, g, true, false);
                    self.accumulate(adj, w, d);
                }
                if needs(b) {
                    let d = self.reduce_to(g, self.shape(b));
                    self.accumulate(adj, b, d);
                }
            }
            Op::Broadcast(a, _) => {
                let d = self.reduce_to(g, self.shape(a));
                self.accumulate(adj, a, d);
            }
            Op::ReduceTo(a, _) => {
                let d = self.broadcast_to(g, self.shape(a));
                self.accumulate(adj, a, d);
            }
            Op::Columns { x, start, .. } => {
                let total = self.shape(x).1;
                let d = self.embed(g, start, total);
                self.accumulate(adj, x, d);
            }
            Op::Embed { x, start, .. } => {
                let len = self.shape(x).1;
                let d = self.columns(g, start, len);
                self.accumulate(adj, x, d);
            }
            Op::Concat(a, b) => {
                let ca = self.shape(a).1;
                let cb = self.shape(b).1;
                if needs(a) {
                    let d = self.columns(g, 0, ca);
                    self.accumulate(adj, a, d);
                }
                if needs(b) {
                    let d = self.columns(g, ca, cb);
                    self.accumulate(adj, b, d);
                }
            }
        }
    }

    fn accumulate(&mut self, adj: &mut [Option<Expr>], target: Expr, d: Expr) {
        adj[target.0] = Some(match adj[target.0] {
            Some(prev) => self.add(prev, d),
            None => d,
        });
    }
}
