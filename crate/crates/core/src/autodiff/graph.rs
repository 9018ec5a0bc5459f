//! Define-by-run expression graph over small dense matrices.
//!
//! Every node stores its value, computed eagerly when the node is created.
//! Nodes are appended in topological order, so a graph can be re-evaluated
//! with new input and parameter bindings by sweeping the node list once.
//! Rows are the batch axis throughout the crate: a batch of `n` states in
//! `d` dimensions is an `n × d` node, and per-sample scalars are `n × 1`.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub type Shape = (usize, usize);

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Expr(pub(crate) usize);

impl Expr {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Input(usize),
    Param(ParamId),
    Const,
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    Scale(Expr, f64),
    Offset(Expr, f64),
    Exp(Expr),
    Ln(Expr),
    Tanh(Expr),
    Sigmoid(Expr),
    Softplus(Expr),
    Relu(Expr),
    /// Heaviside step, the derivative of relu. Its own derivative is zero.
    Step(Expr),
    Square(Expr),
    Sqrt(Expr),
    /// `op(a) · op(b)` where `op` optionally transposes.
    MatMul { a: Expr, b: Expr, ta: bool, tb: bool },
    /// `x · w + b` with `b` a `1 × m` row broadcast over the batch.
    Affine { x: Expr, w: Expr, b: Expr },
    Broadcast(Expr, Shape),
    /// Sums over every axis where the target shape has extent 1.
    ReduceTo(Expr, Shape),
    Columns { x: Expr, start: usize, len: usize },
    /// Places `x` at column `start` of a zero matrix with `total` columns.
    Embed { x: Expr, start: usize, total: usize },
    Concat(Expr, Expr),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Relu(_) => "relu",
            Op::Step(_) => "step",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::MatMul { .. } => "matmul",
            Op::Affine { .. } => "affine",
            Op::Broadcast(..) => "broadcast",
            Op::ReduceTo(..) => "reduce",
            Op::Columns { .. } => "columns",
            Op::Embed { .. } => "embed",
            Op::Concat(..) => "concat",
        }
    }

    pub(crate) fn operands(&self) -> impl Iterator<Item = Expr> {
        let (a, b, c) = match *self {
            Op::Input(_) | Op::Param(_) | Op::Const => (None, None, None),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Concat(a, b) => {
                (Some(a), Some(b), None)
            }
            Op::MatMul { a, b, .. } => (Some(a), Some(b), None),
            Op::Affine { x, w, b } => (Some(x), Some(w), Some(b)),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Relu(a)
            | Op::Step(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Broadcast(a, _)
            | Op::ReduceTo(a, _) => (Some(a), None, None),
            Op::Columns { x, .. } | Op::Embed { x, .. } => (Some(x), None, None),
        };
        a.into_iter().chain(b).chain(c)
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Array2<f64>,
}

/// Expression graph with optional binding to a parameter store.
pub struct Graph<'p> {
    pub(crate) nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    pub(crate) param_leaves: Vec<(ParamId, Expr)>,
    param_index: HashMap<ParamId, Expr>,
    input_shapes: Vec<Shape>,
    /// Sigmoid values computed alongside a softplus, keyed by operand. The
    /// softplus derivative asks for them right back.
    sigmoid_cache: HashMap<usize, Array2<f64>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `(softplus(x), sigmoid(x))` from one exponential.
pub fn softplus_sigmoid(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let r = 1.0 / (1.0 + e);
    let sig = if x >= 0.0 { r } else { e * r };
    (x.max(0.0) + e.ln_1p(), sig)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn common_shape(a: Shape, b: Shape) -> Option<Shape> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, y) => Some(y),
        (x, 1) => Some(x),
        _ => None,
    };
    Some((dim(a.0, b.0)?, dim(a.1, b.1)?))
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: None,
            param_leaves: Vec::new(),
            param_index: HashMap::new(),
            input_shapes: Vec::new(),
            sigmoid_cache: HashMap::new(),
        }
    }

    /// A graph whose [`Graph::param`] leaves read from `store`.
    pub fn with_params(store: &'p ParamStore) -> Self {
        let mut g = Self::new();
        g.params = Some(store);
        g
    }

    pub fn params(&self) -> Option<&'p ParamStore> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, e: Expr) -> &Array2<f64> {
        &self.nodes[e.0].value
    }

    /// Value of a `1 × 1` node.
    pub fn scalar_value(&self, e: Expr) -> f64 {
        let v = self.value(e);
        assert_eq!(v.dim(), (1, 1), "scalar_value on a non-scalar node");
        v[[0, 0]]
    }

    pub fn shape(&self, e: Expr) -> Shape {
        self.nodes[e.0].value.dim()
    }

    pub fn op_name(&self, e: Expr) -> &'static str {
        self.nodes[e.0].op.name()
    }

    fn leaf(&mut self, op: Op, value: Array2<f64>) -> Expr {
        self.nodes.push(Node { op, value });
        Expr(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, op: Op) -> Expr {
        let value = self.compute(&op);
        self.nodes.push(Node { op, value });
        Expr(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Array2<f64>) -> Expr {
        let slot = self.input_shapes.len();
        self.input_shapes.push(value.dim());
        self.leaf(Op::Input(slot), value)
    }

    pub fn input_scalar(&mut self, value: f64) -> Expr {
        self.input(Array2::from_elem((1, 1), value))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Expr {
        self.leaf(Op::Const, value)
    }

    pub fn scalar(&mut self, value: f64) -> Expr {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn zeros(&mut self, shape: Shape) -> Expr {
        self.constant(Array2::zeros(shape))
    }

    /// Leaf for a stored parameter tensor. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Expr> {
        if let Some(&e) = self.param_index.get(&id) {
            return Ok(e);
        }
        let store = self
            .params
            .ok_or_else(|| Error::config("params", "graph has no parameter store bound"))?;
        let value = store
            .get(id)
            .ok_or_else(|| Error::config("params", format!("unknown parameter #{}", id.0)))?
            .to_owned();
        let e = self.leaf(Op::Param(id), value);
        self.param_leaves.push((id, e));
        self.param_index.insert(id, e);
        Ok(e)
    }

    fn binary(&mut self, a: Expr, b: Expr, make: fn(Expr, Expr) -> Op) -> Expr {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let target = common_shape(sa, sb)
            .unwrap_or_else(|| panic!("incompatible shapes {sa:?} and {sb:?}"));
        let a = self.broadcast_to(a, target);
        let b = self.broadcast_to(b, target);
        self.push(make(a, b))
    }

    pub fn add(&mut self, a: Expr, b: Expr) -> Expr {
        self.binary(a, b, Op::Add)
    }

    pub fn sub(&mut self, a: Expr, b: Expr) -> Expr {
        self.binary(a, b, Op::Sub)
    }

    pub fn mul(&mut self, a: Expr, b: Expr) -> Expr {
        self.binary(a, b, Op::Mul)
    }

    pub fn div(&mut self, a: Expr, b: Expr) -> Expr {
        self.binary(a, b, Op::Div)
    }

    pub fn neg(&mut self, a: Expr) -> Expr {
        self.push(Op::Neg(a))
    }

    pub fn scale(&mut self, a: Expr, c: f64) -> Expr {
        self.push(Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Expr, c: f64) -> Expr {
        self.push(Op::Offset(a, c))
    }

    pub fn exp(&mut self, a: Expr) -> Expr {
        self.push(Op::Exp(a))
    }

    pub fn ln(&mut self, a: Expr) -> Expr {
        self.push(Op::Ln(a))
    }

    pub fn tanh(&mut self, a: Expr) -> Expr {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Expr) -> Expr {
        match self.sigmoid_cache.remove(&a.0) {
            Some(value) => {
                self.nodes.push(Node {
                    op: Op::Sigmoid(a),
                    value,
                });
                Expr(self.nodes.len() - 1)
            }
            None => self.push(Op::Sigmoid(a)),
        }
    }

    pub fn softplus(&mut self, a: Expr) -> Expr {
        let x = &self.nodes[a.0].value;
        let mut sp = Array2::zeros(x.dim());
        let mut sig = Array2::zeros(x.dim());
        ndarray::Zip::from(&mut sp)
            .and(&mut sig)
            .and(x)
            .for_each(|sp, sig, &x| (*sp, *sig) = softplus_sigmoid(x));
        self.sigmoid_cache.insert(a.0, sig);
        self.nodes.push(Node {
            op: Op::Softplus(a),
            value: sp,
        });
        Expr(self.nodes.len() - 1)
    }

    pub fn relu(&mut self, a: Expr) -> Expr {
        self.push(Op::Relu(a))
    }

    pub fn step(&mut self, a: Expr) -> Expr {
        self.push(Op::Step(a))
    }

    pub fn square(&mut self, a: Expr) -> Expr {
        self.push(Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Expr) -> Expr {
        self.push(Op::Sqrt(a))
    }

    pub fn matmul(&mut self, a: Expr, b: Expr) -> Expr {
        self.matmul_t(a, b, false, false)
    }

    pub fn matmul_t(&mut self, a: Expr, b: Expr, ta: bool, tb: bool) -> Expr {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let inner_a = if ta { sa.0 } else { sa.1 };
        let inner_b = if tb { sb.1 } else { sb.0 };
        assert_eq!(inner_a, inner_b, "matmul inner dimensions {sa:?} x {sb:?}");
        self.push(Op::MatMul { a, b, ta, tb })
    }

    /// Fused `x · w + b`; `b` must be a single row.
    pub fn affine(&mut self, x: Expr, w: Expr, b: Expr) -> Expr {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        assert_eq!(sx.1, sw.0, "affine: input {sx:?} vs weight {sw:?}");
        assert_eq!(sb, (1, sw.1), "affine: bias {sb:?} vs weight {sw:?}");
        self.push(Op::Affine { x, w, b })
    }

    pub fn broadcast_to(&mut self, a: Expr, shape: Shape) -> Expr {
        let s = self.shape(a);
        if s == shape {
            return a;
        }
        assert!(
            common_shape(s, shape) == Some(shape),
            "cannot broadcast {s:?} to {shape:?}"
        );
        self.push(Op::Broadcast(a, shape))
    }

    pub fn reduce_to(&mut self, a: Expr, shape: Shape) -> Expr {
        let s = self.shape(a);
        if s == shape {
            return a;
        }
        assert!(
            common_shape(s, shape) == Some(s),
            "cannot reduce {s:?} to {shape:?}"
        );
        self.push(Op::ReduceTo(a, shape))
    }

    pub fn sum(&mut self, a: Expr) -> Expr {
        self.reduce_to(a, (1, 1))
    }

    pub fn mean(&mut self, a: Expr) -> Expr {
        let (r, c) = self.shape(a);
        let s = self.sum(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Row sums, `n × k → n × 1`.
    pub fn sum_cols(&mut self, a: Expr) -> Expr {
        let rows = self.shape(a).0;
        self.reduce_to(a, (rows, 1))
    }

    pub fn columns(&mut self, x: Expr, start: usize, len: usize) -> Expr {
        let cols = self.shape(x).1;
        assert!(start + len <= cols, "columns {start}..{} of {cols}", start + len);
        if start == 0 && len == cols {
            return x;
        }
        self.push(Op::Columns { x, start, len })
    }

    pub fn embed(&mut self, x: Expr, start: usize, total: usize) -> Expr {
        let cols = self.shape(x).1;
        assert!(start + cols <= total);
        if start == 0 && cols == total {
            return x;
        }
        self.push(Op::Embed { x, start, total })
    }

    pub fn concat(&mut self, a: Expr, b: Expr) -> Expr {
        assert_eq!(self.shape(a).0, self.shape(b).0, "concat row mismatch");
        self.push(Op::Concat(a, b))
    }

    fn compute(&self, op: &Op) -> Array2<f64> {
        let v = |e: &Expr| &self.nodes[e.0].value;
        match op {
            Op::Input(_) | Op::Param(_) | Op::Const => {
                unreachable!("leaves carry their own values")
            }
            Op::Add(a, b) => v(a) + v(b),
            Op::Sub(a, b) => v(a) - v(b),
            Op::Mul(a, b) => v(a) * v(b),
            Op::Div(a, b) => v(a) / v(b),
            Op::Neg(a) => -v(a),
            Op::Scale(a, c) => v(a) * *c,
            Op::Offset(a, c) => v(a) + *c,
            Op::Exp(a) => v(a).mapv(f64::exp),
            Op::Ln(a) => v(a).mapv(f64::ln),
            Op::Tanh(a) => v(a).mapv(f64::tanh),
            Op::Sigmoid(a) => v(a).mapv(sigmoid),
            Op::Softplus(a) => v(a).mapv(softplus),
            Op::Relu(a) => v(a).mapv(|x| x.max(0.0)),
            Op::Step(a) => v(a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::Square(a) => v(a).mapv(|x| x * x),
            Op::Sqrt(a) => v(a).mapv(f64::sqrt),
            Op::MatMul { a, b, ta, tb } => {
                let a = if *ta { v(a).t() } else { v(a).view() };
                let b = if *tb { v(b).t() } else { v(b).view() };
                a.dot(&b)
            }
            Op::Affine { x, w, b } => {
                let mut out = v(x).dot(v(w));
                out += v(b);
                out
            }
            Op::Broadcast(a, shape) => v(a)
                .broadcast(*shape)
                .expect("checked at construction")
                .to_owned(),
            Op::ReduceTo(a, shape) => {
                let mut out = v(a).clone();
                if shape.0 == 1 && out.nrows() != 1 {
                    out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
                }
                if shape.1 == 1 && out.ncols() != 1 {
                    out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
                }
                out
            }
            Op::Columns { x, start, len } => v(x).slice(s![.., *start..*start + *len]).to_owned(),
            Op::Embed { x, start, total } => {
                let x = v(x);
                let mut out = Array2::zeros((x.nrows(), *total));
                out.slice_mut(s![.., *start..*start + x.ncols()]).assign(x);
                out
            }
            Op::Concat(a, b) => ndarray::concatenate(Axis(1), &[v(a).view(), v(b).view()])
                .expect("row counts checked at construction"),
        }
    }

    /// First node up to and including `upto` holding a non-finite value.
    pub fn first_non_finite(&self, upto: Expr) -> Option<(usize, &'static str)> {
        self.nodes[..=upto.0]
            .iter()
            .position(|n| n.value.iter().any(|x| !x.is_finite()))
            .map(|i| (i, self.nodes[i].op.name()))
    }

    /// Re-evaluates the whole graph under new bindings and returns the value of
    /// the scalar `output`.
    ///
    /// `inputs` are matched to [`Graph::input`] leaves in creation order and
    /// must keep their original shapes. When `params` is `Some` it replaces the
    /// bound store.
    pub fn evaluate(
        &mut self,
        output: Expr,
        inputs: &[Array2<f64>],
        params: Option<&'p ParamStore>,
    ) -> Result<f64> {
        if inputs.len() != self.input_shapes.len() {
            return Err(Error::config(
                "inputs",
                format!(
                    "graph has {} inputs, {} bound",
                    self.input_shapes.len(),
                    inputs.len()
                ),
            ));
        }
        for (slot, (x, shape)) in inputs.iter().zip(&self.input_shapes).enumerate() {
            if x.dim() != *shape {
                return Err(Error::config(
                    format!("inputs[{slot}]"),
                    format!("expected shape {shape:?}, got {:?}", x.dim()),
                ));
            }
        }
        if params.is_some() {
            self.params = params;
        }
        self.sigmoid_cache.clear();
        for i in 0..self.nodes.len() {
            let value = match self.nodes[i].op {
                Op::Input(slot) => inputs[slot].clone(),
                Op::Param(id) => {
                    let store = self.params.ok_or_else(|| {
                        Error::config("params", format!("parameter #{} is unbound", id.0))
                    })?;
                    let t = store.get(id).ok_or_else(|| {
                        Error::config("params", format!("parameter #{} is unbound", id.0))
                    })?;
                    if t.dim() != self.nodes[i].value.dim() {
                        return Err(Error::config(
                            "params",
                            format!("parameter #{} changed shape", id.0),
                        ));
                    }
                    t.to_owned()
                }
                Op::Const => continue,
                ref op => self.compute(op),
            };
            self.nodes[i].value = value;
        }
        if let Some((node, name)) = self.first_non_finite(output) {
            return Err(Error::numeric(
                format!("node #{node} ({name})"),
                "non-finite value",
            ));
        }
        if self.shape(output) != (1, 1) {
            return Err(Error::contract("evaluate expects a scalar output"));
        }
        Ok(self.scalar_value(output))
    }
}
