use ndarray::{array, Array2};

use super::*;
use crate::error::Error;

fn s(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

#[test]
fn evaluates_primitives() {
    let mut g = Graph::new();
    let x = g.input_scalar(2.0);
    let y = g.input_scalar(3.0);
    let xy = g.mul(x, y);
    assert_eq!(g.scalar_value(xy), 6.0);

    let z = g.scalar(0.0);
    let sp = g.softplus(z);
    assert!((g.scalar_value(sp) - 2f64.ln()).abs() < 1e-15);

    let ten = g.scalar(10.0);
    let sg = g.sigmoid(ten);
    assert!((g.scalar_value(sg) - 0.999_954_602_131_297_6).abs() < 1e-15);
}

#[test]
fn input_gradients_and_second_order() {
    let mut g = Graph::new();
    let x = g.input_scalar(3.0);
    let x2 = g.square(x);
    let dx = g.grad(x2, &[x]).unwrap()[0];
    assert_eq!(g.scalar_value(dx), 6.0);

    let z = g.input_scalar(0.0);
    let sp = g.softplus(z);
    let d1 = g.grad(sp, &[z]).unwrap()[0];
    assert!((g.scalar_value(d1) - 0.5).abs() < 1e-15);
    let d2 = g.grad(d1, &[z]).unwrap()[0];
    assert!((g.scalar_value(d2) - 0.25).abs() < 1e-15);
}

#[test]
fn parameter_gradients() {
    let mut store = ParamStore::new();
    let w = store.register("w", 1, 1, || 2.0).unwrap();
    let unused = store.register("unused", 2, 2, || 1.0).unwrap();
    let _ = unused;

    let mut g = Graph::with_params(&store);
    let wv = g.param(w).unwrap();
    let x = g.input_scalar(3.0);
    let wx = g.mul(wv, x);
    assert_eq!(g.grad_params(wx).unwrap(), vec![3.0, 0.0, 0.0, 0.0, 0.0]);

    let sq = g.square(wx);
    assert_eq!(g.grad_params(sq).unwrap()[0], 36.0);
}

#[test]
fn parameter_gradient_through_input_gradient() {
    let mut store = ParamStore::new();
    let w = store.register("w", 1, 1, || 1.0).unwrap();
    let mut g = Graph::with_params(&store);
    let wv = g.param(w).unwrap();
    let x = g.input_scalar(0.0);
    let wx = g.mul(wv, x);
    let sp = g.softplus(wx);
    let dsp = g.grad(sp, &[x]).unwrap()[0];
    let f = g.square(dsp);
    // f(w) = (w σ(0))² = w²/4 at x = 0
    let grad = g.grad_params(f).unwrap();
    assert!((grad[0] - 0.5).abs() < 1e-15, "{grad:?}");
}

#[test]
fn grad_of_non_scalar_is_a_contract_error() {
    let mut g = Graph::new();
    let x = g.input(array![[1.0, 2.0]]);
    let y = g.square(x);
    assert!(matches!(g.grad(y, &[x]), Err(Error::Contract(_))));
}

#[test]
fn unreachable_wrt_gets_zeros() {
    let mut g = Graph::new();
    let x = g.input(array![[1.0, 2.0]]);
    let y = g.input_scalar(4.0);
    let out = g.square(y);
    let dx = g.grad(out, &[x]).unwrap()[0];
    assert_eq!(g.value(dx), &array![[0.0, 0.0]]);
}

#[test]
fn evaluate_rebinds_and_is_pure() {
    let mut g = Graph::new();
    let x = g.input_scalar(1.0);
    let y = g.input_scalar(1.0);
    let t = g.tanh(x);
    let e = g.exp(y);
    let out = g.mul(t, e);
    let a = g.evaluate(out, &[s(0.3), s(-1.2)], None).unwrap();
    let b = g.evaluate(out, &[s(0.3), s(-1.2)], None).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!((a - 0.3f64.tanh() * (-1.2f64).exp()).abs() < 1e-15);
}

#[test]
fn evaluate_reports_unbound_and_non_finite() {
    let mut g = Graph::new();
    let x = g.input_scalar(1.0);
    let l = g.ln(x);
    let out = g.scale(l, 2.0);
    assert!(matches!(g.evaluate(out, &[], None), Err(Error::Config { .. })));
    match g.evaluate(out, &[s(-1.0)], None) {
        Err(Error::Numeric { location, .. }) => assert!(location.contains("ln"), "{location}"),
        other => panic!("expected numeric error, got {other:?}"),
    }

    let store = ParamStore::new();
    let mut g = Graph::with_params(&store);
    let mut other = ParamStore::new();
    let id = other.register("w", 1, 1, || 0.0).unwrap();
    assert!(matches!(g.param(id), Err(Error::Config { .. })));
    let mut g = Graph::new();
    assert!(matches!(g.param(id), Err(Error::Config { .. })));
}

#[test]
fn matmul_transpose_flags_match_explicit_products() {
    let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
    let b = array![[0.5, -1.0], [2.0, 0.0], [1.0, 1.5]];
    let mut g = Graph::new();
    let ea = g.input(a.clone());
    let eb = g.input(b.clone());
    let ab = g.matmul(ea, eb);
    assert_eq!(g.value(ab), &a.dot(&b));
    let at = g.input(a.t().to_owned());
    let bt = g.input(b.t().to_owned());
    let ab2 = g.matmul_t(at, bt, true, true);
    assert_eq!(g.value(ab2), &a.dot(&b));
}

#[test]
fn broadcasting_binary_ops_reduce_in_backward() {
    let mut g = Graph::new();
    let col = g.input(array![[1.0], [2.0]]);
    let row = g.input(array![[3.0, 4.0, 5.0]]);
    let prod = g.mul(col, row);
    assert_eq!(g.shape(prod), (2, 3));
    let total = g.sum(prod);
    let d = g.grad(total, &[col, row]).unwrap();
    assert_eq!(g.value(d[0]), &array![[12.0], [12.0]]);
    assert_eq!(g.value(d[1]), &array![[3.0, 3.0, 3.0]]);
}
