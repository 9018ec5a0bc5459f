use super::*;
use crate::fields::{coord, half_square_norm, zero_field, FnField};

fn oscillator() -> Hamiltonian {
    Hamiltonian::new(
        Box::new(half_square_norm(Dependence::Momentum)),
        Box::new(half_square_norm(Dependence::Position)),
    )
    .unwrap()
}

fn angular_momentum() -> impl ScalarField {
    FnField::new(Dependence::Both, |g: &mut Graph<'_>, q, p| {
        let (q1, q2) = (coord(g, q, 0), coord(g, q, 1));
        let (p1, p2) = (coord(g, p, 0), coord(g, p, 1));
        let a = g.mul(q1, p2);
        let b = g.mul(q2, p1);
        Ok(g.sub(a, b))
    })
}

fn st(q: &[f64], p: &[f64]) -> StateVector {
    StateVector::new(q.to_vec(), p.to_vec()).unwrap()
}

#[test]
fn canonical_bracket() {
    let q1 = FnField::new(Dependence::Position, |g: &mut Graph<'_>, q, _| Ok(coord(g, q, 0)));
    let p1 = FnField::new(Dependence::Momentum, |g: &mut Graph<'_>, _, p| Ok(coord(g, p, 0)));
    for s in [st(&[0.3, -2.0], &[1.0, 4.0]), st(&[5.0, 1.0], &[-1.0, 0.0])] {
        assert_eq!(poisson_bracket_at(&q1, &p1, None, &s).unwrap(), 1.0);
        assert_eq!(poisson_bracket_at(&p1, &q1, None, &s).unwrap(), -1.0);
    }
}

#[test]
fn bracket_of_squares() {
    let f = FnField::new(Dependence::Position, |g: &mut Graph<'_>, q, _| {
        let c = coord(g, q, 0);
        Ok(g.square(c))
    });
    let h = FnField::new(Dependence::Momentum, |g: &mut Graph<'_>, _, p| {
        let c = coord(g, p, 0);
        Ok(g.square(c))
    });
    let v = poisson_bracket_at(&f, &h, None, &st(&[1.0], &[2.0])).unwrap();
    assert_eq!(v, 8.0);
}

#[test]
fn angular_momentum_commutes_with_isotropic_oscillator() {
    let g = angular_momentum();
    let h = oscillator();
    for s in [
        st(&[0.3, -2.0], &[1.0, 4.0]),
        st(&[1.7, 0.2], &[-0.4, 0.9]),
    ] {
        assert!(poisson_bracket_at(&g, &h, None, &s).unwrap().abs() < 1e-14);
    }
}

#[test]
fn infinitesimal_rotation() {
    let g = angular_momentum();
    let s = st(&[1.0, 0.0], &[0.0, 0.0]);
    let t = infinitesimal_transform_at(&g, 0.01, None, &s).unwrap();
    assert_eq!(t, st(&[1.0, 0.01], &[0.0, 0.0]));
    let s = st(&[0.4, -1.1], &[2.0, 0.7]);
    assert_eq!(infinitesimal_transform_at(&g, 0.0, None, &s).unwrap(), s);
    let constant = FnField::new(Dependence::Both, |g: &mut Graph<'_>, q, _| {
        let rows = g.shape(q).0;
        Ok(g.constant(ndarray::Array2::from_elem((rows, 1), 3.5)))
    });
    assert_eq!(infinitesimal_transform_at(&constant, 0.7, None, &s).unwrap(), s);
}

#[test]
fn leapfrog_harmonic_oscillator() {
    let h = oscillator();
    let s = st(&[1.0], &[0.0]);
    let out = leapfrog_step_at(&h, 0.1, None, &s, Direction::Forward).unwrap();
    assert!((out.q[0] - 0.995).abs() < 1e-15);
    assert!((out.p[0] + 0.09975).abs() < 1e-15);
    let back = leapfrog_step_at(&h, 0.1, None, &out, Direction::Inverse).unwrap();
    assert!(back.max_abs_diff(&s) < 1e-14);
}

#[test]
fn leapfrog_free_particle() {
    let h = Hamiltonian::new(
        Box::new(half_square_norm(Dependence::Momentum)),
        Box::new(zero_field(Dependence::Position)),
    )
    .unwrap();
    let out = leapfrog_step_at(&h, 1.0, None, &st(&[0.0], &[1.0]), Direction::Forward).unwrap();
    assert_eq!(out, st(&[1.0], &[1.0]));
}

#[test]
fn two_step_flow_and_round_trip() {
    let flow = FlowSpec::single(oscillator(), 0.1, 2).unwrap();
    let s = st(&[1.0], &[0.0]);
    let out = flow.forward_state(None, &s).unwrap();
    assert!((out.q[0] - 0.98005).abs() < 1e-14, "{out:?}");
    assert!((out.p[0] + 0.1985025).abs() < 1e-14, "{out:?}");
    let back = flow.inverse_state(None, &out).unwrap();
    assert!(back.max_abs_diff(&s) < 1e-14);
}

#[test]
fn zero_energy_flow_is_identity() {
    let h = Hamiltonian::new(
        Box::new(zero_field(Dependence::Momentum)),
        Box::new(zero_field(Dependence::Position)),
    )
    .unwrap();
    let flow = FlowSpec::single(h, 0.5, 2).unwrap();
    let s = st(&[0.3, -1.0], &[2.0, 0.25]);
    assert_eq!(flow.forward_state(None, &s).unwrap(), s);
    let det = jacobian_determinant_check(&flow, None, &s).unwrap();
    assert!((det - 1.0).abs() < 1e-9, "{det}");
}

#[test]
fn oscillator_flow_preserves_volume() {
    let flow = FlowSpec::single(oscillator(), 0.1, 2).unwrap();
    let det = jacobian_determinant_check(&flow, None, &st(&[0.7, -0.2], &[0.1, 1.3])).unwrap();
    assert!((det - 1.0).abs() < 1e-6, "{det}");
}

#[test]
fn wrong_blocks_are_rejected() {
    let swapped = Hamiltonian::new(
        Box::new(half_square_norm(Dependence::Position)),
        Box::new(half_square_norm(Dependence::Momentum)),
    );
    assert!(matches!(swapped, Err(Error::Contract(_))));
    assert!(FlowSpec::single(oscillator(), -0.1, 2).is_err());
    assert!(FlowSpec::single(oscillator(), 0.1, 0).is_err());
    assert!(FlowSpec::new(vec![], 0.1, 2).is_err());
}

#[test]
fn overflow_names_the_step() {
    let steep = FnField::new(Dependence::Position, |g: &mut Graph<'_>, q, _| {
        let sq = g.square(q);
        let s = g.sum_cols(sq);
        let big = g.scale(s, 400.0);
        Ok(g.exp(big))
    });
    let h = Hamiltonian::new(Box::new(half_square_norm(Dependence::Momentum)), Box::new(steep))
        .unwrap();
    let flow = FlowSpec::single(h, 0.1, 2).unwrap();
    match flow.forward_state(None, &st(&[1.2], &[0.0])) {
        Err(Error::Numeric { location, .. }) => assert!(location.contains("leapfrog step 0")),
        other => panic!("expected numeric failure, got {other:?}"),
    }
}
