use std::f64::consts::PI;

use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::densities::{BaseDensity, ModelDensity};
use crate::dynamics::{FlowSpec, Hamiltonian};
use crate::fields::{half_square_norm, zero_field, Dependence, FnField};
use crate::networks::{Activation, GaussianEncoder, Mlp, MlpField, MlpSpec, RadialField};

fn st(q: &[f64], p: &[f64]) -> StateVector {
    StateVector::new(q.to_vec(), p.to_vec()).unwrap()
}

fn oscillator() -> Hamiltonian {
    Hamiltonian::new(
        Box::new(half_square_norm(Dependence::Momentum)),
        Box::new(half_square_norm(Dependence::Position)),
    )
    .unwrap()
}

/// `K = ‖p‖²/2`, `U = ln(1 + ‖q‖²)`: a central force.
fn central() -> Hamiltonian {
    let u = FnField::new(Dependence::Position, |g: &mut Graph<'_>, q, _p| {
        let sq = g.square(q);
        let r2 = g.sum_cols(sq);
        let one = g.offset(r2, 1.0);
        Ok(g.ln(one))
    });
    Hamiltonian::new(Box::new(half_square_norm(Dependence::Momentum)), Box::new(u)).unwrap()
}

fn so2_set(kappa: f64, lambda: f64) -> GeneratorSet {
    GeneratorSet::new().with(Generator::so2(), kappa, lambda).unwrap()
}

#[test]
fn penalty_vanishes_for_isotropic_oscillator() {
    let pi = BaseDensity::spherical_normal(4).unwrap();
    let s = pi.sample(256, 3);
    let c = commutator_penalty(&so2_set(0.0, 1.0), &oscillator(), None, &s).unwrap();
    assert_eq!(c, vec![0.0]);
}

#[test]
fn penalty_of_translation_breaking_energy() {
    let h = FnField::new(Dependence::Position, |g: &mut Graph<'_>, q, _p| Ok(g.columns(q, 0, 1)));
    let s = PhaseBatch::new(
        array![[0.3, 1.0], [-2.0, -1.0], [1.5, 1.0], [0.0, -1.0]],
        array![[0.1, 0.2], [0.3, -0.4], [1.0, 2.0], [-0.5, 0.7]],
    )
    .unwrap();
    for kappa in [0.0, 0.25, 1.0] {
        let c = commutator_penalty(&so2_set(kappa, 1.0), &h, None, &s).unwrap();
        assert!((c[0] - (1.0 - kappa)).abs() < 1e-15, "{c:?}");
    }
}

#[test]
fn raw_penalty_is_non_negative() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = Mlp::new(MlpSpec::new(vec![2, 8, 1], Activation::Softplus, "u"), &mut store, &mut rng, 1.0).unwrap();
    let k = Mlp::new(MlpSpec::new(vec![2, 8, 1], Activation::Softplus, "k"), &mut store, &mut rng, 1.0).unwrap();
    let h = Hamiltonian::new(
        Box::new(MlpField::new(k, Dependence::Momentum).unwrap()),
        Box::new(MlpField::new(u, Dependence::Position).unwrap()),
    )
    .unwrap();
    let s = BaseDensity::spherical_normal(4).unwrap().sample(64, 1);
    let c = commutator_penalty(&so2_set(0.0, 1.0), &h, Some(&store), &s).unwrap();
    assert!(c[0] > 0.0);
}

#[test]
fn empty_penalty_batch_is_a_contract_error() {
    let s = PhaseBatch::new(Array2::zeros((0, 2)), Array2::zeros((0, 2))).unwrap();
    let err = commutator_penalty(&so2_set(0.0, 1.0), &oscillator(), None, &s).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn built_in_generators_are_linear_in_momentum() {
    let s = BaseDensity::spherical_normal(6).unwrap().sample(50, 2);
    let gens = [
        Generator::AngularMomentum { i: 0, j: 2 },
        Generator::AngularMomentum { i: 2, j: 1 },
        Generator::Bilinear {
            matrix: vec![vec![0.5, -1.0, 2.0], vec![0.0, 3.0, 1.0], vec![-2.0, 0.1, 0.0]],
        },
    ];
    for gen in gens {
        assert!(gen.momentum_hessian_max(&s).unwrap() < 1e-14);
    }
}

#[test]
fn bilinear_generator_matches_angular_momentum() {
    let rot = Generator::Bilinear {
        matrix: vec![vec![0.0, 1.0], vec![-1.0, 0.0]],
    };
    let s = st(&[0.7, -1.3], &[2.0, 0.4]);
    let a = crate::fields::field_value(&rot, None, &s).unwrap();
    let b = crate::fields::field_value(&Generator::so2(), None, &s).unwrap();
    assert!((a - b).abs() < 1e-15);
    assert!((b - (0.7 * 0.4 - -1.3 * 2.0)).abs() < 1e-15);
}

#[test]
fn generator_indices_are_checked() {
    let s = st(&[1.0, 2.0], &[0.0, 0.0]);
    let bad = Generator::AngularMomentum { i: 0, j: 2 };
    assert!(crate::fields::field_value(&bad, None, &s).is_err());
    let same = Generator::AngularMomentum { i: 1, j: 1 };
    assert!(same.validate(2).is_err());
    assert!(Generator::Bilinear { matrix: vec![vec![1.0]] }.validate(2).is_err());
}

#[test]
fn json_form_of_generators() {
    let g: Generator = serde_json::from_str(r#"{"kind":"angular-momentum","i":0,"j":1}"#).unwrap();
    assert_eq!(g, Generator::so2());
    let b: Generator = serde_json::from_str(r#"{"kind":"bilinear","matrix":[[1,0],[0,1]]}"#).unwrap();
    assert!(matches!(b, Generator::Bilinear { .. }));
    assert!(serde_json::from_str::<Generator>(r#"{"kind":"angular-momentum","i":0,"j":1,"x":2}"#).is_err());
}

#[test]
fn angular_momentum_is_conserved_by_central_forces() {
    let flow = FlowSpec::single(central(), 0.1, 2).unwrap();
    let s0 = st(&[1.0, 0.0], &[0.0, 1.0]);
    let drift = noether_drift(&Generator::so2(), &flow, None, &s0, 100).unwrap();
    assert!(drift < 1e-12, "{drift}");
    let batch = BaseDensity::spherical_normal(4).unwrap().sample(20, 5);
    let drifts = noether_drift_batch(&Generator::so2(), &flow, None, &batch, 100).unwrap();
    assert!(drifts.iter().all(|&d| d < 1e-12), "{drifts:?}");
}

#[test]
fn energy_drift_is_second_order_in_dt() {
    // a circular orbit cancels the leading error; start from rest instead
    let s0 = st(&[1.0, 0.5], &[0.0, 0.0]);
    let h = oscillator();
    let coarse = noether_drift(&h, &FlowSpec::single(oscillator(), 0.1, 2).unwrap(), None, &s0, 100).unwrap();
    let fine = noether_drift(&h, &FlowSpec::single(oscillator(), 0.05, 2).unwrap(), None, &s0, 200).unwrap();
    assert!(coarse > 0.0 && coarse < 0.01, "{coarse}");
    let ratio = coarse / fine;
    assert!((3.5..4.5).contains(&ratio), "{ratio}");
}

#[test]
fn zero_length_trajectory_has_no_drift() {
    let flow = FlowSpec::single(oscillator(), 0.1, 2).unwrap();
    let d = noether_drift(&oscillator(), &flow, None, &st(&[3.0, 1.0], &[2.0, 0.5]), 0).unwrap();
    assert_eq!(d, 0.0);
}

#[test]
fn normal_base_is_rotation_invariant() {
    // T_g^ε is a first-order rotation: it scales ‖s‖² by 1 + ε², so ln π moves
    // by exactly ε²‖s‖²/2 and the first-order term vanishes.
    let pi = BaseDensity::spherical_normal(4).unwrap();
    let s = st(&[0.3, -1.2], &[0.8, 2.1]);
    let norm2: f64 = s.to_vec().iter().map(|x| x * x).sum();
    for eps in [0.01, 0.1, 0.5] {
        let r = base_invariance_check(&pi, &Generator::so2(), &s, eps).unwrap();
        assert!((r - 0.5 * eps * eps * norm2).abs() <= 1e-12, "ε={eps}: {r}");
    }
    assert_eq!(base_invariance_check(&pi, &Generator::so2(), &s, 0.0).unwrap(), 0.0);
}

#[test]
fn shifted_normal_violates_invariance_at_first_order() {
    let pi = BaseDensity::spherical_normal(4).unwrap();
    let shifted = |s: &StateVector| {
        let mut t = s.clone();
        t.q[0] -= 1.0;
        pi.log_prob(&t)
    };
    let s = st(&[0.3, -1.2], &[0.8, 2.1]);
    for eps in [1e-2, 1e-3] {
        let a = invariance_residual(shifted, &Generator::so2(), None, &s, eps).unwrap();
        let b = invariance_residual(shifted, &Generator::so2(), None, &s, eps / 2.0).unwrap();
        let ratio = a / b;
        assert!((1.9..2.1).contains(&ratio), "{ratio}");
    }
}

#[test]
fn lambda_ascent_examples() {
    assert_eq!(lambda_ascent(1.0, 0.0, 0.3), 1.0);
    assert!((lambda_ascent(1.0, 0.5, 0.01) - 0.005f64.exp()).abs() < 1e-15);
    assert!((lambda_ascent(1.0, 0.5, 0.01) - 1.00501).abs() < 1e-5);
    let mut l = 1e-8;
    for _ in 0..100 {
        let next = lambda_ascent(l, -1e3, 0.1);
        assert!(next >= 0.0 && next <= l);
        l = next;
    }
    assert!(l < 1e-20);
}

#[test]
fn slack_average_starts_at_first_observation() {
    let mut set = so2_set(0.1, 1.0);
    assert!(!set.satisfied());
    set.observe(&[0.5]).unwrap();
    assert_eq!(set.constraints()[0].slack_ema, Some(0.5));
    set.observe(&[-0.5]).unwrap();
    assert!((set.constraints()[0].slack_ema.unwrap() - 0.49).abs() < 1e-15);
    set.ascend(0.01);
    assert!((set.lambdas()[0] - 0.0049f64.exp()).abs() < 1e-15);
    assert!(set.observe(&[0.0, 1.0]).is_err());
    assert!(GeneratorSet::new().with(Generator::so2(), -1.0, 1.0).is_err());
    assert!(GeneratorSet::new().with(Generator::so2(), 0.0, -1.0).is_err());
}

#[test]
fn multiplier_responds_monotonically() {
    let samples = BaseDensity::spherical_normal(4).unwrap().sample(256, 6);
    let violating = FnField::new(Dependence::Position, |g: &mut Graph<'_>, q, _p| Ok(g.columns(q, 0, 1)));
    let mut up = so2_set(0.1, 1.0);
    let mut down = so2_set(0.1, 1.0);
    let mut prev = (1.0, 1.0);
    for _ in 0..50 {
        let c = commutator_penalty(&up, &violating, None, &samples).unwrap();
        up.observe(&c).unwrap();
        up.ascend(0.01);
        let c = commutator_penalty(&down, &oscillator(), None, &samples).unwrap();
        down.observe(&c).unwrap();
        down.ascend(0.01);
        let cur = (up.lambdas()[0], down.lambdas()[0]);
        assert!(cur.0 > prev.0 && cur.1 < prev.1);
        prev = cur;
    }
}

fn model_with(
    store: &mut ParamStore,
    kinetic: Box<dyn ScalarField>,
    potential: Box<dyn ScalarField>,
    rng: &mut ChaCha8Rng,
) -> ModelDensity {
    let flow = FlowSpec::single(Hamiltonian::new(kinetic, potential).unwrap(), 0.5, 2).unwrap();
    let enc = GaussianEncoder::new(2, &[8], store, rng).unwrap();
    ModelDensity::new(flow, BaseDensity::spherical_normal(4).unwrap(), enc).unwrap()
}

#[test]
fn probe_on_identity_flow() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = model_with(
        &mut store,
        Box::new(zero_field(Dependence::Momentum)),
        Box::new(zero_field(Dependence::Position)),
        &mut rng,
    );
    let qs = m.base.sample(100, 3).q;
    let r = density_invariance_probe(&m, &store, 0.0, &qs, 1).unwrap();
    assert_eq!((r.joint, r.marginal), (0.0, 0.0));
    for angle in [PI / 7.0, PI / 3.0, 2.0] {
        let r = density_invariance_probe(&m, &store, angle, &qs, 1).unwrap();
        assert!(r.joint <= 1e-6, "{r:?}");
    }
}

#[test]
fn probe_on_invariant_networks() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = |p: &str| MlpSpec::new(vec![1, 16, 16, 1], Activation::Softplus, p);
    let k = Mlp::new(spec("k"), &mut store, &mut rng, 1.0).unwrap();
    let u = Mlp::new(spec("u"), &mut store, &mut rng, 1.0).unwrap();
    let m = model_with(
        &mut store,
        Box::new(RadialField::new(k, Dependence::Momentum).unwrap()),
        Box::new(RadialField::new(u, Dependence::Position).unwrap()),
        &mut rng,
    );
    let qs = m.base.sample(200, 4).q;
    for angle in [0.0, PI / 7.0, PI / 3.0, PI / 2.0, 3.0] {
        let r = density_invariance_probe(&m, &store, angle, &qs, 9).unwrap();
        assert!(r.joint <= 1e-6 && r.marginal <= 1e-12, "{r:?}");
    }
}

#[test]
fn probe_detects_non_invariant_potential() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = Mlp::new(MlpSpec::new(vec![2, 16, 1], Activation::Softplus, "u"), &mut store, &mut rng, 1.0).unwrap();
    let m = model_with(
        &mut store,
        Box::new(half_square_norm(Dependence::Momentum)),
        Box::new(MlpField::new(u, Dependence::Position).unwrap()),
        &mut rng,
    );
    let qs = m.base.sample(200, 4).q;
    let r = density_invariance_probe(&m, &store, PI / 3.0, &qs, 9).unwrap();
    assert!(r.joint > 1e-3 && r.marginal > 1e-3, "{r:?}");
}

#[test]
fn probe_requires_planar_positions() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let flow = FlowSpec::single(
        Hamiltonian::new(
            Box::new(zero_field(Dependence::Momentum)),
            Box::new(zero_field(Dependence::Position)),
        )
        .unwrap(),
        0.5,
        2,
    )
    .unwrap();
    let enc = GaussianEncoder::new(3, &[4], &mut store, &mut rng).unwrap();
    let m = ModelDensity::new(flow, BaseDensity::spherical_normal(6).unwrap(), enc).unwrap();
    let err = density_invariance_probe(&m, &store, 1.0, &Array2::zeros((4, 3)), 0).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
}
