mod common;

use hamflow::dynamics::{commutation_residual, leapfrog_step_at, Direction};
use hamflow::fields::field_value;
use hamflow::phase::StateVector;
use hamflow::seed::rng_for;
use hamflow::symmetry::noether_drift;

use common::*;

fn random_states(count: usize, seed: u64) -> Vec<StateVector> {
    let mut rng = rng_for(seed, "states");
    (0..count)
        .map(|_| {
            let x = random_matrix(&mut rng, 1, 4, 1.0);
            StateVector::from_slice(x.as_slice().unwrap()).unwrap()
        })
        .collect()
}

const GRID: [f64; 3] = [0.1, 0.05, 0.025];

#[test]
fn commutation_residual_halves_with_eps_and_dt() {
    let h = central_force();
    let g = angular_momentum();
    let r = |eps: f64, dt: f64, s: &StateVector| commutation_residual(&h, &g, eps, dt, None, s).unwrap();
    for s in random_states(20, 3) {
        for &dt in &GRID {
            for w in GRID.windows(2) {
                let ratio = r(w[0], dt, &s) / r(w[1], dt, &s);
                assert!(ratio >= 1.8, "eps {}→{} at dt {dt}: ratio {ratio}", w[0], w[1]);
            }
        }
        for &eps in &GRID {
            for w in GRID.windows(2) {
                let ratio = r(eps, w[0], &s) / r(eps, w[1], &s);
                assert!(ratio >= 1.8, "dt {}→{} at eps {eps}: ratio {ratio}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn non_invariant_hamiltonian_breaks_commutation_at_first_order() {
    // U = q₁ has {g, H} = q₂, so the residual is O(ε·dt) rather than smaller
    let u = hamflow::fields::FnField::new(hamflow::fields::Dependence::Position, |g, q, _p| {
        Ok(g.columns(q, 0, 1))
    });
    let gen = angular_momentum();
    let s = StateVector::new(vec![0.3, 1.0], vec![0.2, -0.4]).unwrap();
    let r1 = commutation_residual(&u, &gen, 0.05, 0.05, None, &s).unwrap();
    let r2 = commutation_residual(&u, &gen, 0.025, 0.025, None, &s).unwrap();
    assert!((r1 / r2 - 4.0).abs() < 0.2, "ratio {}", r1 / r2);
}

#[test]
fn leapfrog_energy_error_stays_bounded() {
    let h = central_force();
    let mut s = StateVector::new(vec![1.0, 0.5], vec![0.2, 0.7]).unwrap();
    let e0 = field_value(&h, None, &s).unwrap();
    let (mut first, mut second) = (0.0f64, 0.0f64);
    let n = 10_000;
    for t in 0..n {
        s = leapfrog_step_at(&h, 0.1, None, &s, Direction::Forward).unwrap();
        let err = (field_value(&h, None, &s).unwrap() - e0).abs();
        if t < n / 2 {
            first = first.max(err);
        } else {
            second = second.max(err);
        }
    }
    assert!(first < 1e-2, "energy error {first}");
    // no secular growth: the late error envelope matches the early one
    assert!(second < 1.5 * first, "early {first}, late {second}");
}

#[test]
fn angular_momentum_is_conserved_by_central_force_leapfrog() {
    let flow = hamflow::dynamics::FlowSpec::single(central_force(), 0.1, 1).unwrap();
    let gen = hamflow::symmetry::Generator::so2();
    for s in random_states(10, 9) {
        let drift = noether_drift(&gen, &flow, None, &s, 100).unwrap();
        assert!(drift < 1e-12, "drift {drift}");
    }
}
