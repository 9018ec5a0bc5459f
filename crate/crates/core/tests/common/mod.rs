//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use hamflow::autodiff::{Expr, Graph, ParamStore};
use hamflow::densities::{BaseDensity, ModelDensity};
use hamflow::dynamics::{FlowSpec, Hamiltonian};
use hamflow::fields::{zero_field, Dependence, FnField, ScalarField};
use hamflow::networks::{Activation, GaussianEncoder, Mlp, MlpField, MlpSpec, SCALE_FLOOR};
use hamflow::seed::rng_for;

/// Largest of `|a − b| / max(1, |a|, |b|)` over paired entries.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random graph on an `n × m` input. Every intermediate keeps that shape; a
/// closing weighted sum makes the output scalar. Depth is at most 6.
pub fn random_graph(g: &mut Graph<'_>, x: Expr, rng: &mut ChaCha8Rng) -> Expr {
    let (n, m) = g.shape(x);
    let mut pool = vec![x];
    let depth = rng.random_range(1..=6);
    for _ in 0..depth {
        let a = pool[rng.random_range(0..pool.len())];
        let b = pool[rng.random_range(0..pool.len())];
        let node = match rng.random_range(0..16) {
            0 => g.add(a, b),
            1 => g.sub(a, b),
            2 => g.mul(a, b),
            3 => g.tanh(a),
            4 => g.sigmoid(a),
            5 => g.softplus(a),
            6 => g.square(a),
            7 => g.scale(a, rng.random_range(-2.0..2.0)),
            8 => g.offset(a, rng.random_range(-1.0..1.0)),
            9 => {
                let t = g.tanh(a);
                g.exp(t)
            }
            10 => {
                let w = g.constant(random_matrix(rng, m, m, 0.7));
                g.matmul(a, w)
            }
            11 => {
                let w = g.constant(random_matrix(rng, m, m, 0.7));
                let bias = g.constant(random_matrix(rng, 1, m, 0.5));
                g.affine(a, w, bias)
            }
            12 => {
                let sq = g.square(b);
                let den = g.offset(sq, 1.0);
                g.div(a, den)
            }
            13 => {
                let sq = g.square(a);
                let sh = g.offset(sq, 1.0);
                g.sqrt(sh)
            }
            14 => {
                let sq = g.square(a);
                let sh = g.offset(sq, 1.0);
                g.ln(sh)
            }
            _ => {
                let rows = g.sum_cols(a);
                let wide = g.broadcast_to(rows, (n, m));
                g.mul(wide, b)
            }
        };
        pool.push(node);
    }
    let last = *pool.last().expect("non-empty");
    let weights = g.constant(random_matrix(rng, n, m, 1.0));
    let weighted = g.mul(last, weights);
    g.sum(weighted)
}

/// Errors of one randomized graph: first derivative against central
/// differences (step `1e-5`), and a Hessian-vector product against central
/// differences of the analytic gradient.
pub struct GradientCheck {
    pub first: f64,
    pub second: f64,
}

pub fn check_random_graph(seed: u64) -> GradientCheck {
    let mut rng = rng_for(seed, "random-graph");
    let (n, m) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let x0 = random_matrix(&mut rng, n, m, 0.8);
    let v = random_matrix(&mut rng, n, m, 1.0);

    let mut g = Graph::new();
    let x = g.input(x0.clone());
    let f = random_graph(&mut g, x, &mut rng);
    let dx = g.grad(f, &[x]).expect("scalar output")[0];
    let vv = g.constant(v.clone());
    let dv = g.mul(dx, vv);
    let dvs = g.sum(dv);
    let hv = g.grad(dvs, &[x]).expect("scalar output")[0];
    let ad: Vec<f64> = g.value(dx).iter().copied().collect();
    let ad_hv: Vec<f64> = g.value(hv).iter().copied().collect();

    const H: f64 = 1e-5;
    let mut fd = Vec::with_capacity(n * m);
    for k in 0..n * m {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp.as_slice_mut().expect("standard layout")[k] += H;
        xm.as_slice_mut().expect("standard layout")[k] -= H;
        let fp = g.evaluate(f, &[xp], None).expect("finite");
        let fm = g.evaluate(f, &[xm], None).expect("finite");
        fd.push((fp - fm) / (2.0 * H));
    }
    let grad_at = |g: &mut Graph<'_>, x: Array2<f64>| -> Vec<f64> {
        g.evaluate(f, &[x], None).expect("finite");
        g.value(dx).iter().copied().collect()
    };
    let gp = grad_at(&mut g, &x0 + &(&v * H));
    let gm = grad_at(&mut g, &x0 - &(&v * H));
    let fd_hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * H)).collect();
    GradientCheck {
        first: max_rel_err(&ad, &fd),
        second: max_rel_err(&ad_hv, &fd_hv),
    }
}

/// Softplus-MLP energy on one block with random widths.
pub fn random_mlp_field(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    d: usize,
    block: Dependence,
    prefix: &str,
) -> MlpField {
    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=8)).collect();
    let mlp = Mlp::new(
        MlpSpec::with_hidden(d, &hidden, 1, Activation::Softplus, prefix),
        store,
        rng,
        1.0,
    )
    .expect("valid spec");
    MlpField::new(mlp, block).expect("scalar output")
}

pub fn random_hamiltonian(store: &mut ParamStore, rng: &mut ChaCha8Rng, d: usize, tag: &str) -> Hamiltonian {
    let k = random_mlp_field(store, rng, d, Dependence::Momentum, &format!("{tag}.k"));
    let u = random_mlp_field(store, rng, d, Dependence::Position, &format!("{tag}.u"));
    Hamiltonian::new(Box::new(k), Box::new(u)).expect("separable")
}

/// Checks for a random softplus-MLP Hamiltonian: the input gradient of `H`
/// against central differences, and the parameter gradient of the mean
/// squared bracket `{g, H}²` (a derivative of input derivatives) against
/// central differences of its value, with `g` the planar angular momentum.
pub fn check_random_hamiltonian(seed: u64) -> GradientCheck {
    let mut rng = rng_for(seed, "random-hamiltonian");
    let d = 2;
    let mut store = ParamStore::new();
    let h = random_hamiltonian(&mut store, &mut rng, d, "h");
    let rows = rng.random_range(1..=4);
    let q0 = random_matrix(&mut rng, rows, d, 1.0);
    let p0 = random_matrix(&mut rng, rows, d, 1.0);

    let energy = |store: &ParamStore, q: &Array2<f64>, p: &Array2<f64>| -> f64 {
        let mut g = Graph::with_params(store);
        let qe = g.input(q.clone());
        let pe = g.input(p.clone());
        let e = h.build(&mut g, qe, pe).expect("field");
        let s = g.sum(e);
        g.scalar_value(s)
    };
    let mut g = Graph::with_params(&store);
    let qe = g.input(q0.clone());
    let pe = g.input(p0.clone());
    let e = h.build(&mut g, qe, pe).expect("field");
    let s = g.sum(e);
    let d_in = g.grad(s, &[qe, pe]).expect("scalar");
    let ad: Vec<f64> = g.value(d_in[0]).iter().chain(g.value(d_in[1]).iter()).copied().collect();

    const H: f64 = 1e-5;
    let mut fd = Vec::new();
    for block in 0..2 {
        for k in 0..rows * d {
            let mut q = q0.clone();
            let mut p = p0.clone();
            let target = if block == 0 { &mut q } else { &mut p };
            target.as_slice_mut().expect("standard layout")[k] += H;
            let fp = energy(&store, &q, &p);
            let target = if block == 0 { &mut q } else { &mut p };
            target.as_slice_mut().expect("standard layout")[k] -= 2.0 * H;
            let fm = energy(&store, &q, &p);
            fd.push((fp - fm) / (2.0 * H));
        }
    }

    let penalty = |store: &ParamStore| -> (f64, Vec<f64>) {
        let mut g = Graph::with_params(store);
        let qe = g.input(q0.clone());
        let pe = g.input(p0.clone());
        let gen = angular_momentum();
        let b = hamflow::dynamics::poisson_bracket(&mut g, &gen, &h, qe, pe).expect("bracket");
        let sq = g.square(b);
        let m = g.mean(sq);
        let v = g.scalar_value(m);
        (v, g.grad_params(m).expect("scalar"))
    };
    let (_, ad_p) = penalty(&store);
    // ten random coordinates keep the check cheap
    let mut idx: Vec<usize> = (0..store.len()).collect();
    for i in 0..idx.len() {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx.truncate(10);
    let mut fd_p = Vec::new();
    let mut ad_sel = Vec::new();
    for &i in &idx {
        let v0 = store.values()[i];
        store.values_mut()[i] = v0 + H;
        let (fp, _) = penalty(&store);
        store.values_mut()[i] = v0 - H;
        let (fm, _) = penalty(&store);
        store.values_mut()[i] = v0;
        fd_p.push((fp - fm) / (2.0 * H));
        ad_sel.push(ad_p[i]);
    }
    GradientCheck {
        first: max_rel_err(&ad, &fd),
        second: max_rel_err(&ad_sel, &fd_p),
    }
}

/// `q₁p₂ − q₂p₁`.
pub fn angular_momentum() -> impl ScalarField {
    FnField::new(Dependence::Both, |g: &mut Graph<'_>, q, p| {
        let q1 = g.columns(q, 0, 1);
        let q2 = g.columns(q, 1, 1);
        let p1 = g.columns(p, 0, 1);
        let p2 = g.columns(p, 1, 1);
        let a = g.mul(q1, p2);
        let b = g.mul(q2, p1);
        Ok(g.sub(a, b))
    })
}

/// Identity flow, spherical-normal base and an encoder with constant
/// `μ = 0`, `σ = scale`: the ELBO has a closed form.
pub fn tractable_model(d: usize, scale: f64) -> (ModelDensity, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = rng_for(0, "tractable");
    let enc = GaussianEncoder::new(d, &[4], &mut store, &mut rng).expect("encoder");
    store.values_mut().iter_mut().for_each(|v| *v = 0.0);
    let raw = ((scale - SCALE_FLOOR).exp() - 1.0).ln();
    let id = store.id("encoder.scale.b1").expect("output bias");
    store.tensor_mut(id).fill(raw);
    let h = Hamiltonian::new(
        Box::new(zero_field(Dependence::Momentum)),
        Box::new(zero_field(Dependence::Position)),
    )
    .expect("separable");
    let flow = FlowSpec::single(h, 0.5, 2).expect("flow");
    let base = BaseDensity::spherical_normal(2 * d).expect("base");
    (ModelDensity::new(flow, base, enc).expect("model"), store)
}

/// `K = ‖p‖²/2`, `U = ln(1 + ‖q‖²)`: a rotation-invariant, non-quadratic
/// Hamiltonian.
pub fn central_force() -> Hamiltonian {
    let k = FnField::new(Dependence::Momentum, |g: &mut Graph<'_>, _q, p| {
        let sq = g.square(p);
        let s = g.sum_cols(sq);
        Ok(g.scale(s, 0.5))
    });
    let u = FnField::new(Dependence::Position, |g: &mut Graph<'_>, q, _p| {
        let sq = g.square(q);
        let s = g.sum_cols(sq);
        let one = g.offset(s, 1.0);
        Ok(g.ln(one))
    });
    Hamiltonian::new(Box::new(k), Box::new(u)).expect("separable")
}
