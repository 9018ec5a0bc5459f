use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::autodiff::{write_atomic, ParamStore};
use crate::densities::{kde_grid, Bandwidth, Grid, GridSpec, ModelDensity};
use crate::dynamics::{graph_for, leapfrog_step, Direction};
use crate::error::{Error, Result};
use crate::fields::{field_values, ScalarField};
use crate::phase::PhaseBatch;
use crate::seed::derive_seed;
use crate::symmetry::{density_invariance_probe, Generator, ProbeReport};

use super::config::ExportConfig;
use super::data::Target;

pub const MODEL_KDE_FILE: &str = "model_kde.csv";
pub const TARGET_KDE_FILE: &str = "target_kde.csv";
pub const POTENTIAL_FILE: &str = "potential.csv";
pub const KINETIC_FILE: &str = "kinetic.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const INVARIANCE_FILE: &str = "invariance.csv";

pub fn grid_spec(cfg: &ExportConfig) -> GridSpec {
    GridSpec::square(cfg.grid_half_width, cfg.grid_points)
}

/// Sum over the flow's Hamiltonians of the potential (`Position`) or kinetic
/// (`Momentum`) energy at the grid points.
pub fn energy_grid(
    model: &ModelDensity,
    params: &ParamStore,
    spec: GridSpec,
    which: crate::fields::Dependence,
) -> Result<Grid> {
    if model.dim() != 2 {
        return Err(Error::Unsupported(format!("energy grids need d = 2, model has d = {}", model.dim())));
    }
    let pts = Grid::points(&spec);
    let batch = PhaseBatch::new(pts.clone(), pts)?;
    let mut total = vec![0.0; batch.len()];
    for h in model.flow.hamiltonians() {
        let f: &dyn ScalarField = match which {
            crate::fields::Dependence::Momentum => h.kinetic(),
            _ => h.potential(),
        };
        for (t, v) in total.iter_mut().zip(field_values(f, Some(params), &batch)?) {
            *t += v;
        }
    }
    Grid::from_values(spec, &total)
}

/// Writes the model KDE, target KDE, `U(q)` and `K(p)` grids into `dir`.
pub fn export_grids(
    model: &ModelDensity,
    params: &ParamStore,
    target: &Target,
    cfg: &ExportConfig,
    dir: &Path,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let spec = grid_spec(cfg);
    let model_q = model.sample(params, cfg.kde_samples, derive_seed(seed, "export/model-samples"))?;
    let target_q = match target {
        Target::Empirical(x) => x.clone(),
        _ => target.sample(cfg.kde_samples, derive_seed(seed, "export/target-samples"))?,
    };
    let grids = [
        (MODEL_KDE_FILE, kde_grid(&model_q, &spec, Bandwidth::Scott)?),
        (TARGET_KDE_FILE, kde_grid(&target_q, &spec, Bandwidth::Scott)?),
        (POTENTIAL_FILE, energy_grid(model, params, spec, crate::fields::Dependence::Position)?),
        (KINETIC_FILE, energy_grid(model, params, spec, crate::fields::Dependence::Momentum)?),
    ];
    let mut out = Vec::new();
    for (name, grid) in grids {
        let path = dir.join(name);
        grid.write_csv(&path)?;
        out.push(path);
    }
    Ok(out)
}

/// Trajectories of `count` base samples under `steps` leapfrog steps of the
/// learned Hamiltonians, cycling through them as the flow does. Rows are
/// `step, q…, p…, H, g…`; `step = 0` starts a new trajectory.
pub fn trajectories_csv(
    model: &ModelDensity,
    params: &ParamStore,
    generators: &[Generator],
    count: usize,
    steps: usize,
    seed: u64,
) -> Result<String> {
    let d = model.dim();
    let flow = &model.flow;
    let hams = flow.hamiltonians();
    let mut states = vec![model.base.sample(count, derive_seed(seed, "export/trajectories"))];
    for t in 0..steps {
        let h = &hams[(t / flow.steps()) % hams.len()];
        let cur = states.last().expect("non-empty");
        let mut g = graph_for(Some(params));
        let q = g.input(cur.q.clone());
        let p = g.input(cur.p.clone());
        let (q, p) = leapfrog_step(&mut g, h, flow.dt(), q, p, Direction::Forward)?;
        states.push(PhaseBatch::new(g.value(q).clone(), g.value(p).clone())?);
    }
    // energy of the Hamiltonian driving step t (the first one at t = 0)
    let mut energies = Vec::with_capacity(states.len());
    let mut charges = Vec::with_capacity(states.len());
    for (t, s) in states.iter().enumerate() {
        let idx = if t == 0 { 0 } else { ((t - 1) / flow.steps()) % hams.len() };
        energies.push(field_values(&hams[idx], Some(params), s)?);
        let gs: Result<Vec<Vec<f64>>> = generators.iter().map(|g| field_values(g, None, s)).collect();
        charges.push(gs?);
    }
    let mut out = String::from("step");
    for prefix in ["q", "p"] {
        for i in 1..=d {
            write!(out, ",{prefix}{i}").expect("string write");
        }
    }
    out.push_str(",H");
    for k in 1..=generators.len() {
        write!(out, ",g{k}").expect("string write");
    }
    out.push('\n');
    for n in 0..count {
        for (t, s) in states.iter().enumerate() {
            write!(out, "{t}").expect("string write");
            for x in s.q.row(n).iter().chain(s.p.row(n).iter()) {
                write!(out, ",{x}").expect("string write");
            }
            write!(out, ",{}", energies[t][n]).expect("string write");
            for c in &charges[t] {
                write!(out, ",{}", c[n]).expect("string write");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_trajectories(
    model: &ModelDensity,
    params: &ParamStore,
    generators: &[Generator],
    cfg: &ExportConfig,
    path: &Path,
    seed: u64,
) -> Result<()> {
    let text = trajectories_csv(model, params, generators, cfg.trajectories, cfg.trajectory_steps, seed)?;
    write_atomic(path, text.as_bytes())
}

/// Header `q1,…,qd`, one row per sample.
pub fn samples_csv(q: &Array2<f64>) -> String {
    let mut out = (1..=q.ncols()).map(|i| format!("q{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in q.rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_samples(q: &Array2<f64>, path: &Path) -> Result<()> {
    write_atomic(path, samples_csv(q).as_bytes())
}

/// Probe at each angle over `qs`, written as `angle,joint,marginal`.
pub fn invariance_report(
    model: &ModelDensity,
    params: &ParamStore,
    angles: &[f64],
    qs: &Array2<f64>,
    seed: u64,
) -> Result<Vec<ProbeReport>> {
    let seed = derive_seed(seed, "export/invariance");
    angles
        .iter()
        .map(|&a| density_invariance_probe(model, params, a, qs, seed))
        .collect()
}

pub fn invariance_csv(reports: &[ProbeReport]) -> String {
    let mut out = String::from("angle,joint,marginal\n");
    for r in reports {
        writeln!(out, "{},{},{}", r.angle, r.joint, r.marginal).expect("string write");
    }
    out
}

pub fn write_invariance(reports: &[ProbeReport], path: &Path) -> Result<()> {
    write_atomic(path, invariance_csv(reports).as_bytes())
}

/// Serializes `value` as pretty JSON, atomically.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
