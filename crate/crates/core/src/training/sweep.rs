use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::write_atomic;
use crate::error::{Error, Result};
use crate::symmetry::Generator;

use super::config::{ConstraintConfig, ExperimentConfig};
use super::train::train;

pub const SUMMARY_FILE: &str = "summary.csv";

/// Cross product of constraint precisions, training-set sizes and seeds.
/// `κ = 0` means unconstrained; a `None` size means fresh data every step.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub kappas: Vec<f64>,
    pub data_sizes: Vec<Option<usize>>,
    pub seeds: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kappas.is_empty() {
            return Err(Error::config("kappa", "at least one κ is required"));
        }
        if let Some(k) = self.kappas.iter().find(|k| !(**k >= 0.0 && k.is_finite())) {
            return Err(Error::config("kappa", format!("κ must be finite and ≥ 0, got {k}")));
        }
        if self.data_sizes.is_empty() {
            return Err(Error::config("data_sizes", "at least one data size is required"));
        }
        if self.data_sizes.contains(&Some(0)) {
            return Err(Error::config("data_sizes", "sizes must be positive"));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        Ok(())
    }
}

/// Outcome of one training run in a sweep.
#[derive(Clone, Debug)]
pub struct SweepRun {
    pub kappa: f64,
    pub data_size: Option<usize>,
    pub seed: u64,
    pub run_dir: PathBuf,
    /// `(final train ELBO, final test ELBO)` or the failure message.
    pub result: std::result::Result<(f64, f64), String>,
}

/// Aggregate over the seeds of one `(κ, N)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub kappa: f64,
    pub data_size: Option<usize>,
    pub succeeded: usize,
    pub failed: usize,
    pub test_mean: f64,
    pub test_stderr: f64,
    pub train_mean: f64,
    pub train_stderr: f64,
    pub first_error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
    pub cells: Vec<CellSummary>,
    pub summary_path: PathBuf,
}

impl SweepOutcome {
    pub fn any_succeeded(&self) -> bool {
        self.runs.iter().any(|r| r.result.is_ok())
    }
}

/// Config for one cell: `κ = 0` drops all constraints; otherwise every
/// constraint takes `κ`, adding the planar rotation generator if the base
/// config has none.
pub fn cell_config(base: &ExperimentConfig, kappa: f64, size: Option<usize>, seed: u64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.data.train_size = size;
    if kappa == 0.0 {
        cfg.symmetry.constraints.clear();
    } else if cfg.symmetry.constraints.is_empty() {
        if cfg.synthetic_dim() != Some(2) {
            return Err(Error::config(
                "symmetry.constraints",
                "κ > 0 without configured generators needs planar synthetic data",
            ));
        }
        cfg.symmetry.constraints.push(ConstraintConfig {
            generator: Generator::so2(),
            kappa,
        });
    } else {
        for c in &mut cfg.symmetry.constraints {
            c.kappa = kappa;
        }
    }
    Ok(cfg)
}

pub fn cell_dir_name(kappa: f64, size: Option<usize>) -> String {
    match size {
        Some(n) => format!("kappa-{kappa}_n-{n}"),
        None => format!("kappa-{kappa}_n-inf"),
    }
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Runs every cell sequentially, seeds `base.seed, base.seed + 1, …`, each
/// into `root/<cell>/seed-<s>`, and writes `root/summary.csv`. Failed runs are
/// recorded rather than propagated.
pub fn sweep(base: &ExperimentConfig, spec: &SweepSpec, root: &Path) -> Result<SweepOutcome> {
    spec.validate()?;
    base.validate()?;
    std::fs::create_dir_all(root)?;
    let mut runs = Vec::new();
    let mut cells = Vec::new();
    for &size in &spec.data_sizes {
        for &kappa in &spec.kappas {
            let cell_dir = root.join(cell_dir_name(kappa, size));
            let mut cell_runs = Vec::new();
            for i in 0..spec.seeds {
                let seed = base.seed.wrapping_add(i as u64);
                let run_dir = cell_dir.join(format!("seed-{seed}"));
                let result = cell_config(base, kappa, size, seed)
                    .and_then(|cfg| train(&cfg, &run_dir))
                    .map(|o| (o.final_row().train_elbo, o.final_row().test_elbo))
                    .map_err(|e| e.to_string());
                cell_runs.push(SweepRun {
                    kappa,
                    data_size: size,
                    seed,
                    run_dir,
                    result,
                });
            }
            let ok: Vec<(f64, f64)> = cell_runs.iter().filter_map(|r| r.result.clone().ok()).collect();
            let (train_mean, train_stderr) = mean_stderr(&ok.iter().map(|x| x.0).collect::<Vec<_>>());
            let (test_mean, test_stderr) = mean_stderr(&ok.iter().map(|x| x.1).collect::<Vec<_>>());
            cells.push(CellSummary {
                kappa,
                data_size: size,
                succeeded: ok.len(),
                failed: cell_runs.len() - ok.len(),
                test_mean,
                test_stderr,
                train_mean,
                train_stderr,
                first_error: cell_runs.iter().find_map(|r| r.result.clone().err()),
            });
            runs.extend(cell_runs);
        }
    }
    let summary_path = root.join(SUMMARY_FILE);
    write_atomic(&summary_path, summary_csv(&cells).as_bytes())?;
    Ok(SweepOutcome {
        runs,
        cells,
        summary_path,
    })
}

pub fn summary_csv(cells: &[CellSummary]) -> String {
    let mut out = String::from(
        "kappa,data_size,seeds_ok,seeds_failed,test_elbo_mean,test_elbo_stderr,train_elbo_mean,train_elbo_stderr,error\n",
    );
    for c in cells {
        let size = c.data_size.map_or("inf".to_string(), |n| n.to_string());
        let err = c
            .first_error
            .as_deref()
            .map(|e| format!("\"{}\"", e.replace('"', "'").replace('\n', " ")))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{size},{},{},{},{},{},{},{err}",
            c.kappa, c.succeeded, c.failed, c.test_mean, c.test_stderr, c.train_mean, c.train_stderr
        )
        .expect("string write");
    }
    out
}
