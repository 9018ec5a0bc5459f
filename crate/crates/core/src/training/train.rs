use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use crate::autodiff::{write_atomic, ParamStore};
use crate::densities::{standard_normal_rows, ModelDensity};
use crate::error::{Error, Result};
use crate::phase::PhaseBatch;
use crate::seed::derive_seed;
use crate::symmetry::{noether_drift_batch, GeneratorSet};

use super::adam::Adam;
use super::build::{build_model, BuiltModel};
use super::config::ExperimentConfig;
use super::data::{gather_rows, head_rows, make_dataset, Dataset, EpochSampler};
use super::export::{export_grids, write_json, write_trajectories, TRAJECTORY_FILE};
use super::objective::{lagrangian_with_grad, mean_elbo};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SYMMETRY_REPORT_FILE: &str = "symmetry_report.json";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

/// One row of the metrics history.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: usize,
    pub train_elbo: f64,
    pub test_elbo: f64,
    /// Running averages of the slacks `Ĉ_k`.
    pub slacks: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl MetricRow {
    pub fn csv_header(generators: usize) -> String {
        let mut h = String::from("step,train_elbo,test_elbo");
        for k in 1..=generators {
            write!(h, ",slack_{k}").expect("string write");
        }
        for k in 1..=generators {
            write!(h, ",lambda_{k}").expect("string write");
        }
        h
    }

    pub fn csv_line(&self) -> String {
        let mut l = format!("{},{},{}", self.step, self.train_elbo, self.test_elbo);
        for v in self.slacks.iter().chain(&self.lambdas) {
            write!(l, ",{v}").expect("string write");
        }
        l
    }
}

/// Loss and slacks of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub slacks: Vec<f64>,
}

/// Alternating descent on the network parameters and multiplier ascent.
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub dataset: Dataset,
    pub model: ModelDensity,
    pub store: ParamStore,
    pub generators: GeneratorSet,
    adam: Adam,
    sampler: Option<EpochSampler>,
    /// Fixed positions for the train-ELBO column.
    train_eval: Array2<f64>,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dataset = make_dataset(&cfg.dataset, cfg.data.train_size, cfg.data.test_size, cfg.seed)?;
        Self::with_dataset(cfg, dataset)
    }

    pub fn with_dataset(cfg: &ExperimentConfig, dataset: Dataset) -> Result<Self> {
        let BuiltModel {
            model,
            store,
            generators,
        } = build_model(cfg, dataset.dim())?;
        let o = &cfg.optimizer;
        let adam = Adam::new(store.len(), o.learning_rate, o.beta1, o.beta2, o.eps);
        let sampler = dataset
            .train
            .as_ref()
            .map(|t| EpochSampler::new(t.nrows(), derive_seed(cfg.seed, "data/epochs")));
        let train_eval = match &dataset.train {
            Some(t) => head_rows(t, cfg.training.eval_size),
            None => dataset
                .target
                .sample(cfg.training.eval_size, derive_seed(cfg.seed, "data/train-eval"))?,
        };
        Ok(Trainer {
            cfg: cfg.clone(),
            dataset,
            model,
            store,
            generators,
            adam,
            sampler,
            train_eval,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn train_batch(&mut self) -> Result<Array2<f64>> {
        let b = self.cfg.optimizer.batch_size;
        match (&self.dataset.train, &mut self.sampler) {
            (Some(train), Some(sampler)) => Ok(gather_rows(train, &sampler.next_indices(b))),
            _ => self
                .dataset
                .target
                .sample(b, derive_seed(self.cfg.seed, &format!("data/stream/{}", self.step))),
        }
    }

    /// One descent step on `(θ, φ)` followed by the multiplier update. On a
    /// non-finite loss or gradient, writes a diagnostic dump (when `dump` is
    /// set) and returns a numeric error.
    pub fn step(&mut self, dump: Option<&Path>) -> Result<StepStats> {
        let t = self.step;
        let q = self.train_batch()?;
        let noise = standard_normal_rows(q.nrows(), q.ncols(), derive_seed(self.cfg.seed, &format!("noise/{t}")));
        let penalty = if self.generators.is_empty() {
            None
        } else {
            Some(self.model.base.sample(
                self.cfg.symmetry.batch_size,
                derive_seed(self.cfg.seed, &format!("penalty/{t}")),
            ))
        };
        let result = lagrangian_with_grad(
            &self.model,
            &self.store,
            &self.generators,
            &q,
            &noise,
            penalty.as_ref(),
        );
        let (loss, slacks, grad) = match result {
            Ok(v) => v,
            Err(e) => return Err(self.abort(dump, &q, &noise, penalty.as_ref(), e)),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let e = Error::numeric(format!("training step {t}"), format!("loss {loss} or its gradient is not finite"));
            return Err(self.abort(dump, &q, &noise, penalty.as_ref(), e));
        }
        self.adam.step(self.store.values_mut(), &grad)?;
        if !self.generators.is_empty() {
            self.generators.observe(&slacks)?;
            self.generators.ascend(self.cfg.symmetry.ascent_rate);
        }
        self.step += 1;
        Ok(StepStats { loss, slacks })
    }

    fn abort(
        &self,
        dump: Option<&Path>,
        q: &Array2<f64>,
        noise: &Array2<f64>,
        penalty: Option<&PhaseBatch>,
        err: Error,
    ) -> Error {
        if let Some(path) = dump {
            let rows = |x: &Array2<f64>| x.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
            let report = json!({
                "step": self.step,
                "error": err.to_string(),
                "lambdas": self.generators.lambdas(),
                "batch_q": rows(q),
                "noise": rows(noise),
                "penalty_q": penalty.map(|p| rows(&p.q)),
                "penalty_p": penalty.map(|p| rows(&p.p)),
            });
            // the original error matters more than a failed dump
            let _ = write_json(&report, path);
        }
        match err {
            Error::Numeric { .. } => err,
            other => Error::numeric(format!("training step {}", self.step), other.to_string()),
        }
    }

    /// Train and test ELBO with fixed noise, plus the constraint state.
    pub fn evaluate(&self) -> Result<MetricRow> {
        let seed = derive_seed(self.cfg.seed, "eval-noise");
        let test = head_rows(&self.dataset.test, self.cfg.training.eval_size);
        Ok(MetricRow {
            step: self.step,
            train_elbo: mean_elbo(&self.model, &self.store, &self.train_eval, seed)?,
            test_elbo: mean_elbo(&self.model, &self.store, &test, seed)?,
            slacks: self
                .generators
                .constraints()
                .iter()
                .map(|c| c.slack_ema.unwrap_or(f64::NAN))
                .collect(),
            lambdas: self.generators.lambdas(),
        })
    }
}

/// What a finished run produced.
#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub history: Vec<MetricRow>,
    pub artifacts: Vec<PathBuf>,
    pub store: ParamStore,
}

impl TrainOutcome {
    pub fn final_row(&self) -> &MetricRow {
        self.history.last().expect("history has the step-0 row")
    }
}

#[derive(Serialize)]
struct SymmetryReport {
    generators: Vec<crate::symmetry::Generator>,
    kappa: Vec<f64>,
    steps: Vec<usize>,
    slack_history: Vec<Vec<f64>>,
    lambda_history: Vec<Vec<f64>>,
    satisfied: bool,
    drift: Vec<DriftStats>,
}

#[derive(Serialize)]
struct DriftStats {
    samples: usize,
    steps: usize,
    median: f64,
    max: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs a full experiment into `run_dir`: config snapshot, metrics history,
/// checkpoints, symmetry report and, for planar data, the export grids and
/// trajectories.
pub fn train(cfg: &ExperimentConfig, run_dir: &Path) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    run_trainer(&mut trainer, run_dir)
}

pub fn run_trainer(trainer: &mut Trainer, run_dir: &Path) -> Result<TrainOutcome> {
    let cfg = trainer.cfg.clone();
    fs::create_dir_all(run_dir)?;
    let mut artifacts = Vec::new();
    let config_path = run_dir.join(CONFIG_FILE);
    write_atomic(&config_path, cfg.to_json().as_bytes())?;
    artifacts.push(config_path);

    let metrics_path = run_dir.join(METRICS_FILE);
    let timing_path = run_dir.join(TIMING_FILE);
    let mut metrics = File::create(&metrics_path)?;
    let mut timing = File::create(&timing_path)?;
    writeln!(metrics, "{}", MetricRow::csv_header(trainer.generators.len()))?;
    writeln!(timing, "step,seconds")?;
    let checkpoint_path = run_dir.join(CHECKPOINT_FILE);
    let dump = run_dir.join(DIAGNOSTIC_FILE);

    let start = Instant::now();
    let mut history = Vec::new();
    let mut record = |trainer: &Trainer, history: &mut Vec<MetricRow>| -> Result<()> {
        let row = trainer.evaluate()?;
        writeln!(metrics, "{}", row.csv_line())?;
        metrics.flush()?;
        writeln!(timing, "{},{:.3}", row.step, start.elapsed().as_secs_f64())?;
        history.push(row);
        Ok(())
    };
    record(trainer, &mut history)?;
    let total = cfg.training.steps;
    while trainer.steps_done() < total {
        trainer.step(Some(&dump))?;
        let t = trainer.steps_done();
        if t.is_multiple_of(cfg.training.eval_every) || t == total {
            record(trainer, &mut history)?;
        }
        if cfg.training.checkpoint_every > 0 && t.is_multiple_of(cfg.training.checkpoint_every) && t < total {
            trainer.store.save(&checkpoint_path)?;
        }
    }
    metrics.sync_all()?;
    artifacts.push(metrics_path);
    artifacts.push(timing_path);
    trainer.store.save(&checkpoint_path)?;
    artifacts.push(checkpoint_path);

    let report_path = run_dir.join(SYMMETRY_REPORT_FILE);
    write_json(&symmetry_report(trainer, &history)?, &report_path)?;
    artifacts.push(report_path);

    if trainer.dataset.dim() == 2 {
        let gens: Vec<_> = trainer.generators.constraints().iter().map(|c| c.generator.clone()).collect();
        artifacts.extend(export_grids(
            &trainer.model,
            &trainer.store,
            &trainer.dataset.target,
            &cfg.export,
            run_dir,
            cfg.seed,
        )?);
        let traj = run_dir.join(TRAJECTORY_FILE);
        write_trajectories(&trainer.model, &trainer.store, &gens, &cfg.export, &traj, cfg.seed)?;
        artifacts.push(traj);
    }
    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        history,
        artifacts,
        store: trainer.store.clone(),
    })
}

fn symmetry_report(trainer: &Trainer, history: &[MetricRow]) -> Result<SymmetryReport> {
    let set = &trainer.generators;
    let flow = &trainer.model.flow;
    let samples = trainer.model.base.sample(100, derive_seed(trainer.cfg.seed, "report/drift"));
    let mut drift = Vec::new();
    for c in set.constraints() {
        let d = noether_drift_batch(&c.generator, flow, Some(&trainer.store), &samples, flow.total_steps())?;
        drift.push(DriftStats {
            samples: d.len(),
            steps: flow.total_steps(),
            max: d.iter().copied().fold(0.0, f64::max),
            median: median(d),
        });
    }
    Ok(SymmetryReport {
        generators: set.constraints().iter().map(|c| c.generator.clone()).collect(),
        kappa: set.constraints().iter().map(|c| c.kappa).collect(),
        steps: history.iter().map(|r| r.step).collect(),
        slack_history: history.iter().map(|r| r.slacks.clone()).collect(),
        lambda_history: history.iter().map(|r| r.lambdas.clone()).collect(),
        satisfied: set.satisfied(),
        drift,
    })
}
