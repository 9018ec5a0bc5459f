//! `hamflow` command-line driver: train, eval, sweep and sample.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use hamflow::seed::derive_seed;
use hamflow::training::{
    export_grids, invariance_report, load_model, make_dataset, sweep, train,
    write_invariance, write_json, write_samples, write_trajectories, ExperimentConfig, SweepSpec, CONFIG_FILE,
    INVARIANCE_FILE, SAMPLES_FILE, TRAJECTORY_FILE,
};
use hamflow::Error;

const OUT_ENV: &str = "HAMFLOW_OUT";
const MANIFEST_FILE: &str = "manifest.json";
const DEFAULT_KAPPAS: [f64; 4] = [0.0, 1e-3, 1e-2, 1e-1];

#[derive(Parser)]
#[command(name = "hamflow", version, about = "Symmetry-constrained Hamiltonian flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a JSON config.
    Train {
        config: PathBuf,
        /// Run directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export grids, trajectories, samples and invariance probes from a checkpoint.
    Eval {
        checkpoint: PathBuf,
        /// Config of the run; defaults to `config.json` next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the model KDE, target KDE, U(q) and K(p) grids.
        #[arg(long)]
        grid: bool,
        /// Number of model samples to write.
        #[arg(long)]
        samples: Option<usize>,
        /// Comma-separated rotation angles in radians.
        #[arg(long, value_name = "LIST")]
        invariance_angles: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the cross product of constraint precisions, data sizes and seeds.
    Sweep {
        config: PathBuf,
        /// Comma-separated κ values; 0 trains without constraints.
        #[arg(long, value_name = "LIST")]
        kappa: Option<String>,
        /// Comma-separated training-set sizes; `inf` streams fresh data.
        #[arg(long, value_name = "LIST")]
        data_sizes: Option<String>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw positions from a trained model.
    Sample {
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        /// Sampling seed; defaults to one derived from the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_sha256: String,
    seeds: Vec<u64>,
    started: String,
    finished: String,
    artifacts: Vec<String>,
    version: String,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::Json(_) => 2,
            Error::Numeric { .. } => 3,
            Error::Checkpoint(_) => 4,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out } => cmd_train(&config, out),
        Command::Eval {
            checkpoint,
            config,
            grid,
            samples,
            invariance_angles,
            out,
        } => cmd_eval(&checkpoint, config, grid, samples, invariance_angles.as_deref(), out),
        Command::Sweep {
            config,
            kappa,
            data_sizes,
            seeds,
            out,
        } => cmd_sweep(&config, kappa.as_deref(), data_sizes.as_deref(), seeds, out),
        Command::Sample {
            checkpoint,
            config,
            count,
            seed,
            out,
        } => cmd_sample(&checkpoint, config, count, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads and validates a config, returning it with the hash of its raw text.
fn read_config(path: &Path) -> Result<(ExperimentConfig, String), Failure> {
    let text = fs::read(path)
        .map_err(|e| Failure::new(2, format!("cannot read config {}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_json(&String::from_utf8_lossy(&text))?;
    cfg.validate()?;
    Ok((cfg, sha256_hex(&text)))
}

/// Output location: an explicit `--out`, else `$HAMFLOW_OUT/<name>`, else `fallback`.
fn output_dir(out: Option<PathBuf>, fallback: &Path) -> PathBuf {
    if let Some(out) = out {
        return out;
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) if !root.is_empty() => {
            let name = fallback.file_name().map(PathBuf::from).unwrap_or_default();
            PathBuf::from(root).join(name)
        }
        _ => fallback.to_path_buf(),
    }
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> CmdResult {
    write_json(manifest, &dir.join(MANIFEST_FILE))?;
    Ok(())
}

fn relative(dir: &Path, files: &[PathBuf]) -> Vec<String> {
    files
        .iter()
        .map(|f| f.strip_prefix(dir).unwrap_or(f).display().to_string())
        .collect()
}

fn cmd_train(config: &Path, out: Option<PathBuf>) -> CmdResult {
    let started = now();
    let (cfg, hash) = read_config(config)?;
    let run_dir = output_dir(out, &cfg.output_dir);
    let outcome = train(&cfg, &run_dir)?;
    let last = outcome.final_row();
    println!(
        "step {}: train ELBO {:.4}, test ELBO {:.4} -> {}",
        last.step,
        last.train_elbo,
        last.test_elbo,
        run_dir.display()
    );
    write_manifest(
        &run_dir,
        &RunManifest {
            command: "train".into(),
            config_sha256: hash,
            seeds: vec![cfg.seed],
            started,
            finished: now(),
            artifacts: relative(&run_dir, &outcome.artifacts),
            version: hamflow::VERSION.into(),
        },
    )
}

fn parse_list<T>(text: &str, flag: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(s).ok_or_else(|| Failure::new(2, format!("--{flag}: cannot parse `{s}`"))))
        .collect()
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse().ok()
}

/// Config for a checkpoint: explicit, or the snapshot next to the checkpoint.
fn checkpoint_config(checkpoint: &Path, config: Option<PathBuf>) -> Result<(ExperimentConfig, String), Failure> {
    let path = config.unwrap_or_else(|| checkpoint.with_file_name(CONFIG_FILE));
    read_config(&path)
}

fn cmd_eval(
    checkpoint: &Path,
    config: Option<PathBuf>,
    grid: bool,
    samples: Option<usize>,
    angles: Option<&str>,
    out: Option<PathBuf>,
) -> CmdResult {
    let started = now();
    let (cfg, hash) = checkpoint_config(checkpoint, config)?;
    let angles = angles
        .map(|a| parse_list(a, "invariance-angles", parse_f64))
        .transpose()?;
    let dataset = make_dataset(&cfg.dataset, cfg.data.train_size, cfg.data.test_size, cfg.seed)?;
    let d = dataset.dim();
    let built = load_model(&cfg, d, checkpoint)?;
    let default_out = checkpoint.parent().unwrap_or(Path::new(".")).join("eval");
    let dir = output_dir(out, &default_out);
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let gens: Vec<_> = built.generators.constraints().iter().map(|c| c.generator.clone()).collect();

    let mut artifacts = Vec::new();
    if grid {
        artifacts.extend(export_grids(&built.model, &built.store, &dataset.target, &cfg.export, &dir, cfg.seed)?);
    }
    let traj = dir.join(TRAJECTORY_FILE);
    write_trajectories(&built.model, &built.store, &gens, &cfg.export, &traj, cfg.seed)?;
    artifacts.push(traj);
    if let Some(n) = samples {
        let q = built.model.sample(&built.store, n, derive_seed(cfg.seed, "eval/samples"))?;
        let path = dir.join(SAMPLES_FILE);
        write_samples(&q, &path)?;
        artifacts.push(path);
    }
    if let Some(angles) = angles {
        let reports = invariance_report(&built.model, &built.store, &angles, &dataset.test, cfg.seed)?;
        let path = dir.join(INVARIANCE_FILE);
        write_invariance(&reports, &path)?;
        artifacts.push(path);
    }
    println!("wrote {} files to {}", artifacts.len(), dir.display());
    write_manifest(
        &dir,
        &RunManifest {
            command: "eval".into(),
            config_sha256: hash,
            seeds: vec![cfg.seed],
            started,
            finished: now(),
            artifacts: relative(&dir, &artifacts),
            version: hamflow::VERSION.into(),
        },
    )
}

fn cmd_sweep(
    config: &Path,
    kappa: Option<&str>,
    sizes: Option<&str>,
    seeds: usize,
    out: Option<PathBuf>,
) -> CmdResult {
    let started = now();
    let (cfg, hash) = read_config(config)?;
    let kappas = match kappa {
        Some(list) => parse_list(list, "kappa", parse_f64)?,
        None => DEFAULT_KAPPAS.to_vec(),
    };
    let data_sizes = match sizes {
        Some(list) => parse_list(list, "data-sizes", |s| match s {
            "inf" => Some(None),
            n => n.parse().ok().map(Some),
        })?,
        None => vec![cfg.data.train_size],
    };
    let spec = SweepSpec {
        kappas,
        data_sizes,
        seeds,
    };
    let root = output_dir(out, &cfg.output_dir);
    let outcome = sweep(&cfg, &spec, &root)?;
    for c in &outcome.cells {
        let size = c.data_size.map_or("inf".to_string(), |n| n.to_string());
        println!(
            "kappa {} n {size}: test ELBO {:.4} ± {:.4} ({} ok, {} failed)",
            c.kappa, c.test_mean, c.test_stderr, c.succeeded, c.failed
        );
    }
    let mut artifacts = vec![outcome.summary_path.clone()];
    artifacts.extend(
        outcome
            .runs
            .iter()
            .filter(|r| r.result.is_ok())
            .flat_map(|r| [r.run_dir.join("metrics.csv"), r.run_dir.join("checkpoint.bin")]),
    );
    let mut run_seeds: Vec<u64> = outcome.runs.iter().map(|r| r.seed).collect();
    run_seeds.sort_unstable();
    run_seeds.dedup();
    write_manifest(
        &root,
        &RunManifest {
            command: "sweep".into(),
            config_sha256: hash,
            seeds: run_seeds,
            started,
            finished: now(),
            artifacts: relative(&root, &artifacts),
            version: hamflow::VERSION.into(),
        },
    )?;
    if !outcome.any_succeeded() {
        return Err(Failure::new(5, "every sweep cell failed; see summary.csv"));
    }
    Ok(())
}

fn cmd_sample(
    checkpoint: &Path,
    config: Option<PathBuf>,
    count: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CmdResult {
    let (cfg, _) = checkpoint_config(checkpoint, config)?;
    let d = cfg.synthetic_dim().map_or_else(
        || make_dataset(&cfg.dataset, cfg.data.train_size, cfg.data.test_size, cfg.seed).map(|ds| ds.dim()),
        Ok,
    )?;
    let built = load_model(&cfg, d, checkpoint)?;
    let seed = seed.unwrap_or_else(|| derive_seed(cfg.seed, "sample"));
    let q = built.model.sample(&built.store, count, seed)?;
    let path = out.unwrap_or_else(|| {
        let dir = checkpoint.parent().unwrap_or(Path::new("."));
        output_dir(None, dir).join(SAMPLES_FILE)
    });
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    write_samples(&q, &path)?;
    println!("wrote {count} samples to {}", path.display());
    Ok(())
}
