use std::f64::consts::PI;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use super::config::DatasetKind;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream_rng};

pub const RING_RADIUS: f64 = 2.0;
pub const RING_SIGMA: f64 = 0.2;
pub const MIXTURE_SIGMA: f64 = 0.4;
pub const MIXTURE_CENTERS: [[f64; 2]; 4] = [[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]];

/// Generating distribution of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// `q = r(cos φ, sin φ)`, `r ~ N(radius, sigma²)` truncated to `r > 0`,
    /// `φ ~ U[0, 2π)`.
    Ring { radius: f64, sigma: f64 },
    /// Equal-weight isotropic Gaussian mixture.
    Mixture { centers: Vec<[f64; 2]>, sigma: f64 },
    /// Fixed samples with no known density.
    Empirical(Array2<f64>),
}

impl Target {
    pub fn ring() -> Self {
        Target::Ring {
            radius: RING_RADIUS,
            sigma: RING_SIGMA,
        }
    }

    pub fn mixture() -> Self {
        Target::Mixture {
            centers: MIXTURE_CENTERS.to_vec(),
            sigma: MIXTURE_SIGMA,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Target::Ring { .. } | Target::Mixture { .. } => 2,
            Target::Empirical(x) => x.ncols(),
        }
    }

    /// Mode centres, where the target has isolated modes.
    pub fn modes(&self) -> Option<Vec<[f64; 2]>> {
        match self {
            Target::Mixture { centers, .. } => Some(centers.clone()),
            _ => None,
        }
    }

    /// `count` positions; sample `i` uses stream `(seed, i)`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((count, self.dim()));
        match self {
            Target::Ring { radius, sigma } => {
                let radial = Normal::new(*radius, *sigma).map_err(|e| Error::contract(e.to_string()))?;
                for i in 0..count {
                    let mut rng = stream_rng(seed, i as u64);
                    let r = loop {
                        let r: f64 = radial.sample(&mut rng);
                        if r > 0.0 {
                            break r;
                        }
                    };
                    let phi = rng.random_range(0.0..2.0 * PI);
                    out[[i, 0]] = r * phi.cos();
                    out[[i, 1]] = r * phi.sin();
                }
            }
            Target::Mixture { centers, sigma } => {
                for i in 0..count {
                    let mut rng = stream_rng(seed, i as u64);
                    let c = centers[rng.random_range(0..centers.len())];
                    for j in 0..2 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        out[[i, j]] = c[j] + sigma * z;
                    }
                }
            }
            Target::Empirical(x) => {
                if x.nrows() == 0 {
                    return Err(Error::contract("empirical target has no rows"));
                }
                for i in 0..count {
                    let mut rng = stream_rng(seed, i as u64);
                    let k = rng.random_range(0..x.nrows());
                    out.row_mut(i).assign(&x.row(k));
                }
            }
        }
        Ok(out)
    }

    /// Exact log-density at `q`, when the target has one.
    pub fn log_density(&self, q: ArrayView1<'_, f64>) -> Option<f64> {
        match self {
            Target::Ring { radius, sigma } => {
                let r = q[0].hypot(q[1]);
                if r == 0.0 {
                    return Some(f64::NEG_INFINITY);
                }
                // radial normal truncated to r > 0, spread uniformly in angle
                let mass = NormalDist::new(0.0, 1.0).expect("unit normal").cdf(radius / sigma);
                let z = (r - radius) / sigma;
                Some(
                    -0.5 * z * z - 0.5 * (2.0 * PI).ln() - sigma.ln() - mass.ln()
                        - (2.0 * PI * r).ln(),
                )
            }
            Target::Mixture { centers, sigma } => {
                let logs: Vec<f64> = centers
                    .iter()
                    .map(|c| {
                        let dx = (q[0] - c[0]) / sigma;
                        let dy = (q[1] - c[1]) / sigma;
                        -0.5 * (dx * dx + dy * dy) - (2.0 * PI).ln() - 2.0 * sigma.ln()
                    })
                    .collect();
                let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logs.iter().map(|l| (l - m).exp()).sum();
                Some(m + (sum / centers.len() as f64).ln())
            }
            Target::Empirical(_) => None,
        }
    }
}

/// Training and held-out positions plus their generating distribution.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub target: Target,
    /// `None` in the infinite-data regime: batches are drawn fresh.
    pub train: Option<Array2<f64>>,
    pub test: Array2<f64>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.target.dim()
    }
}

/// Builds a dataset. Synthetic targets draw train and test sets from
/// separate seed streams; a file dataset is shuffled and split, the test
/// set taking `test_size` rows (at most half the file).
pub fn make_dataset(
    kind: &DatasetKind,
    train_size: Option<usize>,
    test_size: usize,
    seed: u64,
) -> Result<Dataset> {
    let target = match kind {
        DatasetKind::So2Ring => Target::ring(),
        DatasetKind::GaussianMixture => Target::mixture(),
        DatasetKind::File { path } => return file_dataset(path, train_size, test_size, seed),
    };
    let test = target.sample(test_size, derive_seed(seed, "data/test"))?;
    let train = match train_size {
        Some(n) => Some(target.sample(n, derive_seed(seed, "data/train"))?),
        None => None,
    };
    Ok(Dataset {
        target,
        train,
        test,
    })
}

fn file_dataset(
    path: &Path,
    train_size: Option<usize>,
    test_size: usize,
    seed: u64,
) -> Result<Dataset> {
    let rows = read_positions_csv(path)?;
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::config("dataset.path", "need at least two rows"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(derive_seed(seed, "data/split"), 0));
    let n_test = test_size.min(n / 2).max(1);
    let pick = |idx: &[usize]| Array2::from_shape_fn((idx.len(), rows.ncols()), |(i, j)| rows[[idx[i], j]]);
    let test = pick(&order[..n_test]);
    let rest = &order[n_test..];
    let n_train = train_size.unwrap_or(rest.len()).min(rest.len());
    let train = pick(&rest[..n_train]);
    Ok(Dataset {
        target: Target::Empirical(train.clone()),
        train: Some(train),
        test,
    })
}

/// Reads a numeric CSV with a header row; every column is one coordinate.
pub fn read_positions_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("dataset.path", format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::config("dataset.path", "file is empty"))?;
    let cols = header.split(',').count();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::config(
                "dataset.path",
                format!("row {} has {} fields, header has {cols}", i + 2, fields.len()),
            ));
        }
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| {
                Error::config("dataset.path", format!("row {}: `{f}` is not a number", i + 2))
            })?;
            if !v.is_finite() {
                return Err(Error::config("dataset.path", format!("row {}: non-finite value", i + 2)));
            }
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::contract(e.to_string()))
}

/// Cycles through a fixed training set in reshuffled epochs.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut s = EpochSampler {
            seed,
            epoch: 0,
            order: (0..len).collect(),
            cursor: 0,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut stream_rng(self.seed, self.epoch));
    }

    /// Next `count` row indices, crossing epoch boundaries as needed.
    pub fn next_indices(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.cursor = 0;
                self.shuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Rows of `x` at `idx`.
pub fn gather_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), x.ncols()), |(i, j)| x[[idx[i], j]])
}

/// The first `count` rows (or all of them).
pub fn head_rows(x: &Array2<f64>, count: usize) -> Array2<f64> {
    x.slice(s![..count.min(x.nrows()), ..]).to_owned()
}
